"""Ground-truth simulators: known nominal dynamics plus hidden residual.

The plant evolves as ``x+ = f(x, u) + d(x) + v`` with ``d`` unknown to the
learner and ``v`` bounded noise, ``|v_i| <= sigma_v_i``.  Dimensions may
carry an *envelope*: a hard range the environment guarantees (e.g. the
speed band of an uncontrolled vehicle).  Envelope dimensions are clipped
into their range after every step.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import OutOfRangeError


@dataclass
class Plant:
    """Simulator with known nominal part and hidden residual dynamics.

    ``f(x, u)`` and ``d(x)`` must accept batched inputs (``(..., n)``).
    ``lipschitz_f`` holds per-dimension Lipschitz constants of ``f`` in the
    state (max-norm row bounds of the Jacobian).
    """

    name: str
    state_dim: int
    input_dim: int
    f: Callable
    d_true: Callable
    sigma_v: np.ndarray
    lipschitz_f: np.ndarray
    input_box: tuple  # ((lo, hi), ...) per input dimension
    envelope: tuple = None  # per state dim: (lo, hi) or None

    def __post_init__(self):
        self.sigma_v = np.broadcast_to(
            np.asarray(self.sigma_v, dtype=float), (self.state_dim,)
        ).copy()
        self.lipschitz_f = np.broadcast_to(
            np.asarray(self.lipschitz_f, dtype=float), (self.state_dim,)
        ).copy()
        if self.envelope is None:
            self.envelope = (None,) * self.state_dim
        self.envelope = tuple(self.envelope)

    def _check_input(self, u) -> None:
        u = np.atleast_1d(u)
        for j, (lo, hi) in enumerate(self.input_box):
            if np.any(u[..., j] < lo) or np.any(u[..., j] > hi):
                raise OutOfRangeError(f"input component {j} outside [{lo}, {hi}]")

    def clip_envelope(self, x: np.ndarray) -> np.ndarray:
        """Clip envelope dimensions of ``x`` into their guaranteed ranges."""
        x = np.array(x, dtype=float)
        for i, env in enumerate(self.envelope):
            if env is not None:
                x[..., i] = np.clip(x[..., i], env[0], env[1])
        return x

    def step(self, x, u, rng: np.random.Generator):
        """One noisy step; noise uniform on ``[-sigma_v, sigma_v]`` per
        dimension."""
        self._check_input(u)
        x = np.asarray(x, dtype=float)
        v = rng.uniform(-self.sigma_v, self.sigma_v)
        x_next = self.f(x, np.asarray(u, dtype=float)) + self.d_true(x) + v
        return self.clip_envelope(x_next)

    def training_sample(self, x, x_next, u):
        """Residual observation ``y = x+ - f(x, u)`` for regression."""
        return np.asarray(x_next, dtype=float) - self.f(
            np.asarray(x, dtype=float), np.asarray(u, dtype=float)
        )


def make_acc_plant(delta: float = 1.0) -> Plant:
    """Adaptive cruise control: lead speed, follower speed, headway.

    Nominal part integrates the follower's commanded acceleration and the
    speed difference; the hidden residual is quadratic rolling/air drag on
    both vehicles.  The lead vehicle holds its speed near the 20 m/s
    cruising point: dimension 0 carries a [19, 21] envelope, modeling a
    lead whose (unmodeled) throttle keeps it within +-1 m/s of the set
    point.  Without such a guarantee the unopposed drag term would drain
    the lead's speed out of any fixed band, leaving nothing invariant.
    """
    m1 = m2 = 1000.0
    nu1 = (40.0, 1.0, 0.2)
    nu2 = (50.0, 2.0, 0.1)

    def f(x, u):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        out = np.array(x, dtype=float, copy=True)
        out[..., 1] = x[..., 1] + delta * u[..., 0]
        out[..., 2] = x[..., 2] + delta * (x[..., 0] - x[..., 1])
        return out

    def d_true(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape)
        x1, x2 = x[..., 0], x[..., 1]
        out[..., 0] = -delta * (nu1[0] + nu1[1] * x1 + nu1[2] * x1**2) / m1
        out[..., 1] = -delta * (nu2[0] + nu2[1] * x2 + nu2[2] * x2**2) / m2
        return out

    return Plant(
        name="acc",
        state_dim=3,
        input_dim=1,
        f=f,
        d_true=d_true,
        sigma_v=np.array([delta * 0.02, 0.0, 0.0]),
        # Jacobian rows of f: (1,0,0), (0,1,0), (delta,-delta,1).
        lipschitz_f=np.array([1.0, 1.0, 1.0 + 2.0 * delta]),
        input_box=((-1.0, 1.0),),
        envelope=((19.0, 21.0), None, None),
    )


def make_toy1d_plant(kernel=None) -> Plant:
    """Scalar leaky integrator with a smooth hidden residual of known RKHS
    norm.  The nominal part drifts mildly away from the middle of the box, so the
    data-free controller holds only a central core that widens as the
    residual is learned."""
    from .gp import SeKernel, make_rkhs_function

    kernel = kernel or SeKernel(alpha=0.8, lambdas=(2.0,))
    d_fn, norm = make_rkhs_function(
        kernel, centers=[[2.0], [4.0], [6.0]], coeffs=[1.98, -2.86, 1.54]
    )

    def f(x, u):
        x = np.asarray(x, dtype=float)
        return 4.0 + 1.1 * (x - 4.0) + np.asarray(u, dtype=float)

    def d_true(x):
        x = np.asarray(x, dtype=float)
        return d_fn(x.reshape(-1, 1)).reshape(x.shape[:-1] + (1,))

    plant = Plant(
        name="toy1d",
        state_dim=1,
        input_dim=1,
        f=f,
        d_true=d_true,
        sigma_v=np.array([0.01]),
        lipschitz_f=np.array([1.1]),
        input_box=((-2.0, 2.0),),
    )
    plant.rkhs_norm = norm
    plant.d_kernel = kernel
    return plant


def make_toy2d_plant(kernel=None) -> Plant:
    """Planar leaky integrator, two inputs, smooth hidden residual per
    dimension; like the scalar system, nominally drifting away from the
    box center."""
    from .gp import SeKernel, make_rkhs_function

    kernel = kernel or SeKernel(alpha=0.8, lambdas=(4.0, 4.0))
    d1_fn, norm1 = make_rkhs_function(
        kernel, centers=[[1.5, 2.5], [5.0, 4.0], [3.0, 6.5]], coeffs=[1.82, -2.34, 1.3]
    )
    d2_fn, norm2 = make_rkhs_function(
        kernel, centers=[[2.5, 1.5], [4.5, 5.5], [6.5, 2.5]], coeffs=[-1.26, 1.68, 0.84]
    )

    def f(x, u):
        x = np.asarray(x, dtype=float)
        return 4.0 + 1.1 * (x - 4.0) + np.asarray(u, dtype=float)

    def d_true(x):
        x = np.asarray(x, dtype=float)
        flat = x.reshape(-1, 2)
        out = np.stack([d1_fn(flat), d2_fn(flat)], axis=-1)
        return out.reshape(x.shape)

    plant = Plant(
        name="toy2d",
        state_dim=2,
        input_dim=2,
        f=f,
        d_true=d_true,
        sigma_v=np.array([0.01, 0.01]),
        lipschitz_f=np.array([1.1, 1.1]),
        input_box=((-2.0, 2.0), (-2.0, 2.0)),
    )
    plant.rkhs_norm = np.array([norm1, norm2])
    plant.d_kernel = kernel
    return plant


PLANTS = {
    "acc": make_acc_plant,
    "toy1d": make_toy1d_plant,
    "toy2d": make_toy2d_plant,
}
