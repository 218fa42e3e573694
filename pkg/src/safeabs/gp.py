"""Gaussian-process regression with deterministic confidence intervals.

The residual dynamics are regressed per output dimension with a shared
squared-exponential kernel.  Instead of Bayesian credible intervals, the
confidence scaling ``beta`` is derived from an assumed RKHS-norm bound on
the residual and a hard noise bound, which makes the interval

    [mu_i(x) - beta_i * sigma_i(x),  mu_i(x) + beta_i * sigma_i(x)]

a guaranteed enclosure of the true residual whenever the assumptions hold.
With no data the enclosure degenerates to the conservative global bound
``+- alpha * B_i``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError

from .errors import (
    BoundViolationError,
    EmptyIntersectionError,
    FactorizationFailureError,
)
from .tsys import Lattice

_JITTER_START = 1e-10
_JITTER_MAX = 1e-4

# Absolute slack allowed when intersecting residual intervals before we
# declare the data inconsistent with the model assumptions.
_CROSS_TOL = 1e-12


@dataclass(frozen=True)
class SeKernel:
    """Squared-exponential kernel with per-dimension length scales.

    k(x, x') = alpha^2 * exp(-1/2 * sum_j ((x_j - x'_j) / lambda_j)^2)
    """

    alpha: float
    lambdas: tuple

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        lam = tuple(float(v) for v in self.lambdas)
        if any(v <= 0 for v in lam):
            raise ValueError("length scales must be positive")
        object.__setattr__(self, "lambdas", lam)

    def matrix(self, x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
        """Cross-covariance matrix, shape ``(len(x1), len(x2))``."""
        lam = np.asarray(self.lambdas)
        d = (x1[:, None, :] - x2[None, :, :]) / lam
        return self.alpha**2 * np.exp(-0.5 * np.einsum("ijk,ijk->ij", d, d))

    @property
    def prior_var(self) -> float:
        return self.alpha**2


def continuity_constant(kernel: SeKernel, bound: float) -> float:
    """Hoelder constant L such that |d(x) - d(x')| <= L * sqrt(||x - x'||_inf)
    for every d with RKHS norm at most ``bound``.

    Uses the sup-norm of the kernel gradient, which for the SE kernel is
    alpha^2 * exp(-1/2) / min_j lambda_j.
    """
    grad_sup = kernel.alpha**2 * np.exp(-0.5) / min(kernel.lambdas)
    return float(bound * np.sqrt(2.0 * grad_sup))


def global_bound(kernel: SeKernel, bound: float) -> float:
    """Data-free sup-norm bound |d(x)| <= sqrt(k(x,x)) * B = alpha * B."""
    return float(kernel.alpha * bound)


def make_rkhs_function(kernel: SeKernel, centers, coeffs):
    """Finite kernel expansion ``x -> sum_n c_n k(x, z_n)``.

    Returns ``(fn, norm)`` where ``norm`` is the exact RKHS norm
    ``sqrt(c' G c)``.  Handy for building test systems whose norm bound is
    known rather than assumed.
    """
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    coeffs = np.asarray(coeffs, dtype=float)
    gram = kernel.matrix(centers, centers)
    norm = float(np.sqrt(coeffs @ gram @ coeffs))

    def fn(x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return kernel.matrix(x, centers) @ coeffs

    return fn, norm


class Dataset:
    """Growing regression dataset: inputs ``(T, d)``, targets ``(T, n)``."""

    def __init__(self, state_dim: int, out_dim: int):
        self.x = np.empty((0, state_dim))
        self.y = np.empty((0, out_dim))

    def __len__(self) -> int:
        return len(self.x)

    def append(self, x: np.ndarray, y: np.ndarray) -> None:
        self.x = np.vstack([self.x, np.atleast_2d(x)])
        self.y = np.vstack([self.y, np.atleast_2d(y)])


def _chol_with_jitter(k_mat: np.ndarray, noise_var: float, alpha2: float):
    """Factor ``K + (noise_var + jitter) I`` with escalating jitter.

    Returns ``(factor, effective_noise_var)``.  The jitter is folded into the
    effective noise, which keeps the confidence bound valid (it only makes
    the assumed noise level more conservative).
    """
    jitter = _JITTER_START * alpha2
    t = len(k_mat)
    while jitter <= _JITTER_MAX * alpha2 * (1 + 1e-12):
        try:
            factor = cho_factor(k_mat + (noise_var + jitter) * np.eye(t), lower=True)
            return factor, noise_var + jitter
        except LinAlgError:
            jitter *= 10.0
    raise FactorizationFailureError(
        f"Cholesky failed for T={t} even at jitter {_JITTER_MAX * alpha2:g}"
    )


class GpPosterior:
    """Per-dimension GP posterior over a shared input set.

    ``bounds`` are the assumed RKHS norm bounds B_i; ``noise`` the hard
    per-dimension noise bounds sigma_v,i (also used as regression noise).

    ``active`` optionally masks output dimensions out of the regression:
    inactive dimensions behave exactly as if no data had been seen (zero
    mean, prior variance, beta = B).  This is for dimensions whose
    evolution is partly governed by an environment guarantee rather than
    the assumed regression model, where the observed residuals would not
    be samples of a norm-bounded RKHS function.
    """

    def __init__(self, kernel: SeKernel, dataset: Dataset, noise, bounds, active=None):
        self.kernel = kernel
        self.x = dataset.x.copy()
        self.y = dataset.y.copy()
        self.t = len(dataset)
        self.out_dim = self.y.shape[1] if self.t else len(np.atleast_1d(bounds))
        self.noise = np.broadcast_to(np.asarray(noise, dtype=float), (self.out_dim,)).copy()
        self.bounds = np.broadcast_to(np.asarray(bounds, dtype=float), (self.out_dim,)).copy()
        if np.any(self.bounds <= 0):
            raise ValueError("RKHS norm bounds must be positive")
        if active is None:
            active = np.ones(self.out_dim, dtype=bool)
        self.active = np.asarray(active, dtype=bool).copy()

        self._factors = [None] * self.out_dim
        self._weights = np.zeros((self.t, self.out_dim))
        self.beta = np.empty(self.out_dim)
        if self.t == 0:
            self.beta[:] = self.bounds
            return
        k_mat = kernel.matrix(self.x, self.x)
        for i in range(self.out_dim):
            if not self.active[i]:
                self.beta[i] = self.bounds[i]
                continue
            factor, eff = _chol_with_jitter(k_mat, self.noise[i] ** 2, kernel.prior_var)
            self._factors[i] = (factor, eff)
            w = cho_solve(factor, self.y[:, i])
            self._weights[:, i] = w
            radicand = self.bounds[i] ** 2 - float(self.y[:, i] @ w) + self.t
            if radicand < 0:
                raise BoundViolationError(
                    f"confidence radicand negative in dimension {i}: {radicand:g}"
                )
            self.beta[i] = np.sqrt(radicand)

    def posterior(self, xq: np.ndarray):
        """Mean and variance at query points, each shape ``(m, out_dim)``.

        Variance is clamped at zero; a value below -1e-8 * alpha^2 signals a
        numerically broken factorization and raises.
        """
        xq = np.atleast_2d(np.asarray(xq, dtype=float))
        m = len(xq)
        if self.t == 0:
            return np.zeros((m, self.out_dim)), np.full((m, self.out_dim), self.kernel.prior_var)
        k_star = self.kernel.matrix(xq, self.x)  # (m, T)
        mu = k_star @ self._weights
        var = np.full((m, self.out_dim), self.kernel.prior_var)
        for i in range(self.out_dim):
            if not self.active[i]:
                continue
            factor, _ = self._factors[i]
            solved = cho_solve(factor, k_star.T)  # (T, m)
            var[:, i] = self.kernel.prior_var - np.einsum("mt,tm->m", k_star, solved)
        if np.any(var < -1e-8 * self.kernel.prior_var):
            raise FactorizationFailureError("posterior variance far below zero")
        return mu, np.maximum(var, 0.0)

    def conf_intervals(self, xq: np.ndarray):
        """Guaranteed residual enclosures ``(lo, hi)`` at query points."""
        mu, var = self.posterior(xq)
        rad = self.beta * np.sqrt(var)
        return mu - rad, mu + rad


class IntervalCache:
    """Running intersection of residual enclosures at every lattice point.

    Initialized to the data-free global bound; refined monotonically as
    batches arrive (upper bounds never increase, lower bounds never
    decrease).
    """

    def __init__(self, lattice: Lattice, global_bounds):
        gb = np.asarray(global_bounds, dtype=float)
        self.lattice = lattice
        self.r_lo = np.tile(-gb, (lattice.size, 1))
        self.r_hi = np.tile(gb, (lattice.size, 1))

    @property
    def out_dim(self) -> int:
        return self.r_lo.shape[1]

    def refine(self, flats: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> None:
        """Intersect the cached intervals at ``flats`` with ``[lo, hi]``.

        Raises :class:`EmptyIntersectionError` if an intersection empties
        (beyond a small numerical tolerance).
        """
        new_lo = np.maximum(self.r_lo[flats], lo)
        new_hi = np.minimum(self.r_hi[flats], hi)
        gap = new_lo - new_hi
        if np.any(gap > _CROSS_TOL):
            j = np.unravel_index(np.argmax(gap), gap.shape)
            raise EmptyIntersectionError(
                f"residual intervals disjoint at lattice offset {flats[j[0]]}, "
                f"dimension {j[1]} (gap {gap[j]:g})"
            )
        mid = 0.5 * (new_lo + new_hi)
        bad = gap > 0
        new_lo = np.where(bad, mid, new_lo)
        new_hi = np.where(bad, mid, new_hi)
        self.r_lo[flats] = new_lo
        self.r_hi[flats] = new_hi

    def center(self, flats) -> np.ndarray:
        """Midpoint estimate of the residual at lattice offsets."""
        return 0.5 * (self.r_lo[flats] + self.r_hi[flats])

    def radius(self, flats) -> np.ndarray:
        return 0.5 * (self.r_hi[flats] - self.r_lo[flats])
