"""Closed-loop safe exploration and the batch learning loop.

One run alternates: explore for ``t_exp`` steps under the current safety
controller, refit the residual regression on all data, tighten the residual
interval cache, rebuild (fully or lazily) the symbolic model, and re-solve
the safety game.  The loop stops when the winning set stops growing or the
batch budget is exhausted.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import abstraction, synthesis
from .errors import (
    ConfigError,
    InitialSetInfeasibleError,
    NotInWinningSetError,
    SafetyViolationError,
)
from .gp import Dataset, GpPosterior, IntervalCache, SeKernel, continuity_constant, global_bound
from .plant import PLANTS
from .tsys import Lattice, SafeSet, StateSet, interior, lattice_points_of_set

_SWEEP_CHUNK = 4096


@dataclass
class RunConfig:
    """Everything a run needs; built by the benchmark helpers or loaded
    from a config file."""

    system: str
    seed: int = 0
    eta_x: float = 0.5
    eta_u: float = 0.5
    eps: float = 0.5
    t_exp: int = 40
    rho: float = 0.05
    lazy: bool = False
    incremental_pre: bool = False
    max_batches: int = 50
    threads: int = 1
    alpha: float = 1.0
    lambdas: tuple = (1.0,)
    bounds: tuple = (1.0,)
    state_box: tuple = ((0.0, 1.0),)
    exclusions: tuple = ()
    strict_box: tuple = None  # trajectory-verification box; defaults to state_box
    initial: tuple = (0.0,)
    keep_models: bool = True

    def __post_init__(self):
        if self.strict_box is None:
            self.strict_box = self.state_box

    def validate(self) -> None:
        if self.system not in PLANTS:
            raise ConfigError(f"unknown system {self.system!r}")
        plant = PLANTS[self.system]()
        n = plant.state_dim
        if self.eta_x <= 0 or self.eta_u <= 0:
            raise ConfigError("lattice spacings must be positive")
        if self.eps < self.eta_x:
            raise ConfigError(f"eps ({self.eps}) must be at least eta_x ({self.eta_x})")
        if self.t_exp < 1:
            raise ConfigError("t_exp must be at least 1")
        if self.max_batches < 1:
            raise ConfigError("max_batches must be at least 1")
        if self.threads < 1:
            raise ConfigError("threads must be at least 1")
        if self.alpha <= 0:
            raise ConfigError("kernel amplitude must be positive")
        if len(self.lambdas) != n:
            raise ConfigError(f"need {n} length scales, got {len(self.lambdas)}")
        if any(l <= 0 for l in self.lambdas):
            raise ConfigError("length scales must be positive")
        if len(self.bounds) != n or any(b <= 0 for b in self.bounds):
            raise ConfigError(f"need {n} positive norm bounds")
        if len(self.state_box) != n or len(self.initial) != n:
            raise ConfigError("state box / initial state dimension mismatch")
        strict = SafeSet(self.strict_box, self.exclusions)
        if not strict.contains(np.asarray(self.initial, dtype=float)):
            raise ConfigError("initial state is outside the safe set")


@dataclass
class BatchRecord:
    n: int
    t_n: int
    winning: int
    transitions: int
    t_abstract_ms: float
    t_game_ms: float
    recomputed: int | None = None  # states recomputed by the lazy update


@dataclass
class ExplorationRun:
    config: RunConfig
    records: list
    trajectory_t: np.ndarray
    trajectory_x: np.ndarray
    trajectory_u: np.ndarray
    trajectory_y: np.ndarray
    termination: str
    models: list
    winning_sets: list
    controller: synthesis.SafetyController
    model: abstraction.SymbolicModel
    cache: IntervalCache
    dataset: Dataset
    state_lattice: Lattice
    input_lattice: Lattice
    safe_states: StateSet
    q0: StateSet


class _Setup:
    """Derived objects shared by the run loop and by tests."""

    def __init__(self, config: RunConfig):
        config.validate()
        self.config = config
        self.plant = PLANTS[config.system]()
        self.kernel = SeKernel(config.alpha, tuple(config.lambdas))
        self.bounds = np.asarray(config.bounds, dtype=float)
        self.cont = np.array([continuity_constant(self.kernel, b) for b in self.bounds])
        self.global_bounds = np.array([global_bound(self.kernel, b) for b in self.bounds])
        lo = [b[0] for b in config.state_box]
        hi = [b[1] for b in config.state_box]
        self.state_lattice = Lattice(config.eta_x, lo, hi)
        self.input_lattice = Lattice(
            config.eta_u,
            [b[0] for b in self.plant.input_box],
            [b[1] for b in self.plant.input_box],
        )
        self.input_points = self.input_lattice.points()
        self.safe_set = SafeSet(config.state_box, config.exclusions)
        self.strict_set = SafeSet(config.strict_box, config.exclusions)
        self.safe_states = lattice_points_of_set(self.state_lattice, self.safe_set)
        # Winning candidates: quantized eps-interior of the safe set, so that
        # every concrete state within eps of a winning lattice state is safe.
        self.q0 = lattice_points_of_set(self.state_lattice, interior(self.safe_set, config.eps))
        self.q0.mask &= self.safe_states.mask
        self.initial = np.asarray(config.initial, dtype=float)
        self.initial_flat = self.state_lattice.flat_of(self.state_lattice.nearest(self.initial))
        # Envelope dimensions evolve partly through the environment's own
        # feedback (e.g. the lead vehicle's throttle holding its speed band),
        # so their observed residuals are not the norm-bounded function the
        # regression assumes; keep them at the data-free global bound.
        self.learn_dims = np.array(
            [env is None for env in self.plant.envelope], dtype=bool
        )

    def sweep_posterior(self, gp: GpPosterior):
        """Posterior mean/variance at every safe lattice state; NaN rows
        elsewhere."""
        n = self.state_lattice.size
        mu = np.full((n, self.plant.state_dim), np.nan)
        var = np.full((n, self.plant.state_dim), np.nan)
        flats = self.safe_states.flats()
        pts = self.state_lattice.idx_of_flat(flats) * self.state_lattice.eta
        for start in range(0, len(flats), _SWEEP_CHUNK):
            sl = slice(start, start + _SWEEP_CHUNK)
            m, v = gp.posterior(pts[sl])
            mu[flats[sl]] = m
            var[flats[sl]] = v
        return mu, var

    def refine_cache(self, cache: IntervalCache, gp: GpPosterior):
        """Intersect the cache with the current confidence enclosures at all
        safe states; returns the variance sweep for the lazy-update log."""
        mu, var = self.sweep_posterior(gp)
        flats = self.safe_states.flats()
        rad = gp.beta * np.sqrt(var[flats])
        cache.refine(flats, mu[flats] - rad, mu[flats] + rad)
        return var


def select_input(setup: _Setup, ctrl, cache, gp, x, batch: int, rng: np.random.Generator):
    """Exploration input at continuous state ``x``.

    Batch 0 picks uniformly from the refined admissible set; later batches
    pick the admissible input whose predicted successor has the largest
    summed posterior variance (ties to the lowest input index).
    """
    cand = synthesis.refine_at(ctrl, x)
    if not len(cand):
        raise NotInWinningSetError(f"no admissible input at state {x}")
    if batch == 0:
        return int(cand[rng.integers(len(cand))])
    flat = setup.state_lattice.flat_of(setup.state_lattice.nearest(x))
    d_hat = cache.center(flat)
    u_vals = setup.input_points[cand]
    x_hat = setup.plant.f(np.broadcast_to(x, (len(cand), len(x))), u_vals) + d_hat
    _, var = gp.posterior(x_hat)
    scores = var.sum(axis=1)
    return int(cand[int(np.argmax(scores))])


def safe_explore(setup: _Setup, ctrl, cache, gp, x0, batch: int, t_start: int,
                 rng: np.random.Generator, dataset: Dataset, traj: dict):
    """Run ``t_exp`` steps under the refined controller, recording residual
    observations.  Raises :class:`SafetyViolationError` if the plant ever
    leaves the safe set."""
    plant = setup.plant
    x = np.asarray(x0, dtype=float)
    for t in range(t_start, t_start + setup.config.t_exp):
        u_flat = select_input(setup, ctrl, cache, gp, x, batch, rng)
        u = setup.input_points[u_flat]
        x_next = plant.step(x, u, rng)
        if not setup.strict_set.contains(x_next):
            raise SafetyViolationError(f"state {x_next} left the safe set at step {t}")
        y = plant.training_sample(x, x_next, u)
        dataset.append(x, y)
        traj["t"].append(t)
        traj["x"].append(x.copy())
        traj["u"].append(u.copy())
        traj["y"].append(np.asarray(y, dtype=float).copy())
        x = x_next
    return x


def run(config: RunConfig) -> ExplorationRun:
    """Full learning loop (conservative batch 0, then explore/refit/resolve).

    Raises :class:`InitialSetInfeasibleError` if the initial state has no
    admissible input under the batch-0 controller.
    """
    setup = _Setup(config)
    rng = np.random.default_rng(config.seed)
    cache = IntervalCache(setup.state_lattice, setup.global_bounds)
    dataset = Dataset(setup.plant.state_dim, setup.plant.state_dim)
    gp = GpPosterior(setup.kernel, dataset, setup.plant.sigma_v, setup.bounds,
                     active=setup.learn_dims)

    t0 = time.perf_counter()
    model, log = abstraction.build_full(
        setup.plant, setup.state_lattice, setup.input_lattice, setup.safe_states,
        cache, config.eps, setup.cont, setup.initial_flat, batch=0,
        var_now=np.full((setup.state_lattice.size, setup.plant.state_dim),
                        setup.kernel.prior_var),
        threads=config.threads,
    )
    t_abs = (time.perf_counter() - t0) * 1e3
    t0 = time.perf_counter()
    ctrl, trace = synthesis.safety_game(model, setup.q0)
    t_game = (time.perf_counter() - t0) * 1e3

    records = [BatchRecord(0, 0, len(ctrl.winning), model.n_transitions(), t_abs, t_game)]
    models = [model] if config.keep_models else []
    winning_sets = [ctrl.winning.copy()]
    if not len(synthesis.refine_at(ctrl, setup.initial)):
        raise InitialSetInfeasibleError(
            "initial state has no admissible input under the conservative controller"
        )

    traj = {"t": [], "x": [], "u": [], "y": []}
    x = setup.initial.copy()
    termination = "max_batches"
    for n in range(1, config.max_batches + 1):
        x = safe_explore(setup, ctrl, cache, gp, x, n - 1, (n - 1) * config.t_exp,
                         rng, dataset, traj)
        gp = GpPosterior(setup.kernel, dataset, setup.plant.sigma_v, setup.bounds,
                     active=setup.learn_dims)
        var = setup.refine_cache(cache, gp)

        t0 = time.perf_counter()
        recomputed = None
        if config.lazy and n >= 2:
            model, log, recomputed = abstraction.lazy_update(
                setup.plant, model, log, cache, var, config.rho, n, setup.cont,
                threads=config.threads,
            )
        else:
            model, log = abstraction.build_full(
                setup.plant, setup.state_lattice, setup.input_lattice,
                setup.safe_states, cache, config.eps, setup.cont,
                setup.initial_flat, batch=n, var_now=var, threads=config.threads,
            )
        t_abs = (time.perf_counter() - t0) * 1e3

        t0 = time.perf_counter()
        prev = trace if config.incremental_pre else None
        ctrl, trace = synthesis.safety_game(model, setup.q0, prev_trace=prev)
        t_game = (time.perf_counter() - t0) * 1e3

        records.append(BatchRecord(n, len(dataset), len(ctrl.winning),
                                   model.n_transitions(), t_abs, t_game, recomputed))
        if config.keep_models:
            models.append(model)
        winning_sets.append(ctrl.winning.copy())
        if winning_sets[-1] == winning_sets[-2]:
            termination = "converged"
            break

    return ExplorationRun(
        config=config,
        records=records,
        trajectory_t=np.asarray(traj["t"], dtype=int),
        trajectory_x=np.asarray(traj["x"], dtype=float).reshape(len(traj["t"]), -1),
        trajectory_u=np.asarray(traj["u"], dtype=float).reshape(len(traj["t"]), -1),
        trajectory_y=np.asarray(traj["y"], dtype=float).reshape(len(traj["t"]), -1),
        termination=termination,
        models=models,
        winning_sets=winning_sets,
        controller=ctrl,
        model=model,
        cache=cache,
        dataset=dataset,
        state_lattice=setup.state_lattice,
        input_lattice=setup.input_lattice,
        safe_states=setup.safe_states,
        q0=setup.q0,
    )
