"""Symbolic abstraction of the learned dynamics.

Concrete states are related to their nearest lattice point, so every
concrete state sits within ``eta_x / 2`` (sup-norm) of its abstract
representative.  Every safe lattice state and quantized input then gets an
interval over-approximation of the successors:

    h_hi_i = f_i(x_q, u_q) + r_hi_i + sigma_v_i + slack_i
    h_lo_i = f_i(x_q, u_q) + r_lo_i - sigma_v_i - slack_i

with ``slack_i = Lf_i*(eta_x/2) + L_i*sqrt(eta_x/2) + eta_x/2`` covering,
in order, the nominal drift across the half-cell, the residual's Hoelder
variation across it, and re-quantization of the concrete successor onto
the lattice.  The interval is quantized to an
:class:`~safeabs.tsys.IndexBox`.  An input is *enabled* at a
state only if its box is nonempty and lies entirely inside the safe lattice
set; otherwise the input is disabled there (restricted model).

Because residual intervals only shrink across batches, boxes shrink too, so
stale transitions remain sound: the lazy update recomputes a state only once
the summed posterior-variance drop since its last recomputation exceeds a
threshold ``rho``.
"""

from __future__ import annotations

import os
import struct
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError
from .gp import IntervalCache
from .tsys import BoxCounter, IndexBox, Lattice, StateSet, _SNAP

_MODEL_MAGIC = b"SABM"
_MODEL_VERSION = 1


def slack_vector(lipschitz_f, cont_constants, eta_x: float) -> np.ndarray:
    """Per-dimension interval inflation for the nearest-cell relation of
    radius ``eta_x / 2``: nominal drift across the half-cell, residual
    variation across it, and successor re-quantization."""
    r = eta_x / 2.0
    return (
        np.asarray(lipschitz_f, dtype=float) * r
        + np.asarray(cont_constants, dtype=float) * np.sqrt(r)
        + r
    )


def successor_interval(f_val, r_lo, r_hi, sigma_v, slack, envelope=None):
    """Continuous successor enclosure ``[h_lo, h_hi]`` (vectorized over
    leading axes).  Envelope dimensions are intersected with their
    guaranteed range."""
    f_val = np.asarray(f_val, dtype=float)
    h_lo = f_val + r_lo - sigma_v - slack
    h_hi = f_val + r_hi + sigma_v + slack
    if envelope is not None:
        for i, env in enumerate(envelope):
            if env is not None:
                h_lo[..., i] = np.clip(h_lo[..., i], env[0], env[1])
                h_hi[..., i] = np.clip(h_hi[..., i], env[0], env[1])
    return h_lo, h_hi


def interval_to_box(h_lo, h_hi, eta: float):
    """Quantize continuous enclosures to integer index bounds (snap-tolerant)."""
    lo = np.ceil(np.asarray(h_lo) / eta - _SNAP).astype(np.int64)
    hi = np.floor(np.asarray(h_hi) / eta + _SNAP).astype(np.int64)
    return lo, hi


@dataclass
class UpdateLog:
    """Bookkeeping for the lazy update rule.

    ``last_batch[s]`` is the batch whose dataset produced the stored
    transitions of state ``s``; ``var_snap[s]`` the summed-per-dimension
    posterior variances at that time.
    """

    last_batch: np.ndarray
    var_snap: np.ndarray

    def copy(self) -> "UpdateLog":
        return UpdateLog(self.last_batch.copy(), self.var_snap.copy())


@dataclass
class SymbolicModel:
    """Finite transition system over a state lattice and an input lattice."""

    state_lattice: Lattice
    input_lattice: Lattice
    eps: float
    safe: StateSet
    enabled: np.ndarray  # (n_pts, n_inputs) bool
    box_lo: np.ndarray  # (n_pts, n_inputs, dim) int
    box_hi: np.ndarray
    initial_flat: int
    batch: int

    @property
    def n_inputs(self) -> int:
        return self.enabled.shape[1]

    def n_transitions(self) -> int:
        """Number of enabled (state, input) pairs."""
        return int(np.count_nonzero(self.enabled))

    def box(self, state_flat: int, input_flat: int) -> IndexBox:
        return IndexBox(
            tuple(self.box_lo[state_flat, input_flat]),
            tuple(self.box_hi[state_flat, input_flat]),
        )


def _compute_transitions(
    plant,
    state_lattice: Lattice,
    input_lattice: Lattice,
    safe_counter: BoxCounter,
    state_flats: np.ndarray,
    cache: IntervalCache,
    slack: np.ndarray,
    threads: int = 1,
):
    """Boxes and enabled flags for the given states, all inputs.

    Returns ``(enabled (m, n_u), box_lo, box_hi (m, n_u, dim))``.
    """
    dim = state_lattice.dim
    pts = state_lattice.idx_of_flat(state_flats) * state_lattice.eta
    u_pts = input_lattice.points()
    n_u = len(u_pts)
    m = len(state_flats)
    enabled = np.zeros((m, n_u), dtype=bool)
    box_lo = np.zeros((m, n_u, dim), dtype=np.int64)
    box_hi = np.full((m, n_u, dim), -1, dtype=np.int64)
    r_lo = cache.r_lo[state_flats]
    r_hi = cache.r_hi[state_flats]
    lat_lo = np.asarray(state_lattice.lo_idx)
    lat_hi = np.asarray(state_lattice.hi_idx)

    def one_input(j):
        f_val = plant.f(pts, u_pts[j])
        h_lo, h_hi = successor_interval(
            f_val, r_lo, r_hi, plant.sigma_v, slack, plant.envelope
        )
        blo, bhi = interval_to_box(h_lo, h_hi, state_lattice.eta)
        nonempty = np.all(blo <= bhi, axis=-1)
        in_range = np.all((blo >= lat_lo) & (bhi <= lat_hi), axis=-1)
        ok = nonempty & in_range
        contained = np.zeros(m, dtype=bool)
        if np.any(ok):
            card = np.prod(bhi[ok] - blo[ok] + 1, axis=-1)
            counts = safe_counter.counts(blo[ok] - lat_lo, bhi[ok] - lat_lo)
            contained[ok] = counts == card
        box_lo[:, j] = blo
        box_hi[:, j] = bhi
        enabled[:, j] = contained

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(one_input, range(n_u)))
    else:
        for j in range(n_u):
            one_input(j)
    return enabled, box_lo, box_hi


def build_full(
    plant,
    state_lattice: Lattice,
    input_lattice: Lattice,
    safe: StateSet,
    cache: IntervalCache,
    eps: float,
    cont_constants,
    initial_flat: int,
    batch: int,
    var_now: np.ndarray | None = None,
    threads: int = 1,
):
    """Recompute every safe state's transitions from the current cache.

    Returns ``(model, log)``; ``var_now`` (posterior variances per state and
    dimension) seeds the update log, defaulting to the prior variance.
    """
    n_pts = state_lattice.size
    dim = state_lattice.dim
    n_u = input_lattice.size
    slack = slack_vector(plant.lipschitz_f, cont_constants, state_lattice.eta)
    counter = BoxCounter(state_lattice, safe.mask)
    flats = safe.flats()
    enabled = np.zeros((n_pts, n_u), dtype=bool)
    box_lo = np.zeros((n_pts, n_u, dim), dtype=np.int64)
    box_hi = np.full((n_pts, n_u, dim), -1, dtype=np.int64)
    en, blo, bhi = _compute_transitions(
        plant, state_lattice, input_lattice, counter, flats, cache, slack, threads
    )
    enabled[flats] = en
    box_lo[flats] = blo
    box_hi[flats] = bhi
    model = SymbolicModel(
        state_lattice, input_lattice, eps, safe.copy(), enabled, box_lo, box_hi,
        initial_flat, batch,
    )
    if var_now is None:
        var_now = np.full((n_pts, cache.out_dim), np.nan)
    log = UpdateLog(np.full(n_pts, batch, dtype=np.int64), np.asarray(var_now, dtype=float).copy())
    return model, log


def lazy_update(
    plant,
    prev_model: SymbolicModel,
    prev_log: UpdateLog,
    cache: IntervalCache,
    var_now: np.ndarray,
    rho: float,
    batch: int,
    cont_constants,
    threads: int = 1,
):
    """Recompute transitions only where information gain since the state's
    last recomputation exceeds ``rho``; all other states keep their stored
    transitions verbatim.

    Returns ``(model, log, n_recomputed)``.
    """
    lat = prev_model.state_lattice
    safe = prev_model.safe
    slack = slack_vector(plant.lipschitz_f, cont_constants, lat.eta)
    flats = safe.flats()
    err = np.sum(prev_log.var_snap[flats] - var_now[flats], axis=1)
    stale = flats[err > rho]
    enabled = prev_model.enabled.copy()
    box_lo = prev_model.box_lo.copy()
    box_hi = prev_model.box_hi.copy()
    log = prev_log.copy()
    if len(stale):
        counter = BoxCounter(lat, safe.mask)
        en, blo, bhi = _compute_transitions(
            plant, lat, prev_model.input_lattice, counter, stale, cache, slack, threads
        )
        enabled[stale] = en
        box_lo[stale] = blo
        box_hi[stale] = bhi
        log.last_batch[stale] = batch
        log.var_snap[stale] = var_now[stale]
    model = SymbolicModel(
        lat, prev_model.input_lattice, prev_model.eps, safe.copy(),
        enabled, box_lo, box_hi, prev_model.initial_flat, batch,
    )
    return model, log, len(stale)


# ---------------------------------------------------------------------------
# Finite approximate simulation-relation checking
# ---------------------------------------------------------------------------


@dataclass
class FiniteSystem:
    """Explicit finite transition system with metric state labels."""

    points: np.ndarray  # (n, d)
    initial: int
    n_inputs: int
    successors: dict  # (state, input) -> int array of successor states

    def enabled_inputs(self, state: int):
        return [u for u in range(self.n_inputs) if (state, u) in self.successors]


def finite_system_of(model: SymbolicModel) -> FiniteSystem:
    """Enumerate a symbolic model into an explicit finite system (safe
    states only)."""
    lat = model.state_lattice
    flats = model.safe.flats()
    remap = -np.ones(lat.size, dtype=np.int64)
    remap[flats] = np.arange(len(flats))
    points = lat.idx_of_flat(flats) * lat.eta
    succ = {}
    for s, flat in enumerate(flats):
        for u in np.flatnonzero(model.enabled[flat]):
            ibox = model.box(flat, u)
            ids = remap[ibox.member_flats(lat)]
            succ[(s, int(u))] = ids
    init = int(remap[model.initial_flat])
    return FiniteSystem(points, init, model.input_lattice.size, succ)


def check_asr_finite(abstract: FiniteSystem, concrete: FiniteSystem, eps: float, pairs=None):
    """Check the approximate (alternating) simulation relation of precision
    ``eps`` between two explicit finite systems.

    ``pairs`` is the candidate relation as an iterable of ``(i_abs, i_conc)``
    index pairs; by default all pairs within ``eps`` in the max norm.
    Checks: the initials are related, every pair is within ``eps``, and for
    every related pair and abstract-enabled input there is a concrete input
    whose successors are all matched (within the relation) by some abstract
    successor.

    Returns ``(ok, counterexample)`` where the counterexample names the
    failing condition.
    """
    if pairs is None:
        dists = np.max(
            np.abs(abstract.points[:, None, :] - concrete.points[None, :, :]), axis=-1
        )
        ia, ic = np.nonzero(dists <= eps + 1e-12)
        pairs = list(zip(ia.tolist(), ic.tolist()))
    relation = set(pairs)
    if (abstract.initial, concrete.initial) not in relation:
        return False, {"condition": "initial", "pair": (abstract.initial, concrete.initial)}
    for a, c in relation:
        if np.max(np.abs(abstract.points[a] - concrete.points[c])) > eps + 1e-12:
            return False, {"condition": "distance", "pair": (a, c)}
    # Successor-set condition.
    rel_by_abs = {}
    for a, c in relation:
        rel_by_abs.setdefault(a, set()).add(c)
    for a, c in relation:
        for ua in abstract.enabled_inputs(a):
            g_abs = abstract.successors[(a, ua)]
            matched = set()
            for ap in g_abs:
                matched |= rel_by_abs.get(int(ap), set())
            found = False
            for uc in concrete.enabled_inputs(c):
                if all(int(cp) in matched for cp in concrete.successors[(c, uc)]):
                    found = True
                    break
            if not found:
                return False, {"condition": "successor", "pair": (a, c), "input": ua}
    return True, None


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def _write_lattice(fh, lat: Lattice) -> None:
    fh.write(struct.pack("<Id", lat.dim, lat.eta))
    fh.write(struct.pack(f"<{lat.dim}d", *lat.lower))
    fh.write(struct.pack(f"<{lat.dim}d", *lat.upper))


def _read_lattice(fh) -> Lattice:
    dim, eta = struct.unpack("<Id", fh.read(12))
    lower = struct.unpack(f"<{dim}d", fh.read(8 * dim))
    upper = struct.unpack(f"<{dim}d", fh.read(8 * dim))
    return Lattice(eta, lower, upper)


def _atomic_write(path: str, writer) -> None:
    """Write via a sibling temp file and rename on success."""
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            writer(fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_model(model: SymbolicModel, path: str) -> None:
    """Serialize a model (little-endian, versioned, atomic rename)."""

    def writer(fh):
        fh.write(_MODEL_MAGIC)
        fh.write(struct.pack("<H", _MODEL_VERSION))
        _write_lattice(fh, model.state_lattice)
        _write_lattice(fh, model.input_lattice)
        fh.write(struct.pack("<dqQI", model.eps, model.initial_flat,
                             model.state_lattice.size, model.input_lattice.size))
        fh.write(struct.pack("<i", model.batch))
        fh.write(model.safe.mask.astype("<u1").tobytes())
        fh.write(model.enabled.astype("<u1").tobytes())
        fh.write(model.box_lo.astype("<i4").tobytes())
        fh.write(model.box_hi.astype("<i4").tobytes())

    _atomic_write(path, writer)


def load_model(path: str) -> SymbolicModel:
    try:
        return _load_model(path)
    except struct.error as exc:
        raise FormatError(f"truncated model file {path}: {exc}") from exc


def _load_model(path: str) -> SymbolicModel:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MODEL_MAGIC:
            raise FormatError(f"bad model magic {magic!r}")
        (version,) = struct.unpack("<H", fh.read(2))
        if version != _MODEL_VERSION:
            raise FormatError(f"unsupported model version {version}")
        state_lattice = _read_lattice(fh)
        input_lattice = _read_lattice(fh)
        eps, initial_flat, n_pts, n_u = struct.unpack("<dqQI", fh.read(28))
        (batch,) = struct.unpack("<i", fh.read(4))
        if n_pts != state_lattice.size or n_u != input_lattice.size:
            raise FormatError("size header inconsistent with lattices")
        dim = state_lattice.dim
        safe_mask = np.frombuffer(fh.read(n_pts), dtype="<u1").astype(bool)
        enabled = np.frombuffer(fh.read(n_pts * n_u), dtype="<u1").astype(bool)
        box_lo = np.frombuffer(fh.read(4 * n_pts * n_u * dim), dtype="<i4").astype(np.int64)
        box_hi = np.frombuffer(fh.read(4 * n_pts * n_u * dim), dtype="<i4").astype(np.int64)
        if len(box_hi) != n_pts * n_u * dim:
            raise FormatError("truncated model file")
    return SymbolicModel(
        state_lattice,
        input_lattice,
        eps,
        StateSet(state_lattice, safe_mask),
        enabled.reshape(n_pts, n_u),
        box_lo.reshape(n_pts, n_u, dim),
        box_hi.reshape(n_pts, n_u, dim),
        int(initial_flat),
        int(batch),
    )
