"""Safety-game synthesis over symbolic models.

The winning set is the maximal fixed point of the controllable predecessor
restricted to the quantized interior of the safe set.  A state survives an
iteration if some enabled input's successor box lies entirely inside the
current set; box containment is answered with a summed-area table, so each
query costs O(2^dim) regardless of box size.
"""

from __future__ import annotations

import os
import struct
import time
from dataclasses import dataclass, field

import numpy as np

from .abstraction import SymbolicModel, _atomic_write, _read_lattice, _write_lattice
from .errors import (
    FormatError,
    NotInWinningSetError,
    OutOfRangeError,
    PrerequisiteViolatedError,
)
from .tsys import BoxCounter, Lattice, StateSet, _SNAP

_CTRL_MAGIC = b"SABC"
_CTRL_VERSION = 1


def _surviving(model: SymbolicModel, candidates: np.ndarray, target: StateSet) -> np.ndarray:
    """Boolean per candidate state: some enabled input's box is inside
    ``target``."""
    lat = model.state_lattice
    counter = BoxCounter(lat, target.mask)
    lat_lo = np.asarray(lat.lo_idx)
    ok = np.zeros(len(candidates), dtype=bool)
    for j in range(model.n_inputs):
        todo = ~ok & model.enabled[candidates, j]
        if not np.any(todo):
            continue
        idx = candidates[todo]
        blo = model.box_lo[idx, j] - lat_lo
        bhi = model.box_hi[idx, j] - lat_lo
        card = np.prod(bhi - blo + 1, axis=-1)
        ok[todo] = counter.counts(blo, bhi) == card
    return ok


def pre(model: SymbolicModel, q: StateSet) -> StateSet:
    """Controllable predecessor restricted to ``q``: states of ``q`` with
    some enabled input whose box stays inside ``q``."""
    flats = q.flats()
    out = StateSet(model.state_lattice)
    out.mask[flats[_surviving(model, flats, q)]] = True
    return out


def pre_incremental(model: SymbolicModel, q: StateSet, seed: StateSet) -> StateSet:
    """Same result as :func:`pre` when ``seed`` is already known to be
    contained in the answer (monotonicity across batches); only states in
    ``q`` minus ``seed`` are tested.

    Raises :class:`PrerequisiteViolatedError` if ``seed`` is not a subset
    of ``q``.
    """
    if not seed.issubset(q):
        raise PrerequisiteViolatedError("incremental seed is not contained in the current set")
    extra = (q - seed).flats()
    out = seed.copy()
    out.mask[extra[_surviving(model, extra, q)]] = True
    return out


@dataclass
class GameTrace:
    """Per-iteration sets and timings of one fixed-point computation."""

    sets: list  # [Q_0, Q_1, ..., Q_fix]
    iter_ms: list = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.sets) - 1

    def at(self, level: int) -> StateSet:
        """Set at iteration ``level``, saturating at the fixed point."""
        return self.sets[min(level, len(self.sets) - 1)]


@dataclass
class SafetyController:
    """Winning set plus, per winning state, the admissible-input bitmask."""

    state_lattice: Lattice
    input_lattice: Lattice
    eps: float
    winning: StateSet
    admissible: np.ndarray  # (n_pts, n_inputs) bool; zero rows off winning

    def admissible_flats(self, state_flat: int) -> np.ndarray:
        return np.flatnonzero(self.admissible[state_flat])


def safety_game(model: SymbolicModel, q0: StateSet, prev_trace: GameTrace | None = None):
    """Maximal fixed point of ``pre`` below ``q0``.

    With ``prev_trace`` (the trace of the previous batch's game, whose model
    had larger boxes), each iteration is seeded with the previous batch's
    next iterate, so only the difference set is re-tested.  The result is
    identical either way.

    Returns ``(controller, trace)``.
    """
    sets = [q0.copy()]
    iter_ms = []
    level = 0
    while True:
        t0 = time.perf_counter()
        cur = sets[-1]
        if prev_trace is not None:
            nxt = pre_incremental(model, cur, prev_trace.at(level + 1))
        else:
            nxt = pre(model, cur)
        iter_ms.append((time.perf_counter() - t0) * 1e3)
        if nxt == cur:
            break
        sets.append(nxt)
        level += 1
    winning = sets[-1]
    admissible = np.zeros_like(model.enabled)
    flats = winning.flats()
    if len(flats):
        lat = model.state_lattice
        counter = BoxCounter(lat, winning.mask)
        lat_lo = np.asarray(lat.lo_idx)
        for j in range(model.n_inputs):
            en = model.enabled[flats, j]
            if not np.any(en):
                continue
            idx = flats[en]
            blo = model.box_lo[idx, j] - lat_lo
            bhi = model.box_hi[idx, j] - lat_lo
            card = np.prod(bhi - blo + 1, axis=-1)
            inside = counter.counts(blo, bhi) == card
            admissible[idx[inside], j] = True
    ctrl = SafetyController(
        model.state_lattice, model.input_lattice, model.eps, winning, admissible
    )
    return ctrl, GameTrace(sets, iter_ms)


def refine_at(ctrl: SafetyController, x) -> np.ndarray:
    """Admissible input flat-indices at a continuous state, via the
    nearest-cell relation: the admissible inputs of the nearest lattice
    state, empty if that state is losing or ``x`` falls outside the lattice.

    The abstraction's successor slack only covers deviations up to half a
    cell, so the refinement must not borrow inputs from farther neighbors.
    Returns a sorted (possibly empty) array of input lattice offsets.
    """
    lat = ctrl.state_lattice
    x = np.asarray(x, dtype=float)
    try:
        flat = lat.flat_of(lat.nearest(x))
    except OutOfRangeError:
        return np.empty(0, dtype=np.int64)
    if not ctrl.winning.mask[flat]:
        return np.empty(0, dtype=np.int64)
    return np.flatnonzero(ctrl.admissible[flat])


def control_input(ctrl: SafetyController, state_flat: int) -> np.ndarray:
    """Admissible inputs at a lattice state; raises if the state is losing."""
    if not ctrl.winning.mask[state_flat]:
        raise NotInWinningSetError(f"state offset {state_flat} is not winning")
    return ctrl.admissible_flats(state_flat)


def save_controller(ctrl: SafetyController, path: str) -> None:
    """Serialize a controller (little-endian, versioned, atomic rename)."""

    def writer(fh):
        fh.write(_CTRL_MAGIC)
        fh.write(struct.pack("<H", _CTRL_VERSION))
        _write_lattice(fh, ctrl.state_lattice)
        _write_lattice(fh, ctrl.input_lattice)
        fh.write(struct.pack("<dQI", ctrl.eps, ctrl.state_lattice.size,
                             ctrl.input_lattice.size))
        fh.write(ctrl.winning.mask.astype("<u1").tobytes())
        fh.write(np.packbits(ctrl.admissible, axis=1).tobytes())

    _atomic_write(path, writer)


def load_controller(path: str) -> SafetyController:
    try:
        return _load_controller(path)
    except struct.error as exc:
        raise FormatError(f"truncated controller file {path}: {exc}") from exc


def _load_controller(path: str) -> SafetyController:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _CTRL_MAGIC:
            raise FormatError(f"bad controller magic {magic!r}")
        (version,) = struct.unpack("<H", fh.read(2))
        if version != _CTRL_VERSION:
            raise FormatError(f"unsupported controller version {version}")
        state_lattice = _read_lattice(fh)
        input_lattice = _read_lattice(fh)
        eps, n_pts, n_u = struct.unpack("<dQI", fh.read(20))
        if n_pts != state_lattice.size or n_u != input_lattice.size:
            raise FormatError("size header inconsistent with lattices")
        winning = np.frombuffer(fh.read(n_pts), dtype="<u1").astype(bool)
        row_bytes = (n_u + 7) // 8
        packed = np.frombuffer(fh.read(n_pts * row_bytes), dtype=np.uint8)
        if len(packed) != n_pts * row_bytes:
            raise FormatError("truncated controller file")
        admissible = np.unpackbits(packed.reshape(n_pts, row_bytes), axis=1)[:, :n_u].astype(bool)
    return SafetyController(
        state_lattice, input_lattice, float(eps),
        StateSet(state_lattice, winning), admissible,
    )
