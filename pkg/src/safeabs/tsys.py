"""Lattice geometry and finite state-set machinery.

A lattice discretizes a box into points that are integer multiples of a
spacing ``eta``.  Safe sets are boxes with optional affine half-space
exclusions; their lattice restriction is represented as a bitset over the
flat enumeration of lattice points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .errors import EmptyInteriorError, OutOfRangeError

# Relative slack used when snapping box bounds onto lattice indices, so that
# bounds that are exact multiples of eta up to float rounding (e.g. 1/0.2)
# land on the intended index.
_SNAP = 1e-9


def _ceil_idx(values, eta):
    return np.ceil(np.asarray(values, dtype=float) / eta - _SNAP).astype(np.int64)


def _floor_idx(values, eta):
    return np.floor(np.asarray(values, dtype=float) / eta + _SNAP).astype(np.int64)


@dataclass(frozen=True)
class Lattice:
    """Axis-aligned grid of points ``a * eta`` inside a box.

    ``lo_idx``/``hi_idx`` are the per-dimension integer index ranges; the
    point with multi-index ``a`` is ``a * eta``.
    """

    eta: float
    lower: tuple
    upper: tuple
    lo_idx: tuple = field(init=False)
    hi_idx: tuple = field(init=False)

    def __post_init__(self):
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        lower = np.asarray(self.lower, dtype=float)
        upper = np.asarray(self.upper, dtype=float)
        if lower.shape != upper.shape or lower.ndim != 1:
            raise ValueError("lower/upper must be 1-D and congruent")
        if np.any(upper < lower):
            raise ValueError("upper < lower")
        lo = _ceil_idx(lower, self.eta)
        hi = _floor_idx(upper, self.eta)
        if np.any(hi < lo):
            raise ValueError("box contains no lattice point in some dimension")
        object.__setattr__(self, "lower", tuple(lower))
        object.__setattr__(self, "upper", tuple(upper))
        object.__setattr__(self, "lo_idx", tuple(int(v) for v in lo))
        object.__setattr__(self, "hi_idx", tuple(int(v) for v in hi))

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def shape(self) -> tuple:
        return tuple(h - l + 1 for l, h in zip(self.lo_idx, self.hi_idx))

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def point(self, idx):
        """Coordinates of the lattice point with multi-index ``idx``."""
        return np.asarray(idx, dtype=float) * self.eta

    def points(self) -> np.ndarray:
        """All lattice points, shape ``(size, dim)``, row-major index order."""
        axes = [np.arange(l, h + 1) for l, h in zip(self.lo_idx, self.hi_idx)]
        mesh = np.meshgrid(*axes, indexing="ij")
        idx = np.stack([m.ravel() for m in mesh], axis=-1)
        return idx * self.eta

    def flat_of(self, idx) -> int:
        """Row-major flat offset of a multi-index."""
        idx = np.asarray(idx, dtype=np.int64)
        rel = idx - np.asarray(self.lo_idx)
        return int(np.ravel_multi_index(tuple(rel), self.shape))

    def flats_of(self, idx: np.ndarray) -> np.ndarray:
        """Vectorized :meth:`flat_of` for an ``(m, dim)`` index array."""
        rel = np.asarray(idx, dtype=np.int64) - np.asarray(self.lo_idx)
        return np.ravel_multi_index(tuple(rel.T), self.shape)

    def idx_of_flat(self, flat) -> np.ndarray:
        rel = np.unravel_index(np.asarray(flat), self.shape)
        return np.stack(rel, axis=-1).astype(np.int64) + np.asarray(self.lo_idx)

    def nearest(self, x) -> np.ndarray:
        """Multi-index of the nearest lattice point (ties round half-up).

        Raises :class:`OutOfRangeError` if any coordinate is farther than
        ``eta/2`` outside the lattice box.
        """
        x = np.asarray(x, dtype=float)
        half = self.eta / 2 + _SNAP * self.eta
        lo_pt = np.asarray(self.lo_idx) * self.eta
        hi_pt = np.asarray(self.hi_idx) * self.eta
        if np.any(x < lo_pt - half) or np.any(x > hi_pt + half):
            raise OutOfRangeError(f"point {x} is more than eta/2 outside the lattice box")
        idx = np.floor(x / self.eta + 0.5 + _SNAP).astype(np.int64)
        return np.clip(idx, self.lo_idx, self.hi_idx)


@dataclass(frozen=True)
class SafeSet:
    """Box with affine half-space exclusions ``{x : a.x <= b}`` carved out.

    Membership: inside the closed box and satisfying no exclusion.
    """

    box: tuple  # ((lo, hi), ...) per dimension
    exclusions: tuple = ()  # ((a, b), ...) with a a coefficient tuple

    def __post_init__(self):
        box = tuple((float(l), float(h)) for l, h in self.box)
        for l, h in box:
            if h < l:
                raise ValueError("safe-set box has upper < lower")
        excl = tuple((tuple(float(c) for c in a), float(b)) for a, b in self.exclusions)
        object.__setattr__(self, "box", box)
        object.__setattr__(self, "exclusions", excl)

    @property
    def dim(self) -> int:
        return len(self.box)

    def contains(self, x) -> np.ndarray:
        """Vectorized membership test for points of shape ``(..., dim)``."""
        x = np.asarray(x, dtype=float)
        lo = np.array([l for l, _ in self.box])
        hi = np.array([h for _, h in self.box])
        ok = np.all((x >= lo) & (x <= hi), axis=-1)
        for a, b in self.exclusions:
            ok &= ~(x @ np.asarray(a) <= b)
        return ok


def interior(safe: SafeSet, eps: float) -> SafeSet:
    """Shrink every box face by ``eps`` and inflate each exclusion to
    ``a.x <= b + eps * ||a||_1``.

    Raises :class:`EmptyInteriorError` if some dimension collapses.
    """
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    box = tuple((l + eps, h - eps) for l, h in safe.box)
    if any(h < l for l, h in box):
        raise EmptyInteriorError(f"interior by eps={eps} is empty")
    excl = tuple((a, b + eps * float(np.sum(np.abs(a)))) for a, b in safe.exclusions)
    return SafeSet(box, excl)


class StateSet:
    """Subset of a lattice stored as a flat boolean mask."""

    __slots__ = ("lattice", "mask")

    def __init__(self, lattice: Lattice, mask: np.ndarray | None = None):
        self.lattice = lattice
        if mask is None:
            mask = np.zeros(lattice.size, dtype=bool)
        self.mask = np.asarray(mask, dtype=bool).reshape(lattice.size).copy()

    @classmethod
    def full(cls, lattice: Lattice) -> "StateSet":
        s = cls(lattice)
        s.mask[:] = True
        return s

    def copy(self) -> "StateSet":
        return StateSet(self.lattice, self.mask)

    def __len__(self) -> int:
        return int(np.count_nonzero(self.mask))

    def __eq__(self, other) -> bool:
        return isinstance(other, StateSet) and self.lattice == other.lattice and np.array_equal(self.mask, other.mask)

    def __or__(self, other: "StateSet") -> "StateSet":
        return StateSet(self.lattice, self.mask | other.mask)

    def __and__(self, other: "StateSet") -> "StateSet":
        return StateSet(self.lattice, self.mask & other.mask)

    def __sub__(self, other: "StateSet") -> "StateSet":
        return StateSet(self.lattice, self.mask & ~other.mask)

    def issubset(self, other: "StateSet") -> bool:
        return bool(np.all(~self.mask | other.mask))

    def flats(self) -> np.ndarray:
        """Flat offsets of member points, ascending."""
        return np.flatnonzero(self.mask)

    def indices(self) -> np.ndarray:
        """Multi-indices of member points, shape ``(len, dim)``."""
        return self.lattice.idx_of_flat(self.flats())

    def points(self) -> np.ndarray:
        return self.indices() * self.lattice.eta


def lattice_points_of_set(lattice: Lattice, safe: SafeSet) -> StateSet:
    """Bitset of lattice points that belong to ``safe``."""
    return StateSet(lattice, safe.contains(lattice.points()))


@dataclass(frozen=True)
class IndexBox:
    """Axis-aligned box of lattice multi-indices, ``lo <= a <= hi``.

    Empty if any ``lo > hi``; an empty box is the canonical "no successor"
    value.
    """

    lo: tuple
    hi: tuple

    def __post_init__(self):
        object.__setattr__(self, "lo", tuple(int(v) for v in self.lo))
        object.__setattr__(self, "hi", tuple(int(v) for v in self.hi))

    @property
    def is_empty(self) -> bool:
        return any(l > h for l, h in zip(self.lo, self.hi))

    @property
    def cardinality(self) -> int:
        if self.is_empty:
            return 0
        return int(np.prod([h - l + 1 for l, h in zip(self.lo, self.hi)]))

    def contains_idx(self, idx) -> bool:
        idx = np.asarray(idx)
        return bool(np.all(idx >= self.lo) & np.all(idx <= self.hi))

    def issubbox(self, other: "IndexBox") -> bool:
        """True if every index of this box lies in ``other`` (empty box is
        a subset of everything)."""
        if self.is_empty:
            return True
        if other.is_empty:
            return False
        return bool(np.all(np.asarray(self.lo) >= other.lo) and np.all(np.asarray(self.hi) <= other.hi))

    def member_indices(self) -> np.ndarray:
        if self.is_empty:
            return np.empty((0, len(self.lo)), dtype=np.int64)
        axes = [np.arange(l, h + 1) for l, h in zip(self.lo, self.hi)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def member_flats(self, lattice: Lattice) -> np.ndarray:
        idx = self.member_indices()
        return lattice.flats_of(idx) if len(idx) else np.empty(0, dtype=np.int64)


def box_members(box: IndexBox, allowed: StateSet) -> bool:
    """True iff every lattice point of ``box`` belongs to ``allowed``.

    The empty box is vacuously contained.  Points outside the lattice range
    count as not allowed.
    """
    if box.is_empty:
        return True
    lat = allowed.lattice
    if any(l < ll or h > hh for l, h, ll, hh in zip(box.lo, box.hi, lat.lo_idx, lat.hi_idx)):
        return False
    return bool(np.all(allowed.mask[box.member_flats(lat)]))


class BoxCounter:
    """Summed-area table over a lattice mask; answers "how many set bits in
    an index box" in O(2^dim) regardless of box size."""

    def __init__(self, lattice: Lattice, mask: np.ndarray):
        self.lattice = lattice
        grid = np.asarray(mask, dtype=np.int64).reshape(lattice.shape)
        for axis in range(grid.ndim):
            grid = np.cumsum(grid, axis=axis)
        # Pad with a zero hyperplane in front of every axis so queries at the
        # lower boundary need no special-casing.
        self.table = np.pad(grid, [(1, 0)] * grid.ndim)

    def counts(self, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
        """Set-bit counts for boxes given as relative index arrays ``(m, dim)``
        (already clipped to the lattice range and nonempty)."""
        lo = np.asarray(lo, dtype=np.int64)
        hi = np.asarray(hi, dtype=np.int64)
        dim = lo.shape[-1]
        total = np.zeros(lo.shape[:-1], dtype=np.int64)
        for corner in product((0, 1), repeat=dim):
            sel = np.where(np.asarray(corner, dtype=bool), hi + 1, lo)
            sign = (-1) ** (dim - sum(corner))
            total += sign * self.table[tuple(sel[..., j] for j in range(dim))]
        return total
