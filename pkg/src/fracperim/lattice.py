"""Discrete geometry substrate: lattices, indicator sets, balls, set algebra.

A Lattice is a finite axis-aligned window of cubic cells of side h in
dimension N (1, 2 or 3).  A GridSet is a finite union of whole cells,
stored as integer cell coordinates.  Everything downstream (perimeter,
curvature, minimization) operates on these two types.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Lattice",
    "GridSet",
    "Ball",
    "volume",
    "rasterize_ball",
    "symdiff_volume",
    "best_translate_asymmetry",
    "tail_mass_profile",
]


@dataclass(frozen=True)
class Lattice:
    """Computational window: N-dimensional grid of cubic cells.

    The cell with integer coordinates k occupies the box
    origin + [k*h, (k+1)*h] componentwise; its center is
    origin + (k + 1/2)*h.
    """

    dim: int
    h: float
    extents: tuple[int, ...]
    origin: tuple[float, ...] = None  # type: ignore[assignment]

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise ValueError(f"dim must be 1, 2 or 3, got {self.dim}")
        if not self.h > 0:
            raise ValueError("cell size h must be positive")
        if len(self.extents) != self.dim or any(n < 1 for n in self.extents):
            raise ValueError(f"extents must be {self.dim} positive integers")
        if self.origin is None:
            object.__setattr__(self, "origin", (0.0,) * self.dim)
        elif len(self.origin) != self.dim:
            raise ValueError("origin must have one coordinate per dimension")
        object.__setattr__(self, "extents", tuple(int(n) for n in self.extents))
        object.__setattr__(self, "origin", tuple(float(x) for x in self.origin))

    @property
    def cell_count(self) -> int:
        return int(np.prod(self.extents))

    @property
    def cell_volume(self) -> float:
        return self.h ** self.dim

    @property
    def diameter(self) -> float:
        """Physical diameter of the window (corner to corner)."""
        return float(self.h * np.sqrt(sum(n ** 2 for n in self.extents)))

    def centers(self, cells: np.ndarray) -> np.ndarray:
        """Physical centers of the given (k, dim) integer cell array."""
        cells = np.asarray(cells, dtype=np.int64).reshape(-1, self.dim)
        return np.asarray(self.origin) + (cells + 0.5) * self.h

    def all_cells(self) -> np.ndarray:
        """All cell coordinates in lexicographic (C) order, shape (M, dim)."""
        grids = np.meshgrid(*(np.arange(n) for n in self.extents), indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=-1).astype(np.int64)

    def contains_cells(self, cells: np.ndarray) -> np.ndarray:
        cells = np.asarray(cells, dtype=np.int64).reshape(-1, self.dim)
        ok = np.ones(len(cells), dtype=bool)
        for a in range(self.dim):
            ok &= (cells[:, a] >= 0) & (cells[:, a] < self.extents[a])
        return ok

    def flat_index(self, cells: np.ndarray) -> np.ndarray:
        """Row-major linear index of cell coordinates."""
        cells = np.asarray(cells, dtype=np.int64).reshape(-1, self.dim)
        return np.ravel_multi_index(tuple(cells.T), self.extents)

    def from_flat(self, idx: np.ndarray) -> np.ndarray:
        return np.stack(np.unravel_index(np.asarray(idx, dtype=np.int64), self.extents), axis=-1)


@dataclass(frozen=True)
class Ball:
    """Euclidean ball with physical center and radius."""

    center: tuple[float, ...]
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("ball radius must be positive")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))


class GridSet:
    """Finite subset of lattice cells representing a discretized set.

    Members are stored as a sorted (K, dim) int64 array plus a boolean
    mask over the window for O(1) membership tests.  The cached volume
    is exactly h^N times the member count.
    """

    __slots__ = ("lattice", "members", "mask", "cached_volume")

    def __init__(self, lattice: Lattice, members: np.ndarray | list | set):
        self.lattice = lattice
        if isinstance(members, np.ndarray):
            arr = members.astype(np.int64).reshape(-1, lattice.dim)
        else:
            arr = np.asarray([tuple(int(c) for c in np.atleast_1d(m)) for m in members], dtype=np.int64)
            arr = arr.reshape(-1, lattice.dim)
        if len(arr):
            # lexicographic sort, drop duplicates
            order = np.lexsort(tuple(arr[:, a] for a in range(lattice.dim - 1, -1, -1)))
            arr = arr[order]
            keep = np.ones(len(arr), dtype=bool)
            keep[1:] = np.any(arr[1:] != arr[:-1], axis=1)
            arr = arr[keep]
        if len(arr) and not lattice.contains_cells(arr).all():
            raise ValueError("members outside lattice extents")
        self.members = arr
        mask = np.zeros(lattice.extents, dtype=bool)
        if len(arr):
            mask[tuple(arr.T)] = True
        self.mask = mask
        self.cached_volume = len(arr) * lattice.cell_volume

    @classmethod
    def from_mask(cls, lattice: Lattice, mask: np.ndarray) -> "GridSet":
        cells = np.argwhere(np.asarray(mask, dtype=bool))
        return cls(lattice, cells.astype(np.int64))

    @classmethod
    def empty(cls, lattice: Lattice) -> "GridSet":
        return cls(lattice, np.empty((0, lattice.dim), dtype=np.int64))

    @classmethod
    def full(cls, lattice: Lattice) -> "GridSet":
        return cls(lattice, lattice.all_cells())

    def __len__(self) -> int:
        return len(self.members)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, GridSet)
            and self.lattice == other.lattice
            and self.members.shape == other.members.shape
            and bool(np.all(self.members == other.members))
        )

    def __hash__(self):
        return hash((self.lattice, self.members.tobytes()))

    def centers(self) -> np.ndarray:
        return self.lattice.centers(self.members)

    def complement(self) -> "GridSet":
        return GridSet.from_mask(self.lattice, ~self.mask)

    def union(self, other: "GridSet") -> "GridSet":
        self._check_same_lattice(other)
        return GridSet.from_mask(self.lattice, self.mask | other.mask)

    def intersection(self, other: "GridSet") -> "GridSet":
        self._check_same_lattice(other)
        return GridSet.from_mask(self.lattice, self.mask & other.mask)

    def difference(self, other: "GridSet") -> "GridSet":
        self._check_same_lattice(other)
        return GridSet.from_mask(self.lattice, self.mask & ~other.mask)

    def _check_same_lattice(self, other: "GridSet"):
        if self.lattice != other.lattice:
            raise ValueError("grid sets live on different lattices")

    # -- serialization ----------------------------------------------------

    def to_json_dict(self) -> dict:
        return {
            "dim": self.lattice.dim,
            "h": self.lattice.h,
            "extents": list(self.lattice.extents),
            "origin": list(self.lattice.origin),
            "members": [int(i) for i in self.lattice.flat_index(self.members)] if len(self) else [],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict())

    @classmethod
    def from_json(cls, text: str) -> "GridSet":
        d = json.loads(text)
        lat = Lattice(d["dim"], d["h"], tuple(d["extents"]), tuple(d["origin"]))
        members = lat.from_flat(np.asarray(d["members"], dtype=np.int64)) if d["members"] else np.empty((0, lat.dim), dtype=np.int64)
        return cls(lat, members)

    def to_pbm(self) -> str:
        """Plain-text P1 portable bitmap; N=2 only.

        Row r of the bitmap is the row of cells with second coordinate
        extents[1]-1-r (image convention: top row = highest y), columns
        follow the first coordinate.  Members are written as 1.
        """
        if self.lattice.dim != 2:
            raise ValueError("P1 raster is defined for N=2 only")
        nx, ny = self.lattice.extents
        lines = [f"P1", f"{nx} {ny}"]
        for r in range(ny):
            row = self.mask[:, ny - 1 - r].astype(int)
            lines.append(" ".join(str(v) for v in row))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_pbm(cls, text: str, h: float = 1.0, origin: tuple[float, float] = (0.0, 0.0)) -> "GridSet":
        toks = [t for t in text.split() if not t.startswith("#")]
        if toks[0] != "P1":
            raise ValueError("not a P1 portable bitmap")
        nx, ny = int(toks[1]), int(toks[2])
        bits = np.asarray(toks[3 : 3 + nx * ny], dtype=np.int64).reshape(ny, nx)
        lat = Lattice(2, h, (nx, ny), origin)
        mask = np.zeros((nx, ny), dtype=bool)
        for r in range(ny):
            mask[:, ny - 1 - r] = bits[r].astype(bool)
        return cls.from_mask(lat, mask)


# -- operations -----------------------------------------------------------


def _face_neighbor_any(mask: np.ndarray, predicate) -> np.ndarray:
    """Cells for which some in-window face neighbor satisfies the predicate."""
    out = np.zeros_like(mask)
    for axis in range(mask.ndim):
        for sign in (+1, -1):
            src = [slice(None)] * mask.ndim
            dst = [slice(None)] * mask.ndim
            if sign > 0:
                src[axis] = slice(0, -1)
                dst[axis] = slice(1, None)
            else:
                src[axis] = slice(1, None)
                dst[axis] = slice(0, -1)
            out[tuple(src)] |= predicate(mask[tuple(dst)])
    return out


def boundary_cells_mask(mask: np.ndarray) -> np.ndarray:
    """Cells of the set with at least one in-window face neighbor outside it."""
    return mask & _face_neighbor_any(mask, lambda m: ~m)


def adjacent_exterior_cells_mask(mask: np.ndarray) -> np.ndarray:
    """Cells outside the set with at least one face neighbor inside it."""
    return ~mask & _face_neighbor_any(mask, lambda m: m)


def volume(E: GridSet) -> float:
    """Lebesgue volume of the cell union, |members| * h^N."""
    return E.cached_volume


def rasterize_ball(L: Lattice, b: Ball) -> GridSet:
    """Cells whose physical centers lie strictly inside the ball."""
    if len(b.center) != L.dim:
        raise ValueError("ball center dimension mismatch")
    lo, hi = [], []
    for a in range(L.dim):
        lo.append(max(0, int(np.floor((b.center[a] - b.radius - L.origin[a]) / L.h - 0.5))))
        hi.append(min(L.extents[a], int(np.ceil((b.center[a] + b.radius - L.origin[a]) / L.h + 0.5))))
    if any(l >= h_ for l, h_ in zip(lo, hi)):
        return GridSet.empty(L)
    grids = np.meshgrid(*(np.arange(l, h_) for l, h_ in zip(lo, hi)), indexing="ij")
    cells = np.stack([g.ravel() for g in grids], axis=-1).astype(np.int64)
    centers = L.centers(cells)
    d2 = np.sum((centers - np.asarray(b.center)) ** 2, axis=1)
    return GridSet(L, cells[d2 < b.radius ** 2])


def symdiff_volume(A: GridSet, B: GridSet) -> float:
    """|A Δ B| = h^N * number of cells in exactly one of A, B."""
    A._check_same_lattice(B)
    return float(np.count_nonzero(A.mask ^ B.mask)) * A.lattice.cell_volume


def _symdiff_count_ball(E: GridSet, center: np.ndarray, r: float) -> int:
    """Cell count of E Δ (rasterized ball at center), without building a GridSet."""
    L = E.lattice
    lo, hi, slices = [], [], []
    for a in range(L.dim):
        l = max(0, int(np.floor((center[a] - r - L.origin[a]) / L.h - 0.5)))
        u = min(L.extents[a], int(np.ceil((center[a] + r - L.origin[a]) / L.h + 0.5)))
        u = max(u, l)
        lo.append(l)
        hi.append(u)
        slices.append(slice(l, u))
    grids = np.meshgrid(*(np.arange(l, u) for l, u in zip(lo, hi)), indexing="ij")
    if grids[0].size == 0:
        return len(E)
    cent = np.stack([(g + 0.5) * L.h + L.origin[a] for a, g in enumerate(grids)], axis=-1)
    ball_mask = np.sum((cent - center) ** 2, axis=-1) < r ** 2
    e_local = E.mask[tuple(slices)]
    inter = int(np.count_nonzero(ball_mask & e_local))
    nball = int(np.count_nonzero(ball_mask))
    return len(E) + nball - 2 * inter


def best_translate_asymmetry(E: GridSet, r: float) -> tuple[float, np.ndarray]:
    """min over translations of |E Δ B(x, r)| and the minimizing center.

    The search visits every cell-center position x for which B(x, r) stays
    inside the window, then refines on a sub-cell grid of step h/4 around
    the best integer position.  The result is an upper bound on the
    continuum translation minimum.
    """
    if len(E) == 0:
        raise ValueError("asymmetry of an empty set is undefined")
    L = E.lattice
    h = L.h
    # candidate cell centers: around E's bounding box, inflated by r, and
    # such that the ball does not exit the window
    mlo = E.members.min(axis=0)
    mhi = E.members.max(axis=0)
    pad = int(np.ceil(r / h)) + 2
    best = (np.inf, None)
    ranges = []
    for a in range(L.dim):
        klo = max(0, mlo[a] - pad)
        khi = min(L.extents[a] - 1, mhi[a] + pad)
        ranges.append(range(klo, khi + 1))
    olo = np.asarray(L.origin)
    whi = olo + np.asarray(L.extents) * h
    import itertools

    def ball_inside(x):
        return bool(np.all(x - r >= olo - 1e-12) and np.all(x + r <= whi + 1e-12))

    for k in itertools.product(*ranges):
        x = olo + (np.asarray(k) + 0.5) * h
        if not ball_inside(x):
            continue
        c = _symdiff_count_ball(E, x, r)
        if c < best[0]:
            best = (c, x)
    if best[1] is None:
        raise ValueError("no admissible ball position inside the window")
    # sub-cell refinement at step h/4 around the best integer shift
    base = best[1]
    steps = np.arange(-4, 5) * (h / 4.0)
    for off in itertools.product(steps, repeat=L.dim):
        x = base + np.asarray(off)
        if not ball_inside(x):
            continue
        c = _symdiff_count_ball(E, x, r)
        if c < best[0]:
            best = (c, x)
    return best[0] * L.cell_volume, best[1]


def tail_mass_profile(E: GridSet, center) -> list[tuple[float, float]]:
    """f(r) = |E \\ B(center, r)| sampled at r = k*h, k = 0..past the window.

    Nonincreasing in r; identically 0 once r exceeds the distance from
    center to the farthest member cell center.
    """
    L = E.lattice
    center = np.asarray(center, dtype=float)
    kmax = int(np.ceil(L.diameter / L.h)) + int(np.ceil(np.linalg.norm(center - np.asarray(L.origin)) / L.h)) + 2
    if len(E) == 0:
        return [(k * L.h, 0.0) for k in range(kmax + 1)]
    d = np.linalg.norm(E.centers() - center, axis=1)
    out = []
    for k in range(kmax + 1):
        r = k * L.h
        out.append((r, float(np.count_nonzero(d >= r)) * L.cell_volume))
    return out
