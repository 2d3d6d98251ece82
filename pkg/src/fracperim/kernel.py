"""Quadrature of the Riesz kernel |x-y|^{-(N+s)} over pairs of lattice cells.

Near-field cell pair weights are computed by uniform dyadic subdivision of
both cells with midpoint evaluation on leaf pairs; because the leaf centers
form a regular grid, the double sum over leaf pairs collapses to a single
sum over center differences with triangular multiplicities, which keeps the
cost at O(2^(depth*N)) per offset instead of the square.  Far-field weights
use a single midpoint evaluation.  The exterior of a ball of radius rho has
the closed-form kernel mass (N*omega_N/s) * rho^(-s), used to close all
truncated sums against the infinite complement.

The kernel is singular only on touching cell boundaries and integrable
there for s < 1; no evaluation point ever hits the singularity because
midpoints of disjoint boxes never coincide.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, replace
from itertools import product

import numpy as np

__all__ = [
    "KernelParams",
    "KernelTable",
    "cell_weight",
    "exterior_tail",
    "point_cell_weight",
    "point_cell_weights",
    "unit_ball_volume",
    "curvature_normalization",
]

# omega_N = |B_1| for N = 0..3; omega_0 = 1 by convention (needed by the
# curvature normalization 1/omega_{N-2} at N = 2).
_UNIT_BALL_VOLUME = {0: 1.0, 1: 2.0, 2: float(np.pi), 3: 4.0 * np.pi / 3.0}


def unit_ball_volume(dim: int) -> float:
    try:
        return _UNIT_BALL_VOLUME[dim]
    except KeyError:
        raise ValueError(f"unsupported dimension {dim}") from None


def curvature_normalization(dim: int) -> float:
    """1/omega_{N-2}; for N = 1 the raw integral is used (factor 1)."""
    if dim == 1:
        return 1.0
    return 1.0 / unit_ball_volume(dim - 2)


@dataclass(frozen=True)
class KernelParams:
    """Parameters of the cell-interaction quadrature.

    far_radius must exceed the window diameter so that the whole window is
    inside the analytic-closure ball of every cell.
    """

    s: float
    dim: int
    h: float
    near_field_radius: int = 3
    subdivision_depth: int = 4
    far_radius: float = np.inf

    def __post_init__(self):
        if not (0.0 < self.s < 1.0):
            raise ValueError("s must lie in the open interval (0, 1)")
        if self.dim not in (1, 2, 3):
            raise ValueError("dim must be 1, 2 or 3")
        if not self.h > 0:
            raise ValueError("h must be positive")
        if self.near_field_radius < 1:
            raise ValueError("near_field_radius must be >= 1")
        if self.subdivision_depth < 1:
            raise ValueError("subdivision_depth must be >= 1")
        if not self.far_radius > 0:
            raise ValueError("far_radius must be positive")

    @property
    def exponent(self) -> float:
        return self.dim + self.s


def _canonical_offset(d: tuple[int, ...]) -> tuple[int, ...]:
    """Orbit representative under the hyperoctahedral group."""
    return tuple(sorted((abs(k) for k in d), reverse=True))


def _near_weight(params: KernelParams, d: tuple[int, ...], depth: int) -> float:
    """Subdivided midpoint quadrature of the cell pair integral at offset d.

    Collapsed form: with n = 2^depth leaves per axis of size l = h/n,
    W = l^(2N) * sum_delta prod_k (n - |delta_k|) * |d*h + delta*l|^(-(N+s)).
    """
    n = 1 << depth
    ell = params.h / n
    deltas = np.arange(-(n - 1), n)
    grids = np.meshgrid(*([deltas] * params.dim), indexing="ij")
    z2 = np.zeros(grids[0].shape, dtype=np.float64)
    mult = np.ones(grids[0].shape, dtype=np.float64)
    for a in range(params.dim):
        z2 += (d[a] * params.h + grids[a] * ell) ** 2
        mult *= n - np.abs(grids[a])
    vals = mult * z2 ** (-0.5 * params.exponent)
    return float(ell ** (2 * params.dim) * np.sum(vals))


def _far_weight_many(params: KernelParams, d: np.ndarray) -> np.ndarray:
    """Midpoint approximation h^(2N) * |d*h|^(-(N+s)) for offset rows d."""
    r2 = np.sum((np.asarray(d, dtype=np.float64) * params.h) ** 2, axis=-1)
    return params.h ** (2 * params.dim) * r2 ** (-0.5 * params.exponent)


def cell_weight(params: KernelParams, d) -> float:
    """Interaction weight W(d) between the cell at the origin and at offset d.

    Near field (|d|_inf <= near_field_radius) uses the subdivided midpoint
    rule; far field uses a single midpoint evaluation.  d = 0 is rejected:
    self-interaction never enters the perimeter double sum.
    """
    d = tuple(int(k) for k in np.atleast_1d(d))
    if len(d) != params.dim:
        raise ValueError("offset dimension mismatch")
    if all(k == 0 for k in d):
        raise ValueError("self-interaction weight W(0) is undefined")
    if max(abs(k) for k in d) <= params.near_field_radius:
        return _near_weight(params, _canonical_offset(d), params.subdivision_depth)
    return float(_far_weight_many(params, np.asarray(d, dtype=np.float64)))


def exterior_tail(params: KernelParams, rho: float) -> float:
    """Exact kernel mass of the exterior of a ball: (N*omega_N/s) * rho^(-s)."""
    if not rho > 0:
        raise ValueError("rho must be positive")
    N = params.dim
    return N * unit_ball_volume(N) / params.s * rho ** (-params.s)


class KernelTable:
    """Precomputed near-field weights plus on-the-fly far field.

    Weights are computed once per canonical orbit of the hyperoctahedral
    group and mirrored, so the full symmetry of the table is exact.
    """

    def __init__(self, params: KernelParams):
        self.params = params
        self._canonical: dict[tuple[int, ...], float] = {}
        r = params.near_field_radius
        for d in product(range(0, r + 1), repeat=params.dim):
            if all(k == 0 for k in d):
                continue
            c = _canonical_offset(d)
            if c not in self._canonical:
                self._canonical[c] = _near_weight(params, c, params.subdivision_depth)
        self.weights: dict[tuple[int, ...], float] = {}
        for d in product(range(-r, r + 1), repeat=params.dim):
            if all(k == 0 for k in d):
                continue
            self.weights[d] = self._canonical[_canonical_offset(d)]

    def weight(self, d) -> float:
        d = tuple(int(k) for k in np.atleast_1d(d))
        if all(k == 0 for k in d):
            raise ValueError("self-interaction weight W(0) is undefined")
        w = self.weights.get(d)
        if w is not None:
            return w
        return float(_far_weight_many(self.params, np.asarray(d, dtype=np.float64)))

    def weight_array(self, extents: tuple[int, ...]) -> np.ndarray:
        """Dense array of W over all window offsets.

        Entry [d + extents - 1] holds W(d) for d in the open box
        (-extents, extents); the zero offset holds 0 so that field sums can
        include the self index harmlessly.
        """
        params = self.params
        shape = tuple(2 * n - 1 for n in extents)
        axes = [np.arange(-(n - 1), n, dtype=np.float64) for n in extents]
        grids = np.meshgrid(*axes, indexing="ij")
        r2 = np.zeros(shape, dtype=np.float64)
        for g in grids:
            r2 += (g * params.h) ** 2
        center = tuple(n - 1 for n in extents)
        r2[center] = 1.0  # placeholder, overwritten below
        arr = params.h ** (2 * params.dim) * r2 ** (-0.5 * params.exponent)
        for d, w in self.weights.items():
            idx = tuple(k + n - 1 for k, n in zip(d, extents))
            if all(0 <= i < m for i, m in zip(idx, shape)):
                arr[idx] = w
        arr[center] = 0.0
        return arr

    def lattice_ball_sum(self, far_radius: float | None = None) -> float:
        """Sum of W over all nonzero integer offsets with |d*h| <= far_radius,
        plus the analytic exterior tail beyond far_radius.

        This is the total kernel mass seen by one cell from the rest of the
        infinite lattice; per-cell exterior closures are differences of this
        constant and in-window sums.
        """
        params = self.params
        R = params.far_radius if far_radius is None else far_radius
        if not np.isfinite(R):
            raise ValueError("far_radius must be finite for the lattice ball sum")
        G = int(np.floor(R / params.h))
        if G < params.near_field_radius:
            raise ValueError("far_radius smaller than the near field")
        # far-field formula over the whole ball, then swap the near box for
        # the subdivided table values
        total = _ball_far_sum(params, G, R, weight_power=2 * params.dim)
        for d, w in self.weights.items():
            if np.linalg.norm(np.asarray(d, dtype=float)) * params.h <= R:
                total += w - float(_far_weight_many(params, np.asarray(d, dtype=np.float64)))
        total += exterior_tail(params, R) * params.h ** params.dim
        return total

    # -- binary cache ------------------------------------------------------

    def save(self, path) -> None:
        keys = np.asarray(sorted(self._canonical), dtype=np.int64)
        vals = np.asarray([self._canonical[tuple(k)] for k in keys], dtype=np.float64)
        meta = np.asarray(
            [
                float(self.params.dim),
                self.params.s,
                self.params.h,
                float(self.params.near_field_radius),
                float(self.params.subdivision_depth),
            ],
            dtype=np.float64,
        )
        np.savez(path, meta=meta, keys=keys, vals=vals)

    @classmethod
    def load(cls, path, params: KernelParams) -> "KernelTable":
        """Load a cached table; the key (N, s, h, radius, depth) must match
        bit-for-bit, and the cached weights are used verbatim."""
        with np.load(path) as data:
            meta, keys, vals = data["meta"], data["keys"], data["vals"]
        expect = (
            float(params.dim),
            params.s,
            params.h,
            float(params.near_field_radius),
            float(params.subdivision_depth),
        )
        if tuple(meta) != expect:
            raise ValueError("cache key mismatch")
        table = cls.__new__(cls)
        table.params = params
        table._canonical = {tuple(int(x) for x in k): float(v) for k, v in zip(keys, vals)}
        table.weights = {}
        r = params.near_field_radius
        for d in product(range(-r, r + 1), repeat=params.dim):
            if all(k == 0 for k in d):
                continue
            table.weights[d] = table._canonical[_canonical_offset(d)]
        return table


def _ball_far_sum(params: KernelParams, G: int, R: float, weight_power: int) -> float:
    """Sum of h^weight_power * |d*h|^(-(N+s)) over nonzero integer offsets
    with |d| <= G and |d*h| <= R.

    Offsets are aggregated by integer squared radius (bincount), so the
    kernel power is evaluated once per distinct radius.
    """
    if params.dim == 1:
        d = np.arange(1, G + 1, dtype=np.float64) * params.h
        d = d[d <= R]
        return float(2.0 * params.h ** weight_power * np.sum(d ** (-params.exponent)))
    axis2 = np.arange(-G, G + 1, dtype=np.int64) ** 2
    nbins = params.dim * G * G + 1
    counts = np.zeros(nbins, dtype=np.int64)
    if params.dim == 2:
        chunk = max(1, int(4e7 // (2 * G + 1)))
        for start in range(0, len(axis2), chunk):
            q = (axis2[start : start + chunk, None] + axis2[None, :]).ravel()
            counts += np.bincount(q, minlength=nbins)
    else:
        plane = (axis2[:, None] + axis2[None, :]).ravel()
        for a2 in axis2[G:]:  # z >= 0 half, mirrored
            w = 1 if a2 == 0 else 2
            counts += w * np.bincount(plane + a2, minlength=nbins)
    q = np.nonzero(counts)[0]
    q = q[(q > 0) & (q * params.h ** 2 <= R * R)]
    vals = (q * params.h ** 2) ** (-0.5 * params.exponent)
    return float(params.h ** weight_power * np.sum(counts[q] * vals))


def point_cell_weights(params: KernelParams, x: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Integral of |x-y|^(-(N+s)) over cells with the given physical centers.

    Cells farther than near_field_radius*h from x (center distance) get a
    single midpoint evaluation; nearer cells are dyadically subdivided to
    subdivision_depth with midpoint leaves.  x must lie outside every
    closed cell.
    """
    x = np.asarray(x, dtype=np.float64).reshape(params.dim)
    centers = np.asarray(centers, dtype=np.float64).reshape(-1, params.dim)
    diff = centers - x
    if np.any(np.max(np.abs(diff), axis=1) <= 0.5 * params.h + 1e-12 * params.h):
        raise ValueError("evaluation point lies inside (or on) a target cell")
    r2 = np.sum(diff ** 2, axis=1)
    out = params.h ** params.dim * r2 ** (-0.5 * params.exponent)
    near = np.sqrt(r2) <= params.near_field_radius * params.h
    if np.any(near):
        n = 1 << params.subdivision_depth
        ell = params.h / n
        offs_1d = (np.arange(n) - (n - 1) / 2.0) * ell
        grids = np.meshgrid(*([offs_1d] * params.dim), indexing="ij")
        leaf_offs = np.stack([g.ravel() for g in grids], axis=-1)
        for i in np.nonzero(near)[0]:
            pts = centers[i] + leaf_offs
            d2 = np.sum((pts - x) ** 2, axis=1)
            out[i] = ell ** params.dim * float(np.sum(d2 ** (-0.5 * params.exponent)))
    return out


def point_cell_weight(params: KernelParams, x, cell, origin=None) -> float:
    """Single point-to-cell weight; cell given by integer coordinates."""
    origin = np.zeros(params.dim) if origin is None else np.asarray(origin, dtype=float)
    center = origin + (np.asarray(cell, dtype=np.float64) + 0.5) * params.h
    return float(point_cell_weights(params, np.asarray(x, dtype=float), center[None, :])[0])


def point_lattice_ball_sum(params: KernelParams, far_radius: float | None = None) -> float:
    """Point analogue of lattice_ball_sum: sum of point-to-cell weights over
    all nonzero offsets within far_radius of a cell center, plus the
    analytic tail.  Used by the curvature exterior closure."""
    R = params.far_radius if far_radius is None else far_radius
    if not np.isfinite(R):
        raise ValueError("far_radius must be finite")
    G = int(np.floor(R / params.h))
    nfr = params.near_field_radius
    x = np.zeros(params.dim)
    total = _ball_far_sum(params, G, R, weight_power=params.dim)
    # swap the near offsets for subdivided evaluations
    near_offsets = []
    for d in product(range(-nfr, nfr + 1), repeat=params.dim):
        if all(k == 0 for k in d):
            continue
        if np.linalg.norm(d) * params.h <= R:
            near_offsets.append(d)
    if near_offsets:
        centers = np.asarray(near_offsets, dtype=np.float64) * params.h
        total += float(np.sum(point_cell_weights(params, x, centers)))
        r2 = np.sum(centers ** 2, axis=1)
        total -= float(np.sum(params.h ** params.dim * r2 ** (-0.5 * params.exponent)))
    total += exterior_tail(params, R)
    return total
