"""Independent ground truth on tiny instances.

Energies here are assembled from cell_weight calls and literal sums with
their own loop structure; nothing is shared with the perimeter engine
beyond the kernel primitive, so agreement between the two paths checks the
whole evaluation chain.  Enumeration recomputes every subset from scratch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations, product

import numpy as np

from .kernel import KernelParams, KernelTable, cell_weight, exterior_tail
from .lattice import GridSet, Lattice
from .perimeter import effective_far_radius
from .potential import Potential

__all__ = ["OracleResult", "enumerate_min", "direct_ps"]

ENUMERATION_GUARD = 100_000_000
PAIR_GUARD = 10_000_000


@dataclass(frozen=True)
class OracleResult:
    best_set: GridSet
    best_energy: float
    instances_evaluated: int


class _DirectTables:
    """Per-(lattice, params) weights rebuilt from cell_weight alone."""

    def __init__(self, lattice: Lattice, params: KernelParams):
        self.lattice = lattice
        self.params = params
        self.far_radius = effective_far_radius(params, lattice)
        G = int(np.floor(self.far_radius / params.h))
        axes = [np.arange(-G, G + 1, dtype=np.int64)] * params.dim
        grids = np.meshgrid(*axes, indexing="ij")
        offs = np.stack([g.ravel() for g in grids], axis=-1)
        r = np.linalg.norm(offs * params.h, axis=1)
        keep = (r > 0) & (r <= self.far_radius)
        self.offsets = offs[keep]
        w = params.h ** (2 * params.dim) * r[keep] ** (-params.exponent)
        near = np.max(np.abs(self.offsets), axis=1) <= params.near_field_radius
        for idx in np.nonzero(near)[0]:
            w[idx] = cell_weight(params, tuple(self.offsets[idx]))
        self.offset_weights = w
        self.tail = exterior_tail(params, self.far_radius) * params.h ** params.dim

    def weight(self, d: np.ndarray) -> np.ndarray:
        """Weights for offset rows d (all assumed nonzero, within window)."""
        d = np.asarray(d, dtype=np.int64).reshape(-1, self.params.dim)
        out = np.empty(len(d))
        near = np.max(np.abs(d), axis=1) <= self.params.near_field_radius
        far = ~near
        if np.any(far):
            r = np.linalg.norm(d[far] * self.params.h, axis=1)
            out[far] = self.params.h ** (2 * self.params.dim) * r ** (-self.params.exponent)
        for idx in np.nonzero(near)[0]:
            out[idx] = cell_weight(self.params, tuple(d[idx]))
        return out

    def exterior_closure(self, cell: np.ndarray) -> float:
        """Ghost-cell sum within the far radius plus the analytic remainder."""
        j = cell[None, :] + self.offsets
        outside = np.zeros(len(j), dtype=bool)
        for a in range(self.params.dim):
            outside |= (j[:, a] < 0) | (j[:, a] >= self.lattice.extents[a])
        return float(np.sum(self.offset_weights[outside])) + self.tail


_direct_cache: dict = {}


def _tables(lattice: Lattice, params: KernelParams) -> _DirectTables:
    key = (lattice, params)
    t = _direct_cache.get(key)
    if t is None:
        t = _DirectTables(lattice, params)
        _direct_cache[key] = t
    return t


def direct_ps(E: GridSet, params: KernelParams) -> float:
    """Perimeter by definition-level double sums (independent loop structure)."""
    L = E.lattice
    M = L.cell_count
    if len(E) * (M - len(E)) > PAIR_GUARD:
        raise ValueError("instance too large for the direct oracle")
    if len(E) == 0:
        return 0.0
    t = _tables(L, params)
    comp = np.argwhere(~E.mask)
    total = 0.0
    for i in E.members:
        if len(comp):
            total += float(np.sum(t.weight(i[None, :] - comp)))
        total += t.exterior_closure(i)
    return total


def enumerate_min(L: Lattice, K: KernelTable, g: Potential, k_cells: int) -> OracleResult:
    """Exact discrete optimum by exhaustive enumeration of k-cell subsets.

    Evaluates the energy of every subset by direct sums over a weight
    matrix built from cell_weight; ties resolve to the lexicographically
    first subset (enumeration order).
    """
    params = K.params
    M = L.cell_count
    if k_cells < 0 or k_cells > M:
        raise ValueError("infeasible cell count")
    n_subsets = math.comb(M, k_cells)
    if n_subsets > ENUMERATION_GUARD:
        raise ValueError("enumeration guard exceeded")
    t = _tables(L, params)
    cells = L.all_cells()
    # per-cell field: whole-window row sum + exterior closure - potential
    wmat = np.zeros((M, M))
    for a in range(M):
        for b in range(M):
            if a != b:
                wmat[a, b] = t.weight((cells[a] - cells[b])[None, :])[0]
    closure = np.array([t.exterior_closure(c) for c in cells])
    gvals = g.evaluate(L.centers(cells)) * L.cell_volume
    f = wmat.sum(axis=1) + closure - gvals

    if k_cells == 0:
        return OracleResult(GridSet.empty(L), 0.0, 1)

    combs = np.fromiter(
        (i for comb in combinations(range(M), k_cells) for i in comb),
        dtype=np.int64,
        count=n_subsets * k_cells,
    ).reshape(n_subsets, k_cells)
    energies = f[combs].sum(axis=1)
    for a, b in combinations(range(k_cells), 2):
        energies -= 2.0 * wmat[combs[:, a], combs[:, b]]
    best = int(np.argmin(energies))  # first minimum = lexicographic winner
    best_set = GridSet(L, cells[combs[best]])
    return OracleResult(best_set, float(energies[best]), n_subsets)
