"""Volume-constrained and penalized minimization of the perimeter energy.

Three schemes operate on a shared incremental energy state:

  * constrained-exchange: best-improvement swaps of one boundary cell of E
    against one exterior cell adjacent to E.  Volume preserving, strictly
    monotone, terminates at a swap-local optimum.
  * penalized-anneal: single-cell-flip Metropolis chain on the penalized
    energy ps - integral(g) + mu*|vol - m| with geometric cooling, followed
    by an exact greedy volume projection of the best-seen state.
  * threshold-dynamics: repeatedly select the m/h^N cells with the smallest
    linearized marginal score S - 2*phi(i) - g(x_i)*h^N; since the pairwise
    energy is concave in the indicator, a fixed point never increases the
    true energy along the iteration.

The state carries the interaction field phi(i) = sum_{j in E} W(i-j), so
every flip delta is O(1) to score and O(M) to apply, and matches a from-
scratch recomputation to roundoff.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .curvature import boundary_profile, curvature_scale, mu_estimate
from .kernel import KernelTable, unit_ball_volume
from .lattice import (
    Ball,
    GridSet,
    Lattice,
    adjacent_exterior_cells_mask,
    boundary_cells_mask,
    rasterize_ball,
)
from .perimeter import PerimeterValue, engine_for
from .potential import Potential

__all__ = [
    "MinimizeConfig",
    "EnergyState",
    "EnergyReport",
    "make_state",
    "flip_delta",
    "exchange_step",
    "threshold_step",
    "anneal",
    "minimize",
    "default_penalty_weight",
]

MODES = ("constrained-exchange", "penalized-anneal", "threshold-dynamics")

# minimum relative decrease for an "improving" move; breaks float cycles
MIN_DECREASE = 1e-12


@dataclass
class MinimizeConfig:
    mode: str = "constrained-exchange"
    target_volume: float = 1.0
    mu: float | None = None
    max_iters: int = 100_000
    seed: int = 0
    restarts: int = 1
    init: str | GridSet = "ball"
    cooling_factor: float = 0.95
    initial_temperature: float | None = None
    tolerance: float = 0.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mu is not None and self.mu < 0:
            raise ValueError("mu must be nonnegative")
        if not (0.0 < self.cooling_factor < 1.0):
            raise ValueError("cooling factor must lie in (0, 1)")
        if isinstance(self.init, str) and self.init not in ("ball", "random"):
            raise ValueError("init must be 'ball', 'random' or a GridSet")

    def cell_target(self, lattice: Lattice) -> int:
        k = self.target_volume / lattice.cell_volume
        k_int = int(round(k))
        if abs(k - k_int) > 1e-9 * max(1.0, abs(k)):
            raise ValueError("target volume must be an integer number of cells")
        if k_int < 0 or k_int > lattice.cell_count:
            raise ValueError("target volume infeasible for this window")
        return k_int


class EnergyState:
    """Mutable optimization state with exact incremental energy updates."""

    def __init__(self, eng, g_grid: np.ndarray, mask: np.ndarray, mu: float, target_volume: float):
        self.eng = eng
        self.lattice: Lattice = eng.lattice
        self.g_grid = g_grid  # g at cell centers times h^N
        self.mask = mask.copy()
        self.mu = float(mu)
        self.target_volume = float(target_volume)
        self._rebuild()

    def _rebuild(self) -> None:
        E = GridSet.from_mask(self.lattice, self.mask)
        self.count = len(E)
        self.phi = self.eng.phi_field(E)
        if self.count:
            members = E.members
            row = self.eng.row_all_at(members)
            phim = self.phi[tuple(members.T)]
            self.ps_interior = float(np.sum(row - phim))
            self.ps_exterior = float(np.sum(self.eng.ball_sum - row))
            self.potential_term = float(np.sum(self.g_grid[tuple(members.T)]))
        else:
            self.ps_interior = self.ps_exterior = self.potential_term = 0.0
        self.energy = self.ps_interior + self.ps_exterior - self.potential_term + self._penalty(self.count)

    def _penalty(self, count: int) -> float:
        if self.mu == 0.0:
            return 0.0
        vol = count * self.lattice.cell_volume
        return self.mu * abs(vol - self.target_volume)

    @property
    def set(self) -> GridSet:
        return GridSet.from_mask(self.lattice, self.mask)

    @property
    def ps_value(self) -> PerimeterValue:
        return PerimeterValue(self.ps_interior + self.ps_exterior, self.ps_interior, self.ps_exterior)

    @property
    def volume(self) -> float:
        return self.count * self.lattice.cell_volume

    def copy(self) -> "EnergyState":
        other = EnergyState.__new__(EnergyState)
        other.eng, other.lattice, other.g_grid = self.eng, self.lattice, self.g_grid
        other.mask = self.mask.copy()
        other.mu, other.target_volume = self.mu, self.target_volume
        other.count, other.phi = self.count, self.phi.copy()
        other.ps_interior, other.ps_exterior = self.ps_interior, self.ps_exterior
        other.potential_term, other.energy = self.potential_term, self.energy
        return other

    # -- flips -------------------------------------------------------------

    def flip_delta(self, cell) -> float:
        """Exact energy change if the cell's membership is toggled."""
        c = tuple(int(v) for v in np.atleast_1d(cell))
        S = self.eng.ball_sum
        if self.mask[c]:
            d = 2.0 * self.phi[c] - S + self.g_grid[c]
            new_count = self.count - 1
        else:
            d = S - 2.0 * self.phi[c] - self.g_grid[c]
            new_count = self.count + 1
        return d + self._penalty(new_count) - self._penalty(self.count)

    def apply_flip(self, cell) -> float:
        """Toggle the cell; returns the applied energy delta."""
        c = np.atleast_1d(np.asarray(cell, dtype=np.int64))
        ct = tuple(int(v) for v in c)
        delta = self.flip_delta(ct)
        row = float(self.eng.row_all[ct])
        phi_c = float(self.phi[ct])
        if self.mask[ct]:
            self.ps_interior -= row - 2.0 * phi_c
            self.ps_exterior -= self.eng.ball_sum - row
            self.potential_term -= self.g_grid[ct]
            self.eng.add_cell_to_phi(self.phi, c, -1.0)
            self.mask[ct] = False
            self.count -= 1
        else:
            self.ps_interior += row - 2.0 * phi_c
            self.ps_exterior += self.eng.ball_sum - row
            self.potential_term += self.g_grid[ct]
            self.eng.add_cell_to_phi(self.phi, c, +1.0)
            self.mask[ct] = True
            self.count += 1
        self.energy += delta
        return delta


def make_state(E: GridSet, K: KernelTable, g: Potential, mu: float = 0.0, target_volume: float | None = None) -> EnergyState:
    eng = engine_for(E.lattice, K)
    g_grid = g.grid_values(E.lattice) * E.lattice.cell_volume
    m = E.cached_volume if target_volume is None else target_volume
    return EnergyState(eng, g_grid, E.mask, mu, m)


def flip_delta(state: EnergyState, cell) -> float:
    return state.flip_delta(cell)


def _improvement_threshold(state: EnergyState, tolerance: float) -> float:
    scale = max(1.0, abs(state.energy))
    return -max(MIN_DECREASE, tolerance) * scale


def exchange_step(state: EnergyState, tolerance: float = 0.0) -> bool:
    """One best-improvement volume-preserving swap; False at a local optimum.

    Candidates pair a boundary cell of E with an exterior cell adjacent to
    E; the swap delta uses the two flip deltas plus the exact cross term
    2*W(a-b).  Ties break lexicographically in (a, b).
    """
    bnd = np.argwhere(boundary_cells_mask(state.mask))
    ext = np.argwhere(adjacent_exterior_cells_mask(state.mask))
    if len(bnd) == 0 or len(ext) == 0:
        return False
    sa = 2.0 * state.phi[tuple(bnd.T)] + state.g_grid[tuple(bnd.T)]
    sb = 2.0 * state.phi[tuple(ext.T)] + state.g_grid[tuple(ext.T)]
    off = np.asarray(state.lattice.extents, dtype=np.int64) - 1
    d = bnd[:, None, :] - ext[None, :, :] + off
    wab = state.eng.weights[tuple(np.moveaxis(d, -1, 0))]
    delta = (sa[:, None] - sb[None, :]) + 2.0 * wab
    k = np.unravel_index(int(np.argmin(delta)), delta.shape)
    if delta[k] >= _improvement_threshold(state, tolerance):
        return False
    state.apply_flip(bnd[k[0]])
    state.apply_flip(ext[k[1]])
    return True


def threshold_step(state: EnergyState) -> GridSet:
    """Cells with the smallest linearized marginal score, at fixed count.

    Score v(i) = S - 2*phi(i) - g(x_i)*h^N; exactly target-many cells are
    selected, ties broken by lexicographic cell order.
    """
    k = int(round(state.target_volume / state.lattice.cell_volume))
    M = state.lattice.cell_count
    if k >= M:
        return GridSet.full(state.lattice)
    v = (state.eng.ball_sum - 2.0 * state.phi - state.g_grid).ravel()
    order = np.lexsort((np.arange(M), v))
    chosen = np.sort(order[:k])
    members = state.lattice.from_flat(chosen)
    return GridSet(state.lattice, members)


def default_penalty_weight(g: Potential, lattice: Lattice, K: KernelTable) -> float:
    """Penalty weight making volume violations never profitable:
    twice the potential sup plus the curvature scale, per unit volume."""
    params = K.params
    scale = params.dim * unit_ball_volume(params.dim) / params.s * params.h ** (-params.s)
    return 2.0 * (g.window_sup_abs(lattice) + scale)


def anneal(
    config: MinimizeConfig,
    K: KernelTable,
    g: Potential,
    lattice: Lattice,
    rng: np.random.Generator | None = None,
    init_mask: np.ndarray | None = None,
) -> tuple[EnergyState, dict]:
    """Metropolis chain on the penalized energy, then exact volume projection.

    Returns the projected best-seen state and diagnostics including the
    pre-projection cell count (equal to the target iff the penalty weight
    is large enough, which minimize() ensures by doubling).
    """
    rng = np.random.default_rng(config.seed) if rng is None else rng
    k_target = config.cell_target(lattice)
    mu = config.mu if config.mu is not None else default_penalty_weight(g, lattice, K)
    if mu <= 0:
        raise ValueError("penalized mode needs mu > 0")
    eng = engine_for(lattice, K)
    if init_mask is None:
        init_mask = _initial_set(config.init, lattice, k_target, g, rng).mask
    state = EnergyState(eng, g.grid_values(lattice) * lattice.cell_volume, init_mask, mu, config.target_volume)
    M = lattice.cell_count
    hN = lattice.cell_volume
    T = config.initial_temperature
    if T is None:
        T = eng.ball_sum + float(np.max(np.abs(state.g_grid))) + mu * hN
    best_mask = state.mask.copy()
    best_energy = state.energy
    sweeps = 0
    for sweep in range(config.max_iters):
        cells = rng.integers(0, M, size=M)
        coins = rng.random(M)
        for idx, coin in zip(cells, coins):
            c = np.unravel_index(int(idx), lattice.extents)
            d = state.flip_delta(c)
            if d <= 0.0 or (T > 0 and coin < np.exp(-min(d / T, 700.0))):
                state.apply_flip(c)
                if state.energy < best_energy - 1e-15 * max(1.0, abs(best_energy)):
                    best_energy = state.energy
                    best_mask = state.mask.copy()
        T *= config.cooling_factor
        sweeps += 1
    best = EnergyState(eng, state.g_grid, best_mask, mu, config.target_volume)
    pre_projection_cells = best.count
    _project_volume(best, k_target)
    return best, {"pre_projection_cells": pre_projection_cells, "mu": mu, "sweeps": sweeps}


def _project_volume(state: EnergyState, k_target: int) -> None:
    """Greedy exact-volume projection: toggle the cheapest cell until the
    count matches; ties break lexicographically."""
    while state.count != k_target:
        if state.count < k_target:
            cand = np.argwhere(~state.mask)
        else:
            cand = np.argwhere(state.mask)
        deltas = np.array([state.flip_delta(c) for c in cand])
        k = int(np.argmin(deltas))  # first minimum: lexicographic tie-break
        state.apply_flip(cand[k])


def _box_smooth(arr: np.ndarray) -> np.ndarray:
    """3^N box mean with edge truncation."""
    out = arr.copy()
    for axis in range(arr.ndim):
        acc = out.copy()
        cnt = np.ones_like(out)
        sl_lo = [slice(None)] * arr.ndim
        sl_hi = [slice(None)] * arr.ndim
        sl_lo[axis] = slice(0, -1)
        sl_hi[axis] = slice(1, None)
        acc[tuple(sl_lo)] += out[tuple(sl_hi)]
        cnt[tuple(sl_lo)] += 1
        acc[tuple(sl_hi)] += out[tuple(sl_lo)]
        cnt[tuple(sl_hi)] += 1
        out = acc / cnt
    return out


def _adjust_to_count(E: GridSet, k: int, center: np.ndarray) -> GridSet:
    """Add or remove cells by distance to the center to hit the exact count."""
    L = E.lattice
    mask = E.mask.copy()
    count = len(E)
    if count < k:
        cand = np.argwhere(~mask)
        d2 = np.sum((L.centers(cand) - center) ** 2, axis=1)
        order = np.lexsort((L.flat_index(cand), d2))
        for i in order[: k - count]:
            mask[tuple(cand[i])] = True
    elif count > k:
        cand = np.argwhere(mask)
        d2 = np.sum((L.centers(cand) - center) ** 2, axis=1)
        order = np.lexsort((L.flat_index(cand), -d2))
        for i in order[: count - k]:
            mask[tuple(cand[i])] = False
    return GridSet.from_mask(L, mask)


def _initial_set(init, lattice: Lattice, k: int, g: Potential, rng: np.random.Generator) -> GridSet:
    if isinstance(init, GridSet):
        if init.lattice != lattice:
            raise ValueError("initial set lives on a different lattice")
        return init
    if k == 0:
        return GridSet.empty(lattice)
    if k >= lattice.cell_count:
        return GridSet.full(lattice)
    if init == "random":
        flat = rng.choice(lattice.cell_count, size=k, replace=False)
        return GridSet(lattice, lattice.from_flat(np.sort(flat)))
    # ball of the target volume at the argmax of the smoothed potential
    smooth = _box_smooth(g.grid_values(lattice))
    best_flat = int(np.argmax(smooth))
    center = lattice.centers(lattice.from_flat(np.asarray([best_flat])))[0]
    r = (k * lattice.cell_volume / unit_ball_volume(lattice.dim)) ** (1.0 / lattice.dim)
    E = rasterize_ball(lattice, Ball(tuple(center), max(r, 0.51 * lattice.h)))
    if len(E) == 0:
        E = GridSet(lattice, lattice.from_flat(np.asarray([best_flat])))
    return _adjust_to_count(E, k, center)


@dataclass
class EnergyReport:
    """Run summary; serialized by the CLI as the report JSON."""

    mode: str
    s: float
    h: float
    m: float
    energy: float
    ps_interior: float
    ps_exterior: float
    potential_term: float
    mu_mean: float
    mu_spread: float
    iters: int
    restarts: int
    seed: int
    wall_ms: float

    def to_json_dict(self, include_timing: bool = False) -> dict:
        d = {
            "mode": self.mode,
            "s": self.s,
            "h": self.h,
            "m": self.m,
            "energy": self.energy,
            "ps_interior": self.ps_interior,
            "ps_exterior": self.ps_exterior,
            "potential_term": self.potential_term,
            "mu_mean": self.mu_mean,
            "mu_spread": self.mu_spread,
            "iters": self.iters,
            "restarts": self.restarts,
            "seed": self.seed,
            "wall_ms": self.wall_ms if include_timing else None,
        }
        return d


def _worker_count() -> int:
    raw = os.environ.get("FRACPERIM_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _run_restart(args) -> tuple[EnergyState, int, dict]:
    config, K, g, lattice, restart_index, seed_seq = args
    rng = np.random.Generator(np.random.PCG64(seed_seq))
    k_target = config.cell_target(lattice)
    init = config.init if restart_index == 0 else "random"
    info: dict = {}
    if config.mode == "penalized-anneal":
        mu = config.mu if config.mu is not None else default_penalty_weight(g, lattice, K)
        iters = 0
        for attempt in range(16):
            sub = MinimizeConfig(
                mode=config.mode,
                target_volume=config.target_volume,
                mu=mu,
                max_iters=config.max_iters,
                seed=config.seed,
                restarts=1,
                init=init,
                cooling_factor=config.cooling_factor,
                initial_temperature=config.initial_temperature,
                tolerance=config.tolerance,
            )
            state, info = anneal(sub, K, g, lattice, rng=rng)
            iters += info["sweeps"]
            if info["pre_projection_cells"] == k_target:
                break
            mu *= 2.0  # adaptive doubling until the penalized optimum is feasible
        info["iters"] = iters
        return state, iters, info

    E0 = _initial_set(init, lattice, k_target, g, rng)
    if len(E0) != k_target:
        E0 = _adjust_to_count(E0, k_target, np.mean(E0.centers(), axis=0) if len(E0) else np.zeros(lattice.dim))
    state = make_state(E0, K, g, mu=0.0, target_volume=config.target_volume)
    iters = 0
    if config.mode == "constrained-exchange":
        while iters < config.max_iters and exchange_step(state, config.tolerance):
            iters += 1
    else:  # threshold-dynamics
        best = state.copy()
        prev_masks = {state.mask.tobytes()}
        for _ in range(config.max_iters):
            nxt = threshold_step(state)
            iters += 1
            if np.array_equal(nxt.mask, state.mask):
                break
            state = EnergyState(state.eng, state.g_grid, nxt.mask, 0.0, config.target_volume)
            if state.energy < best.energy:
                best = state.copy()
            key = state.mask.tobytes()
            if key in prev_masks:
                break  # cycle
            prev_masks.add(key)
        if best.energy < state.energy:
            state = best
    return state, iters, info


def minimize(config: MinimizeConfig, K: KernelTable, g: Potential, lattice: Lattice) -> tuple[EnergyState, EnergyReport]:
    """Multistart driver: restart 0 uses the configured init (default: ball
    at the smoothed-potential argmax), further restarts use random cells;
    the best final state by (energy, lexicographic members) wins.
    Deterministic given config and seed."""
    t0 = time.perf_counter()
    k_target = config.cell_target(lattice)
    seeds = np.random.SeedSequence(config.seed).spawn(max(1, config.restarts))
    tasks = [(config, K, g, lattice, r, seeds[r]) for r in range(max(1, config.restarts))]
    engine_for(lattice, K)  # build shared tables once, outside the pool
    workers = min(_worker_count(), len(tasks))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_restart, tasks))
    else:
        results = [_run_restart(t) for t in tasks]

    def sort_key(item):
        state, iters, info = item
        return (state.energy, state.set.members.tobytes())

    best_state, best_iters, best_info = min(results, key=sort_key)
    E = best_state.set
    params = K.params
    if 0 < len(E) < lattice.cell_count:
        profile = boundary_profile(E, g, K)
        mu_mean, mu_spread = mu_estimate(profile, floor=curvature_scale(params))
    else:
        mu_mean, mu_spread = float("nan"), float("nan")
    wall_ms = (time.perf_counter() - t0) * 1000.0
    report = EnergyReport(
        mode=config.mode,
        s=params.s,
        h=params.h,
        m=k_target * lattice.cell_volume,
        energy=best_state.energy,
        ps_interior=best_state.ps_interior,
        ps_exterior=best_state.ps_exterior,
        potential_term=best_state.potential_term,
        mu_mean=mu_mean,
        mu_spread=mu_spread,
        iters=best_iters,
        restarts=max(1, config.restarts),
        seed=config.seed,
        wall_ms=wall_ms,
    )
    return best_state, report
