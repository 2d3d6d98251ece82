"""Potential fields g: evaluation, class hypotheses, integrals over cell sets.

Four kinds are supported: constant, integer-frequency cosine products
(Z^N-periodic by construction), downward parabolas (coercive), and sampled
grids with multilinear interpolation.  Periodic evaluation reduces each
coordinate to its fractional part first, so translating the argument by an
integer vector reproduces the value bit-for-bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .lattice import GridSet, Lattice

__all__ = [
    "Potential",
    "ConstantPotential",
    "PeriodicPotential",
    "CoercivePotential",
    "SampledPotential",
    "integral_over",
    "rescaled_eval",
]


class Potential:
    """Scalar field with a declared class and window bounds."""

    kind: str = "abstract"

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        """Values at points; x has shape (dim,) or (k, dim)."""
        raise NotImplementedError

    def __call__(self, x) -> float | np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        out = self.evaluate(x.reshape(-1, x.shape[-1]) if x.ndim > 1 else x.reshape(1, -1))
        return float(out[0]) if single else out

    def window_sup(self, lattice: Lattice) -> float:
        """Upper bound for g over the window (tight where cheaply possible)."""
        raise NotImplementedError

    def window_sup_abs(self, lattice: Lattice) -> float:
        """Upper bound for |g| over the window."""
        raise NotImplementedError

    def window_lipschitz(self, lattice: Lattice) -> float:
        """Finite-difference Lipschitz estimate on cell centers (diagnostic)."""
        vals = self.grid_values(lattice)
        est = 0.0
        for axis in range(lattice.dim):
            if vals.shape[axis] > 1:
                est = max(est, float(np.max(np.abs(np.diff(vals, axis=axis)))) / lattice.h)
        return est

    def grid_values(self, lattice: Lattice) -> np.ndarray:
        """g at all cell centers, shaped like the window."""
        vals = self.evaluate(lattice.centers(lattice.all_cells()))
        return vals.reshape(lattice.extents)


@dataclass(frozen=True)
class ConstantPotential(Potential):
    value: float = 0.0
    kind = "constant"

    def evaluate(self, x):
        return np.full(len(np.atleast_2d(x)), self.value, dtype=np.float64)

    def window_sup(self, lattice):
        return self.value

    def window_sup_abs(self, lattice):
        return abs(self.value)


@dataclass(frozen=True)
class PeriodicPotential(Potential):
    """amplitude * prod_k cos(2 pi f_k x_k) with integer frequencies f."""

    amplitude: float
    frequency: tuple[int, ...]
    kind = "periodic"

    def __post_init__(self):
        object.__setattr__(self, "frequency", tuple(int(f) for f in self.frequency))
        if any(f == 0 for f in self.frequency):
            raise ValueError("frequencies must be nonzero integers")

    def evaluate(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        out = np.full(len(x), self.amplitude, dtype=np.float64)
        for a, f in enumerate(self.frequency):
            u = x[:, a] - np.floor(x[:, a])  # exact fractional part
            out = out * np.cos(2.0 * np.pi * f * u)
        return out

    def window_sup(self, lattice):
        return abs(self.amplitude)

    def window_sup_abs(self, lattice):
        return abs(self.amplitude)


@dataclass(frozen=True)
class CoercivePotential(Potential):
    """-a*|x - center|^2 + b with a > 0; tends to -inf at infinity."""

    a: float = 1.0
    b: float = 0.0
    center: tuple[float, ...] = (0.0,)
    kind = "coercive"

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError("coercive potential needs a > 0")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    def evaluate(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        d2 = np.sum((x - np.asarray(self.center)) ** 2, axis=1)
        return self.b - self.a * d2

    def _corner_dist2(self, lattice: Lattice, nearest: bool) -> float:
        lo = np.asarray(lattice.origin)
        hi = lo + np.asarray(lattice.extents) * lattice.h
        c = np.asarray(self.center)
        if nearest:
            d = np.maximum(lo - c, 0.0) + np.maximum(c - hi, 0.0)
        else:
            d = np.maximum(np.abs(c - lo), np.abs(hi - c))
        return float(np.sum(d ** 2))

    def window_sup(self, lattice):
        return self.b - self.a * self._corner_dist2(lattice, nearest=True)

    def window_sup_abs(self, lattice):
        far = abs(self.b - self.a * self._corner_dist2(lattice, nearest=False))
        return max(abs(self.window_sup(lattice)), far)


class SampledPotential(Potential):
    """Node grid with bilinear (N=2) / trilinear (N=3) interpolation.

    Nodes sit at origin + k*spacing for k in [0, extents); evaluation is
    only defined inside the node hull.
    """

    kind = "sampled"

    def __init__(self, dim: int, spacing: float, extents: tuple[int, ...], origin: tuple[float, ...], values: np.ndarray):
        if dim not in (1, 2, 3):
            raise ValueError("dim must be 1, 2 or 3")
        self.dim = dim
        self.spacing = float(spacing)
        self.extents = tuple(int(n) for n in extents)
        self.origin = tuple(float(o) for o in origin)
        self.values = np.asarray(values, dtype=np.float64).reshape(self.extents)

    def evaluate(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        u = (x - np.asarray(self.origin)) / self.spacing
        eps = 1e-9
        for a in range(self.dim):
            if np.any(u[:, a] < -eps) or np.any(u[:, a] > self.extents[a] - 1 + eps):
                raise ValueError("evaluation point outside the sampled domain")
        base = np.clip(np.floor(u).astype(np.int64), 0, np.asarray(self.extents) - 2)
        frac = u - base
        out = np.zeros(len(x), dtype=np.float64)
        for corner in range(1 << self.dim):
            idx = []
            w = np.ones(len(x), dtype=np.float64)
            for a in range(self.dim):
                bit = (corner >> a) & 1
                idx.append(base[:, a] + bit)
                w = w * (frac[:, a] if bit else 1.0 - frac[:, a])
            out += w * self.values[tuple(idx)]
        return out

    def window_sup(self, lattice):
        return float(np.max(self.values))

    def window_sup_abs(self, lattice):
        return float(np.max(np.abs(self.values)))

    # -- file format: one JSON header line + row-major float64 LE payload --

    def save(self, path) -> None:
        header = {
            "dim": self.dim,
            "spacing": self.spacing,
            "extents": list(self.extents),
            "origin": list(self.origin),
        }
        with open(path, "wb") as f:
            f.write(json.dumps(header).encode("utf-8") + b"\n")
            f.write(self.values.astype("<f8").tobytes(order="C"))

    @classmethod
    def load(cls, path) -> "SampledPotential":
        with open(path, "rb") as f:
            header = json.loads(f.readline().decode("utf-8"))
            payload = f.read()
        values = np.frombuffer(payload, dtype="<f8").reshape(header["extents"])
        return cls(header["dim"], header["spacing"], tuple(header["extents"]), tuple(header["origin"]), values)


def integral_over(g: Potential, E: GridSet) -> float:
    """Midpoint rule: sum of g at member cell centers times h^N."""
    if len(E) == 0:
        return 0.0
    vals = g.evaluate(E.centers())
    return float(np.sum(vals)) * E.lattice.cell_volume


def rescaled_eval(g: Potential, x, lam: float):
    """g(x / lam); the lambda^{-s} energy prefactor is applied by callers."""
    if not lam > 0:
        raise ValueError("lambda must be positive")
    return g(np.asarray(x, dtype=np.float64) / lam)
