"""Space-time lattice, P1 hat basis and piecewise-linear interpolation.

Nodes are ``x_i = a + i*rho`` for ``i = 0..M`` and ``t_k = k*h`` for
``k = 0..N``.  Node fields are stored as arrays of shape ``(M+1, n_times)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_REL_TOL = 1e-12


@dataclass(frozen=True)
class Grid:
    a: float
    b: float
    T: float
    rho: float
    h: float
    M: int
    N: int
    x: np.ndarray = field(init=False, repr=False, compare=False)
    t: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.b > self.a:
            raise ValueError(f"need b > a, got [{self.a}, {self.b}]")
        if self.T <= 0 or self.rho <= 0 or self.h <= 0:
            raise ValueError("T, rho and h must be positive")
        if self.M < 2 or self.N < 1:
            raise ValueError(f"need M >= 2 and N >= 1, got M={self.M}, N={self.N}")
        if abs(self.a + self.M * self.rho - self.b) > _REL_TOL * max(1.0, abs(self.b - self.a)):
            raise ValueError("a + M*rho must equal b")
        if abs(self.N * self.h - self.T) > _REL_TOL * max(1.0, self.T):
            raise ValueError("N*h must equal T")
        x = self.a + self.rho * np.arange(self.M + 1, dtype=float)
        x[-1] = self.b
        t = self.h * np.arange(self.N + 1, dtype=float)
        t[-1] = self.T
        x.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "t", t)

    @classmethod
    def from_steps(cls, a: float, b: float, T: float, rho: float, h: float) -> "Grid":
        """Build a grid from step sizes; the steps must divide the intervals."""
        M = int(round((b - a) / rho))
        N = int(round(T / h))
        if M < 1 or N < 1:
            raise ValueError("steps larger than the domain")
        if abs(M * rho - (b - a)) > 1e-9 * (b - a) or abs(N * h - T) > 1e-9 * T:
            raise ValueError(f"rho={rho}, h={h} do not divide [{a}, {b}] x [0, {T}]")
        return cls(a=a, b=b, T=T, rho=(b - a) / M, h=T / N, M=M, N=N)

    @classmethod
    def uniform(cls, a: float, b: float, T: float, M: int, N: int) -> "Grid":
        return cls(a=a, b=b, T=T, rho=(b - a) / M, h=T / N, M=M, N=N)

    def zeros(self, n_times: int | None = None) -> np.ndarray:
        """Empty node field with ``n_times`` time columns (default ``N+1``)."""
        return np.zeros((self.M + 1, self.N + 1 if n_times is None else n_times))


def _scaled(x, grid: Grid):
    # (x - a)/rho with values a few ulps from an integer snapped onto it,
    # so that nodes are reproduced exactly
    s = (np.asarray(x, dtype=float) - grid.a) / grid.rho
    r = np.round(s)
    return np.where(np.abs(s - r) <= 16 * np.finfo(float).eps * np.maximum(1.0, np.abs(s)), r, s)


def basis_eval(i: int, x, grid: Grid):
    """Hat function ``beta_i(x) = max(1 - |x - x_i|/rho, 0)``."""
    if not 0 <= i <= grid.M:
        raise IndexError(f"node index {i} outside 0..{grid.M}")
    return np.maximum(1.0 - np.abs(_scaled(x, grid) - i), 0.0)


def locate_cell(x, grid: Grid, clamp: bool = False):
    """Index ``j`` of the cell ``[x_j, x_{j+1}]`` containing ``x``.

    Uses ``floor((x - a)/rho)``; ``x = b`` maps to the last cell ``M-1``.
    With ``clamp=False`` points outside ``[a, b]`` raise ``ValueError``.
    """
    xa = np.asarray(x, dtype=float)
    if not clamp and (np.any(xa < grid.a) or np.any(xa > grid.b)):
        raise ValueError("point outside the grid domain")
    j = np.floor(_scaled(xa, grid)).astype(np.int64)
    j = np.clip(j, 0, grid.M - 1)
    if np.ndim(x) == 0:
        return int(j)
    return j


def cell_weights(y, grid: Grid):
    """Cell index and local coordinate of each point, after clamping to ``[a, b]``.

    ``I[f](y) = (1 - w) f_c + w f_{c+1}``; the same pair gives the mass split
    of a point at ``y`` between nodes ``c`` and ``c+1``.
    """
    y = np.clip(np.asarray(y, dtype=float), grid.a, grid.b)
    s = _scaled(y, grid)
    c = np.clip(np.floor(s).astype(np.int64), 0, grid.M - 1)
    return c, np.clip(s - c, 0.0, 1.0)


def interpolate(values, x, grid: Grid):
    """P1 interpolant ``I[f](x) = sum_i f_i beta_i(x)`` of nodal values.

    Queries outside ``[a, b]`` are clamped to the nearest endpoint.
    """
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ValueError("empty slice")
    if values.shape[0] != grid.M + 1:
        raise ValueError(f"slice has {values.shape[0]} entries, grid has {grid.M + 1} nodes")
    c, w = cell_weights(x, grid)
    out = (1.0 - w) * values[c] + w * values[c + 1]
    if np.ndim(x) == 0:
        return float(out)
    return out
