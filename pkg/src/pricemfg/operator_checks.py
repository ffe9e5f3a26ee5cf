"""The discrete operator ``A_{rho,h}`` and executable checks of its properties.

The control selection is single valued: at every node the leftmost
minimiser returned by :func:`~pricemfg.solver.minimize_slice`.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .grid import Grid, interpolate
from .model import ModelSpec
from .solver import SolverConfig, minimize_slice, push_forward


@dataclass
class Triplet:
    """Arbitrary discrete ``(m, u, varpi)``; ``m`` and ``u`` are ``(M+1, N+1)``."""

    m: np.ndarray
    u: np.ndarray
    varpi: np.ndarray

    def __post_init__(self):
        self.m = np.asarray(self.m, dtype=float)
        self.u = np.asarray(self.u, dtype=float)
        self.varpi = np.asarray(self.varpi, dtype=float)
        if np.any(self.m < 0):
            raise ValueError("density must be nonnegative")

    def check_shape(self, grid: Grid):
        shape = (grid.M + 1, grid.N + 1)
        if self.m.shape != shape or self.u.shape != shape or self.varpi.shape != (grid.N,):
            raise ValueError("triplet shape does not match the grid")

    @classmethod
    def from_solution(cls, sol) -> "Triplet":
        """Consistent triplet of a solve: fields with the price that produced them."""
        return cls(m=sol.m, u=sol.u, varpi=sol.varpi_used)


@dataclass
class OperatorResidual:
    """Components of ``A_{rho,h}[w]``.

    ``hj`` and ``transport`` are ``(M+1, N)``; column ``k`` of ``transport``
    is the residual of the step ``k -> k+1``.  ``balance`` carries the
    factor ``h`` that makes the operator monotone.
    """

    hj: np.ndarray
    transport: np.ndarray
    balance: np.ndarray

    def sup_norms(self) -> tuple[float, float, float]:
        return (float(np.max(np.abs(self.hj))), float(np.max(np.abs(self.transport))),
                float(np.max(np.abs(self.balance))))


def running_cost(model: ModelSpec, x, alpha, varpi_k):
    return model.l0(alpha) + model.V(x) + varpi_k * alpha


def apply_discrete_operator(w: Triplet, model: ModelSpec, grid: Grid, Q, cfg: SolverConfig):
    """Evaluate ``A_{rho,h}[w]`` with controls selected from ``(w.u, w.varpi)``.

    Returns ``(residual, alpha_star)``.
    """
    w.check_shape(grid)
    Q = np.asarray(Q, dtype=float)
    if Q.shape != (grid.N,):
        raise ValueError("supply must have length N")
    N, h, rho = grid.N, grid.h, grid.rho
    hj = np.empty((grid.M + 1, N))
    tr = np.empty((grid.M + 1, N))
    bal = np.empty(N)
    alpha = np.empty((grid.M + 1, N))
    for k in range(N):
        a_k, _ = minimize_slice(w.u[:, k + 1], w.varpi[k], model, grid, cfg)
        alpha[:, k] = a_k
        foot = interpolate(w.u[:, k + 1], grid.x + h * a_k, grid)
        hj[:, k] = -w.u[:, k] + foot + h * running_cost(model, grid.x, a_k, w.varpi[k])
        tr[:, k] = w.m[:, k + 1] - push_forward(w.m[:, k], a_k, grid)
        bal[k] = -h * (np.dot(a_k, w.m[:, k]) * rho - Q[k])
    return OperatorResidual(hj=hj, transport=tr, balance=bal), alpha


def monotonicity_pairing(w: Triplet, w_tilde: Triplet, model: ModelSpec, grid: Grid, Q,
                         cfg: SolverConfig) -> float:
    """``<A[w~] - A[w], w~ - w>`` in the duality pairing of the scheme.

    HJ components pair with ``m`` at ``k``, transport components with ``u``
    at ``k+1`` and balance components with the price, all weighted by ``h``
    and the spatial ones also by ``rho``.  The boundary data
    ``m[:, 0]`` and ``u[:, N]`` of the two triplets must agree for the
    pairing to be nonnegative.
    """
    if np.any(w.m < 0) or np.any(w_tilde.m < 0):
        raise ValueError("monotonicity needs nonnegative densities")
    r, _ = apply_discrete_operator(w, model, grid, Q, cfg)
    rt, _ = apply_discrete_operator(w_tilde, model, grid, Q, cfg)
    N, h, rho = grid.N, grid.h, grid.rho
    dm = w_tilde.m[:, :N] - w.m[:, :N]
    du = w_tilde.u[:, 1:] - w.u[:, 1:]
    dp = w_tilde.varpi - w.varpi
    total = rho * np.sum((rt.hj - r.hj) * dm) + rho * np.sum((rt.transport - r.transport) * du)
    total += np.sum((rt.balance - r.balance) * dp)
    return float(h * total)


def random_triplet(grid: Grid, rng: np.random.Generator, m_initial, u_terminal,
                   lipschitz: float = 2.0, price_bound: float = 2.0) -> Triplet:
    """Random triplet with prescribed initial density and terminal value.

    Densities are normalised absolute Gaussians, values are cumulative sums
    of increments bounded by ``lipschitz * rho``, prices are uniform.
    """
    n, N = grid.M + 1, grid.N
    m = np.abs(rng.standard_normal((n, N + 1)))
    m /= m.sum(axis=0, keepdims=True) * grid.rho
    m[:, 0] = m_initial
    steps = rng.uniform(-lipschitz * grid.rho, lipschitz * grid.rho, (n - 1, N + 1))
    u = np.vstack([rng.uniform(-1.0, 1.0, (1, N + 1)), steps]).cumsum(axis=0)
    u[:, N] = u_terminal
    varpi = rng.uniform(-price_bound, price_bound, N)
    return Triplet(m=m, u=u, varpi=varpi)


@dataclass
class ProbeRow:
    rho: float
    h: float
    error: float


def consistency_probe(f: Callable, f_t: Callable, f_x: Callable, varpi: float, model: ModelSpec,
                      grids: Sequence[Grid], cfg: SolverConfig | None = None, k: int = 0,
                      interior: tuple[float, float] = (-0.5, 0.5)) -> list[ProbeRow]:
    """Max over interior nodes of ``|(f - S f)/h + f_t - H(x, varpi + f_x)|``.

    ``S f`` is one semi-Lagrangian step applied to ``f(., t_{k+1})``.  The
    value should tend to zero as ``rho, h -> 0`` with ``rho^2/h -> 0``.
    """
    cfg = cfg or SolverConfig()
    rows = []
    for grid in grids:
        x = grid.x
        tk, tk1 = grid.t[k], grid.t[k + 1]
        _, S = minimize_slice(f(x, tk1), varpi, model, grid, cfg)
        resid = (f(x, tk) - S) / grid.h + f_t(x, tk) - model.H(x, varpi + f_x(x, tk))
        mask = (x >= interior[0]) & (x <= interior[1])
        rows.append(ProbeRow(rho=grid.rho, h=grid.h, error=float(np.max(np.abs(resid[mask])))))
    return rows


def scheme_operator(u_next, varpi_k, model: ModelSpec, grid: Grid, cfg: SolverConfig):
    """``S_{rho,h}`` applied to one time slice."""
    return minimize_slice(u_next, varpi_k, model, grid, cfg)[1]


def minimizer_bound(model: ModelSpec, lipschitz_u: float, price_bound: float) -> float:
    """Radius outside which no control can beat ``alpha = 0``.

    A minimiser satisfies ``l0(a) - l0(0) <= (Lip(u) + |varpi|) |a|``; the
    left side is convex and superlinear, so the set is an interval.
    """
    slope = lipschitz_u + price_bound

    def excess(a):
        return min(model.l0(a) - model.l0(0.0) - slope * a,
                   model.l0(-a) - model.l0(0.0) - slope * a)

    hi = 1.0
    while excess(hi) <= 0:
        hi *= 2.0
    lo = 0.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if excess(mid) <= 0:
            lo = mid
        else:
            hi = mid
    return hi
