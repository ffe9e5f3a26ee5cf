"""Fully discrete semi-Lagrangian scheme for the price-formation MFG.

One outer iteration runs a backward Hamilton-Jacobi sweep for a fixed price,
pushes the initial density forward with the selected controls, and then
updates the price from the discrete balance condition.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .grid import Grid, cell_weights, locate_cell
from .model import ModelSpec, normalize_initial_density

logger = logging.getLogger(__name__)

_FOOT_SLACK = 1e-12


class InvariantViolation(RuntimeError):
    """An internal invariant of the scheme failed (mass, foot points, bounds)."""


class PriceRootError(RuntimeError):
    """The balance equation could not be bracketed."""


@dataclass
class SolverConfig:
    eps: float = 1e-3
    max_iterations: int = 50
    tie_tolerance: float = 1e-10
    price_root_tolerance: float = 1e-13
    alpha_bound_override: float | None = None
    mass_tolerance: float = 1e-12

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.tie_tolerance < 0 or self.price_root_tolerance <= 0:
            raise ValueError("tolerances must be positive")


@dataclass
class DiscreteSolution:
    """Node fields of a solve.

    ``u`` and ``m`` have shape ``(M+1, N+1)``, ``alpha_star`` has shape
    ``(M+1, N)`` and ``varpi`` length ``N``.  ``varpi`` is the output of the
    last balance update; ``varpi_used`` is the price that produced ``u``,
    ``m`` and ``alpha_star`` (they differ by less than ``eps`` on convergence).
    """

    u: np.ndarray
    m: np.ndarray
    alpha_star: np.ndarray
    varpi: np.ndarray
    varpi_used: np.ndarray
    iterations: int
    converged: bool
    final_price_residual: float
    history: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# Hamilton-Jacobi step
# ---------------------------------------------------------------------------

def minimize_slice(u_next, varpi_k, model: ModelSpec, grid: Grid, cfg: SolverConfig,
                   nodes=None):
    """Exact minimisation of the discrete DPP objective at several nodes.

    For node ``i`` the objective is
    ``g(a) = I[u_next](x_i + h a) + h (l0(a) + varpi_k a + V(x_i))`` over
    controls whose foot point stays in ``[a, b]``.  On each interpolation
    cell ``g`` is ``h (l0(a) + (varpi_k + s_j) a)`` plus a constant, so its
    minimum over the cell is the stationary point ``l0'^{-1}(-varpi_k - s_j)``
    clipped to the cell.  Outside ``l0'^{-1}(-varpi_k -+ S)``, with ``S`` the
    largest interpolant slope, ``g`` is monotone, so only cells hit by that
    window are enumerated.

    Returns ``(alpha, value)``: the leftmost control whose objective is within
    ``tie_tolerance * (1 + |min|)`` of the minimum, and the minimum itself.
    """
    u_next = np.asarray(u_next, dtype=float)
    if u_next.shape != (grid.M + 1,):
        raise ValueError("u_next must have one entry per node")
    if not np.all(np.isfinite(u_next)):
        raise ValueError("u_next must be finite")
    nodes = np.arange(grid.M + 1) if nodes is None else np.atleast_1d(nodes)
    h, rho = grid.h, grid.rho
    xg = grid.x
    xi = xg[nodes]

    slopes = np.diff(u_next) / rho
    smax = float(np.max(np.abs(slopes)))
    adm_lo = (grid.a - xi) / h
    adm_hi = (grid.b - xi) / h
    win_lo = np.clip(model.l0_prime_inverse(-varpi_k - smax), adm_lo, adm_hi)
    win_hi = np.clip(model.l0_prime_inverse(-varpi_k + smax), adm_lo, adm_hi)
    c_lo = locate_cell(np.clip(xi + h * win_lo, grid.a, grid.b), grid)
    c_hi = locate_cell(np.clip(xi + h * win_hi, grid.a, grid.b), grid)
    width = int(np.max(c_hi - c_lo)) + 1

    cells = c_lo[:, None] + np.arange(width)[None, :]
    valid = cells <= c_hi[:, None]
    cells = np.minimum(cells, c_hi[:, None])
    left = np.maximum((xg[cells] - xi[:, None]) / h, win_lo[:, None])
    right = np.minimum((xg[cells + 1] - xi[:, None]) / h, win_hi[:, None])
    right = np.maximum(right, left)
    cand = np.clip(model.l0_prime_inverse(-varpi_k - slopes[cells]), left, right)

    # interpolate inside the known cell so the candidate and its cell agree
    y = xi[:, None] + h * cand
    w = np.clip((y - xg[cells]) / rho, 0.0, 1.0)
    interp = (1.0 - w) * u_next[cells] + w * u_next[cells + 1]
    vals = interp + h * (model.l0(cand) + varpi_k * cand + model.V(xi)[:, None])
    vals = np.where(valid, vals, np.inf)

    vmin = vals.min(axis=1)
    tol = cfg.tie_tolerance * (1.0 + np.abs(vmin))
    tied = vals <= (vmin + tol)[:, None]
    alpha = np.where(tied, cand, np.inf).min(axis=1)
    return alpha, vmin


def minimize_node(u_next, i: int, varpi_k: float, model: ModelSpec, grid: Grid,
                  cfg: SolverConfig) -> tuple[float, float]:
    """Selected minimiser and minimum value of the DPP objective at node ``i``."""
    if not 0 <= i <= grid.M:
        raise IndexError(f"node index {i} outside 0..{grid.M}")
    alpha, value = minimize_slice(u_next, varpi_k, model, grid, cfg, nodes=[i])
    return float(alpha[0]), float(value[0])


def hj_backward_sweep(model: ModelSpec, grid: Grid, varpi, cfg: SolverConfig,
                      u_terminal=None):
    """Backward sweep ``k = N-1..0`` for a fixed price series.

    Returns ``(u, alpha_star)`` with shapes ``(M+1, N+1)`` and ``(M+1, N)``.
    """
    varpi = np.asarray(varpi, dtype=float)
    if varpi.shape != (grid.N,):
        raise ValueError(f"price must have length N={grid.N}")
    u = grid.zeros()
    alpha = grid.zeros(grid.N)
    u[:, grid.N] = model.u_bar(grid.x) if u_terminal is None else u_terminal
    for k in range(grid.N - 1, -1, -1):
        alpha[:, k], u[:, k] = minimize_slice(u[:, k + 1], varpi[k], model, grid, cfg)
    if cfg.alpha_bound_override is not None:
        worst = float(np.max(np.abs(alpha)))
        if worst > cfg.alpha_bound_override:
            raise InvariantViolation(f"|alpha*| = {worst} exceeds bound {cfg.alpha_bound_override}")
    return u, alpha


# ---------------------------------------------------------------------------
# transport step
# ---------------------------------------------------------------------------

def push_forward(m_k, alpha_k, grid: Grid):
    """One step ``m_{i,k+1} = sum_j beta_i(x_j + h alpha_j) m_{j,k}``."""
    y = grid.x + grid.h * np.asarray(alpha_k, dtype=float)
    slack = _FOOT_SLACK * max(1.0, abs(grid.a), abs(grid.b))
    if np.any(y < grid.a - slack) or np.any(y > grid.b + slack):
        raise InvariantViolation("foot point outside the domain")
    c, w = cell_weights(y, grid)
    n = grid.M + 1
    return (np.bincount(c, weights=(1.0 - w) * m_k, minlength=n)
            + np.bincount(c + 1, weights=w * m_k, minlength=n))


def transport_forward(grid: Grid, alpha_star, m_bar, cfg: SolverConfig | None = None):
    """Forward push of ``m_bar`` with the selected controls; shape ``(M+1, N+1)``."""
    alpha_star = np.asarray(alpha_star, dtype=float)
    if alpha_star.shape != (grid.M + 1, grid.N):
        raise ValueError("alpha_star has the wrong shape")
    m = grid.zeros()
    m[:, 0] = m_bar
    for k in range(grid.N):
        m[:, k + 1] = push_forward(m[:, k], alpha_star[:, k], grid)
    return m


def check_mass(m, grid: Grid, tol: float = 1e-12) -> float:
    """Largest deviation of ``sum_i m_ik rho`` from one; raises past ``tol``."""
    if np.any(m < 0):
        raise InvariantViolation("negative density")
    dev = float(np.max(np.abs(m.sum(axis=0) * grid.rho - 1.0)))
    if dev > tol:
        raise InvariantViolation(f"mass drift {dev:.3e} exceeds {tol:.1e}")
    return dev


def boundary_mass(m, grid: Grid) -> float:
    """Largest mass carried by the two nodes at either end, over all times."""
    return float(max(m[:2].sum(axis=0).max(), m[-2:].sum(axis=0).max()) * grid.rho)


# ---------------------------------------------------------------------------
# balance condition
# ---------------------------------------------------------------------------

def solve_increasing(f, fprime, tol: float, x0: float = 0.0, max_iter: int = 200) -> float:
    """Root of a strictly increasing scalar function.

    Newton from ``x0``; steps leaving the current sign bracket, or with a
    nonpositive slope, fall back to bisection.  The bracket ``[x0-B, x0+B]``
    is found by doubling ``B``.
    """
    fx = f(x0)
    if abs(fx) <= tol:
        return x0
    B = 1.0
    lo, hi = x0 - B, x0 + B
    flo, fhi = f(lo), f(hi)
    while not (flo < 0 < fhi):
        B *= 2.0
        if B > 1e12:
            raise PriceRootError("no sign change found; DpH must be increasing")
        lo, hi = x0 - B, x0 + B
        flo, fhi = f(lo), f(hi)
    x = x0
    for _ in range(max_iter):
        if fx < 0:
            lo = max(lo, x)
        else:
            hi = min(hi, x)
        d = fprime(x)
        step_ok = d > 0 and np.isfinite(d)
        xn = x - fx / d if step_ok else 0.5 * (lo + hi)
        if not lo < xn < hi:
            xn = 0.5 * (lo + hi)
        x, fx = xn, f(xn)
        if abs(fx) <= tol or hi - lo <= 4e-16 * max(1.0, abs(x)):
            return x
    return x


def price_update(model: ModelSpec, grid: Grid, m, alpha_star, varpi_old, Q,
                 cfg: SolverConfig):
    """Implicit balance update, one scalar root per time step.

    Solves ``sum_i DpH(d + DpH^{-1}(-alpha_ik)) m_ik rho = -Q_k`` for the
    increment ``d`` and returns ``varpi_old + d``.
    """
    varpi_old = np.asarray(varpi_old, dtype=float)
    Q = np.asarray(Q, dtype=float)
    new = np.empty(grid.N)
    for k in range(grid.N):
        mk = m[:, k]
        live = mk > 0
        weights = mk[live] * grid.rho
        base = model.DpH_inverse(-alpha_star[live, k])

        def f(d, base=base, weights=weights, qk=Q[k]):
            return float(np.dot(model.DpH(d + base), weights) + qk)

        def fp(d, base=base, weights=weights):
            return float(np.dot(model.DppH(d + base), weights))

        new[k] = varpi_old[k] + solve_increasing(f, fp, cfg.price_root_tolerance)
    return new


def explicit_price_update(grid: Grid, m, alpha_star, varpi_old, Q):
    """Closed form of the balance update when ``DpH(p) = p``."""
    avg = (alpha_star * m[:, :grid.N]).sum(axis=0) * grid.rho
    return np.asarray(varpi_old) + avg - np.asarray(Q)


# ---------------------------------------------------------------------------
# outer iteration
# ---------------------------------------------------------------------------

def fixed_point_solve(model: ModelSpec, grid: Grid, Q, cfg: SolverConfig,
                      varpi0=None, m_bar=None) -> DiscreteSolution:
    """Iterate sweep -> transport -> price update until the price settles.

    Stops when ``max_k |varpi^{q+1}_k - varpi^q_k| < eps``.  The initial
    price defaults to ``-Q``.  Non-convergence is reported, not raised.
    """
    Q = np.asarray(Q, dtype=float)
    if Q.shape != (grid.N,):
        raise ValueError(f"supply must have length N={grid.N}")
    varpi = -Q.copy() if varpi0 is None else np.array(varpi0, dtype=float)
    m_bar = normalize_initial_density(model, grid) if m_bar is None else m_bar

    history = []
    converged = False
    change = np.inf
    for q in range(1, cfg.max_iterations + 1):
        u, alpha = hj_backward_sweep(model, grid, varpi, cfg)
        m = transport_forward(grid, alpha, m_bar, cfg)
        check_mass(m, grid, cfg.mass_tolerance)
        varpi_next = price_update(model, grid, m, alpha, varpi, Q, cfg)
        change = float(np.max(np.abs(varpi_next - varpi)))
        history.append(change)
        logger.debug("iteration %d: price change %.3e", q, change)
        if change < cfg.eps:
            converged = True
            break
        if q < cfg.max_iterations:
            varpi = varpi_next
    edge = boundary_mass(m, grid)
    if edge > 1e-8:
        logger.warning("density mass %.2e within one cell of the boundary; "
                       "consider a wider domain", edge)
    return DiscreteSolution(u=u, m=m, alpha_star=alpha, varpi=varpi_next, varpi_used=varpi,
                            iterations=q, converged=converged, final_price_residual=change,
                            history=history)
