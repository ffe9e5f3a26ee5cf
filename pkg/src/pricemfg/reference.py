"""Analytic and semi-analytic solutions for the two benchmark models.

Quadratic model: the value function is quadratic in ``x`` with coefficients
from a backward Riccati system, the price has a closed form, and the density
follows an affine characteristic flow.  Quartic model: everything is explicit
up to one scalar quadrature of ``|Q|^{4/3}``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate, optimize
from scipy.interpolate import CubicHermiteSpline

from .grid import Grid
from .model import ModelSpec, SupplySpec


def _require(model: ModelSpec, kind: str):
    if model.kind != kind:
        raise ValueError(f"reference solution needs a {kind} model, got {model.kind!r}")


def continuum_density(model: ModelSpec, n: int = 10**6) -> tuple[Callable, float, float]:
    """Normalised initial density, its mass integral and mean.

    Composite midpoint rule over the bump support, independent of any grid.
    """
    R = model.support_radius
    s = -R + (np.arange(n) + 0.5) * (2 * R / n)
    vals = model.m_hat(s)
    mass = vals.sum() * (2 * R / n)
    mean = (s * vals).sum() * (2 * R / n) / mass

    def m_bar(x):
        return np.asarray(model.m_hat(x)) / mass

    return m_bar, mass, mean


@dataclass
class RiccatiCoefficients:
    """Dense samples of ``u = a0 + a1 x + a2 x^2`` coefficients on ``[0, T]``."""

    t: np.ndarray
    a0: np.ndarray
    a1: np.ndarray
    a2: np.ndarray
    da: np.ndarray  # shape (3, n): time derivatives at the samples
    _splines: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        self._splines = [CubicHermiteSpline(self.t, y, d)
                         for y, d in zip((self.a0, self.a1, self.a2), self.da)]

    def __call__(self, t):
        """``(a0(t), a1(t), a2(t))`` by Hermite interpolation."""
        return tuple(s(t) for s in self._splines)

    def derivative(self, t):
        """``(a0'(t), a1'(t), a2'(t))`` of the Hermite interpolants."""
        return tuple(s(t, 1) for s in self._splines)


def exact_price_test1(model: ModelSpec, supply: SupplySpec, t, mean_x: float | None = None):
    """``eta (tau - E[m_bar]) (T - t) - eta IIQ(t) - c Q(t)``."""
    _require(model, "quadratic")
    c, eta, tau = (model.params[k] for k in ("c", "eta", "tau"))
    if mean_x is None:
        mean_x = continuum_density(model)[2]
    T = supply.T
    t = np.asarray(t, dtype=float)
    return eta * (tau - mean_x) * (T - t) - eta * supply.IIQ(t) - c * supply.Q(t)


def _riccati_rhs(a, varpi, c, eta, tau):
    a0, a1, a2 = a
    p = varpi + a1
    return np.array([p * p / (2 * c) - eta * tau**2 / 2,
                     2 * a2 * p / c + eta * tau,
                     2 * a2 * a2 / c - eta / 2])


def solve_riccati_test1(model: ModelSpec, supply: SupplySpec, n_steps: int = 4096,
                        mean_x: float | None = None) -> RiccatiCoefficients:
    """Backward RK4 for the coefficients of the quadratic value function.

    Substituting ``u = a0 + a1 x + a2 x^2`` into
    ``-u_t + (varpi + u_x)^2/(2c) - eta/2 (x - tau)^2 = 0`` and matching
    powers of ``x`` gives, with zero terminal data,

        a2' = 2 a2^2 / c - eta/2
        a1' = 2 a2 (varpi + a1) / c + eta tau
        a0' = (varpi + a1)^2 / (2c) - eta tau^2 / 2
    """
    _require(model, "quadratic")
    c, eta, tau = (model.params[k] for k in ("c", "eta", "tau"))
    if mean_x is None:
        mean_x = continuum_density(model)[2]
    T = supply.T
    t = np.linspace(0.0, T, n_steps + 1)
    dt = T / n_steps
    price = lambda s: exact_price_test1(model, supply, s, mean_x)
    a = np.zeros((3, n_steps + 1))
    for n in range(n_steps, 0, -1):
        s, y = t[n], a[:, n]
        k1 = _riccati_rhs(y, price(s), c, eta, tau)
        k2 = _riccati_rhs(y - 0.5 * dt * k1, price(s - 0.5 * dt), c, eta, tau)
        k3 = _riccati_rhs(y - 0.5 * dt * k2, price(s - 0.5 * dt), c, eta, tau)
        k4 = _riccati_rhs(y - dt * k3, price(s - dt), c, eta, tau)
        a[:, n - 1] = y - dt * (k1 + 2 * k2 + 2 * k3 + k4) / 6
        if not np.all(np.isfinite(a[:, n - 1])) or np.max(np.abs(a[:, n - 1])) > 1e8:
            raise FloatingPointError("Riccati coefficients blew up")
    da = _riccati_rhs(a, price(t), c, eta, tau)
    return RiccatiCoefficients(t=t, a0=a[0], a1=a[1], a2=a[2], da=da)


@dataclass
class AffineFlow:
    """Characteristics ``X(t) = g(t) X(0) + r(t)`` sampled on a fine mesh."""

    t: np.ndarray
    g: np.ndarray
    r: np.ndarray
    dg: np.ndarray
    dr: np.ndarray
    _splines: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        self._splines = [CubicHermiteSpline(self.t, self.g, self.dg),
                         CubicHermiteSpline(self.t, self.r, self.dr)]

    def __call__(self, t):
        return self._splines[0](t), self._splines[1](t)


def affine_flow_test1(model: ModelSpec, supply: SupplySpec, riccati: RiccatiCoefficients,
                      mean_x: float | None = None) -> AffineFlow:
    """Forward RK4 for the flow of ``b(t, x) = -(varpi + a1 + 2 a2 x)/c``.

    Uses every other Riccati sample as a node and the ones in between as RK4
    midpoints, so no interpolation enters the flow.
    """
    c = model.params["c"]
    if mean_x is None:
        mean_x = continuum_density(model)[2]
    ts = riccati.t
    price = exact_price_test1(model, supply, ts, mean_x)
    q = -2.0 * riccati.a2 / c
    p = -(price + riccati.a1) / c
    n = (len(ts) - 1) // 2
    dt = ts[2] - ts[0]
    g = np.empty(n + 1)
    r = np.empty(n + 1)
    g[0], r[0] = 1.0, 0.0
    for j in range(n):
        i0, im, i1 = 2 * j, 2 * j + 1, 2 * j + 2

        def rhs(y, i):
            return np.array([q[i] * y[0], q[i] * y[1] + p[i]])

        y = np.array([g[j], r[j]])
        k1 = rhs(y, i0)
        k2 = rhs(y + 0.5 * dt * k1, im)
        k3 = rhs(y + 0.5 * dt * k2, im)
        k4 = rhs(y + dt * k3, i1)
        g[j + 1], r[j + 1] = y + dt * (k1 + 2 * k2 + 2 * k3 + k4) / 6
    qn, pn = q[::2], p[::2]
    return AffineFlow(t=ts[::2].copy(), g=g, r=r, dg=qn * g, dr=qn * r + pn)


def exact_density_test1(model: ModelSpec, flow: AffineFlow, x, t, m_bar: Callable):
    """``m(x, t) = m_bar((x - r(t))/g(t)) / g(t)``."""
    g, r = flow(t)
    if np.any(g <= 0):
        raise FloatingPointError("characteristic flow lost orientation")
    return m_bar((np.asarray(x, dtype=float) - r) / g) / g


def _supply_roots(supply: SupplySpec, n_scan: int = 10**4):
    ts = np.linspace(0.0, supply.T, n_scan + 1)
    qs = supply.Q(ts)
    roots = []
    for i in np.nonzero(np.sign(qs[:-1]) * np.sign(qs[1:]) < 0)[0]:
        roots.append(optimize.brentq(supply.Q, ts[i], ts[i + 1], xtol=1e-15))
    return np.array(roots)


def quartic_cost_integral(supply: SupplySpec, t, roots=None):
    """``int_t^T |Q(s)|^{4/3} / 4 ds``, split at the zeros of ``Q``."""
    if roots is None:
        roots = _supply_roots(supply)
    f = lambda s: np.abs(supply.Q(s)) ** (4.0 / 3.0) / 4.0
    out = []
    for tt in np.atleast_1d(np.asarray(t, dtype=float)):
        pts = [tt] + [r for r in roots if tt < r < supply.T] + [supply.T]
        total = 0.0
        for lo, hi in zip(pts[:-1], pts[1:]):
            total += integrate.quad(f, lo, hi, epsabs=1e-14, epsrel=1e-13, limit=200)[0]
        out.append(total)
    return np.array(out) if np.ndim(t) else out[0]


def exact_solution_test2(model: ModelSpec, supply: SupplySpec, x, t, m_bar: Callable | None = None,
                         roots=None):
    """``(price, value, density)`` of the quartic benchmark at ``(x, t)``."""
    _require(model, "quartic")
    eta, a1_bar = model.params["eta"], model.params["a1_bar"]
    T = supply.T
    if m_bar is None:
        m_bar = continuum_density(model)[0]
    x = np.asarray(x, dtype=float)
    price = -np.cbrt(supply.Q(t)) - (T - t) * eta - a1_bar
    value = -quartic_cost_integral(supply, t, roots) + (T - t) * model.V(x) + model.u_bar(x)
    density = m_bar(x - supply.IQ(t))
    return price, value, density


@dataclass
class ReferenceSolution:
    price: Callable
    value: Callable
    density: Callable
    metadata: dict = field(default_factory=dict)


def reference_test1(model: ModelSpec, supply: SupplySpec, n_steps: int = 4096) -> ReferenceSolution:
    m_bar, _, mean_x = continuum_density(model)
    ric = solve_riccati_test1(model, supply, n_steps, mean_x)
    flow = affine_flow_test1(model, supply, ric, mean_x)

    def value(x, t):
        a0, a1, a2 = ric(t)
        x = np.asarray(x, dtype=float)
        return a0 + a1 * x + a2 * x * x

    return ReferenceSolution(
        price=lambda t: exact_price_test1(model, supply, t, mean_x),
        value=value,
        density=lambda x, t: exact_density_test1(model, flow, x, t, m_bar),
        metadata={"test": "test1", "ode_steps": n_steps, "mean_x": mean_x,
                  "riccati": ric, "flow": flow},
    )


def reference_test2(model: ModelSpec, supply: SupplySpec) -> ReferenceSolution:
    m_bar = continuum_density(model)[0]
    roots = _supply_roots(supply)

    def pick(j):
        return lambda x, t: exact_solution_test2(model, supply, x, t, m_bar, roots)[j]

    return ReferenceSolution(
        price=lambda t: exact_solution_test2(model, supply, 0.0, t, m_bar, roots)[0],
        value=pick(1),
        density=pick(2),
        metadata={"test": "test2", "supply_roots": roots.tolist()},
    )


def reference_for(model: ModelSpec, supply: SupplySpec) -> ReferenceSolution:
    if model.kind == "quadratic":
        return reference_test1(model, supply)
    if model.kind == "quartic":
        return reference_test2(model, supply)
    raise ValueError(f"no analytic reference for model kind {model.kind!r}")


@dataclass
class ErrorReport:
    err_price: float
    err_u: float
    err_m: float
    absolute_fallback: tuple = ()

    @property
    def total(self) -> float:
        return self.err_price + self.err_u + self.err_m


def _relative(diff, exact, name, fallback):
    den = float(np.max(np.abs(exact)))
    num = float(np.max(np.abs(diff)))
    if den == 0.0:
        fallback.append(name)
        return num
    return num / den


def error_report(sol, ref: ReferenceSolution, grid: Grid) -> ErrorReport:
    """Relative sup-norm errors: price over ``k < N``, ``u`` at ``t = 0``, ``m`` at ``t = T``."""
    t = grid.t[:grid.N]
    w_exact = ref.price(t)
    u_exact = ref.value(grid.x, 0.0)
    m_exact = ref.density(grid.x, grid.T)
    if np.shape(sol.u) != (grid.M + 1, grid.N + 1) or np.shape(sol.varpi) != (grid.N,):
        raise ValueError("solution shape does not match the grid")
    fallback = []
    return ErrorReport(
        err_price=_relative(sol.varpi - w_exact, w_exact, "price", fallback),
        err_u=_relative(sol.u[:, 0] - u_exact, u_exact, "u", fallback),
        err_m=_relative(sol.m[:, grid.N] - m_exact, m_exact, "m", fallback),
        absolute_fallback=tuple(fallback),
    )
