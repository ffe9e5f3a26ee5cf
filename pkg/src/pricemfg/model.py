"""Price-formation MFG instances: running cost, Hamiltonian, data and supply."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .grid import Grid

Fn = Callable[[np.ndarray], np.ndarray]


class ModelError(ValueError):
    """A model violates one of the standing assumptions."""


@dataclass(frozen=True)
class ModelSpec:
    """One price-formation MFG instance with separable Hamiltonian.

    ``H(x, p) = sup_a {-p a - l0(a) - V(x)}`` so ``DpH`` depends on ``p`` only
    and the optimal control is ``alpha = -DpH(p) = l0_prime_inverse(-p)``.
    """

    l0: Fn
    l0_prime: Fn
    l0_prime_inverse: Fn
    V: Fn
    u_bar: Fn
    m_hat: Fn
    H: Callable[[np.ndarray, np.ndarray], np.ndarray]
    DpH: Fn
    DpH_inverse: Fn
    DppH: Fn
    kappa: float
    lipschitz_V: float
    lipschitz_u_bar: float
    support_radius: float
    kind: str = "custom"
    params: dict = field(default_factory=dict)


def _bump(scale: float) -> Fn:
    # exp(-1/(1 - (scale x)^2)) on |scale x| < 1, zero elsewhere
    def m_hat(x):
        x = np.asarray(x, dtype=float)
        z = 1.0 - (scale * x) ** 2
        out = np.zeros_like(x)
        inside = z > 0
        out[inside] = np.exp(-1.0 / z[inside])
        return out if out.ndim else float(out)

    return m_hat


def _cbrt(q):
    return np.cbrt(q)


def make_quadratic_model(c: float = 1.0, eta: float = 1.0, tau: float = 0.25,
                         domain: tuple[float, float] = (-1.0, 1.0),
                         bump_scale: float = 1.1) -> ModelSpec:
    """Quadratic market impact ``c a^2/2`` with potential ``eta/2 (x - tau)^2``.

    Terminal cost is zero and the initial density is the smooth bump with
    support ``|x| < 1/bump_scale``.  ``lipschitz_V`` is taken over ``domain``
    since the quadratic potential is only locally Lipschitz.
    """
    if c <= 0:
        raise ModelError(f"market impact coefficient must be positive, got c={c}")
    if eta < 0:
        raise ModelError(f"eta must be nonnegative, got {eta}")
    a, b = domain
    model = ModelSpec(
        l0=lambda al: 0.5 * c * np.square(al),
        l0_prime=lambda al: c * np.asarray(al, dtype=float),
        l0_prime_inverse=lambda q: np.asarray(q, dtype=float) / c,
        V=lambda x: 0.5 * eta * np.square(np.asarray(x, dtype=float) - tau),
        u_bar=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
        m_hat=_bump(bump_scale),
        H=lambda x, p: np.square(p) / (2.0 * c) - 0.5 * eta * np.square(np.asarray(x, dtype=float) - tau),
        DpH=lambda p: np.asarray(p, dtype=float) / c,
        DpH_inverse=lambda q: c * np.asarray(q, dtype=float),
        DppH=lambda p: np.full_like(np.asarray(p, dtype=float), 1.0 / c),
        kappa=c,
        lipschitz_V=eta * max(abs(a - tau), abs(b - tau)),
        lipschitz_u_bar=0.0,
        support_radius=1.0 / bump_scale,
        kind="quadratic",
        params={"c": c, "eta": eta, "tau": tau, "bump_scale": bump_scale},
    )
    validate_model(model, domain)
    return model


def make_quartic_model(eta: float = 1.0, tau: float = 0.0, a0_bar: float = 0.0,
                       a1_bar: float = 0.0, domain: tuple[float, float] = (-1.0, 1.0),
                       bump_scale: float = 1.2, control_range: float = 100.0) -> ModelSpec:
    """Market impact ``3|a|^{4/3}/4``, linear potential and terminal cost.

    Here ``H = |p|^4/4 - V`` and ``DpH(p) = p^3``.  The convexity of ``l0``
    degenerates as ``|a| -> inf``, so ``kappa`` is the bound on
    ``|a| <= control_range``.
    """
    def l0_prime(al):
        al = np.asarray(al, dtype=float)
        return np.cbrt(al)

    model = ModelSpec(
        l0=lambda al: 0.75 * np.abs(al) ** (4.0 / 3.0),
        l0_prime=l0_prime,
        l0_prime_inverse=lambda q: np.asarray(q, dtype=float) ** 3,
        V=lambda x: tau + eta * np.asarray(x, dtype=float),
        u_bar=lambda x: a0_bar + a1_bar * np.asarray(x, dtype=float),
        m_hat=_bump(bump_scale),
        H=lambda x, p: np.asarray(p, dtype=float) ** 4 / 4.0 - (tau + eta * np.asarray(x, dtype=float)),
        DpH=lambda p: np.asarray(p, dtype=float) ** 3,
        DpH_inverse=_cbrt,
        DppH=lambda p: 3.0 * np.square(p),
        kappa=control_range ** (-2.0 / 3.0) / 3.0,
        lipschitz_V=abs(eta),
        lipschitz_u_bar=abs(a1_bar),
        support_radius=1.0 / bump_scale,
        kind="quartic",
        params={"eta": eta, "tau": tau, "a0_bar": a0_bar, "a1_bar": a1_bar,
                "bump_scale": bump_scale, "control_range": control_range},
    )
    validate_model(model, domain, control_range=control_range)
    return model


def validate_model(model: ModelSpec, domain: tuple[float, float],
                   control_range: float = 100.0, n_samples: int = 2001) -> None:
    """Sampled checks of convexity, monotonicity and data support.

    Raises ``ModelError`` on the first violation.
    """
    a, b = domain
    if model.kappa <= 0:
        raise ModelError("convexity constant must be positive")
    al = np.linspace(-control_range, control_range, n_samples)
    d = al[1] - al[0]
    second = (model.l0(al[2:]) - 2 * model.l0(al[1:-1]) + model.l0(al[:-2])) / d**2
    if np.min(second) < model.kappa * (1 - 1e-3):
        raise ModelError("l0 is not uniformly convex with the stated constant")

    xs = np.linspace(a, b, n_samples)
    if not np.all(np.isfinite(model.V(xs))):
        raise ModelError("V is not finite on the domain")
    mh = np.asarray(model.m_hat(xs))
    if np.any(mh < 0):
        raise ModelError("initial density has negative values")
    if not np.any(mh > 0):
        raise ModelError("initial density vanishes on the domain")
    if mh[0] > 0 or mh[-1] > 0 or model.support_radius >= min(-a, b):
        raise ModelError("initial density support must lie strictly inside (a, b)")

    p = np.linspace(-10.0, 10.0, n_samples)
    if np.max(np.abs(model.DpH_inverse(model.DpH(p)) - p)) > 1e-10 * (1 + np.max(np.abs(p))):
        raise ModelError("DpH_inverse is not the inverse of DpH")
    if np.any(np.diff(model.DpH(p)) <= 0):
        raise ModelError("DpH must be strictly increasing")


def normalize_initial_density(model: ModelSpec, grid: Grid) -> np.ndarray:
    """Nodal initial density scaled so that ``sum_i m_i * rho == 1``."""
    m = np.asarray(model.m_hat(grid.x), dtype=float)
    if np.any(m < 0):
        raise ModelError("initial density has negative values")
    total = m.sum() * grid.rho
    if total <= 0:
        raise ModelError("initial density is zero on every node")
    return m / total


@dataclass(frozen=True)
class SupplySpec:
    """Supply solving ``Q' = amplitude*sin(frequency*pi*t) - xi*Q``, ``Q(0) = q0``.

    Everything is evaluated in closed form.
    """

    xi: float = 4.0
    q0: float = -0.5
    amplitude: float = 5.0
    frequency: float = 3.0
    T: float = 1.0

    @property
    def _omega(self) -> float:
        return self.frequency * math.pi

    def _coeffs(self):
        w = self._omega
        denom = self.xi**2 + w**2
        if w == 0.0 or self.amplitude == 0.0:
            A = B = 0.0
        else:
            A = self.amplitude * self.xi / denom
            B = -self.amplitude * w / denom
        return A, B, self.q0 - B

    def _check(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < -1e-12) or np.any(t > self.T + 1e-12):
            raise ValueError(f"time outside [0, {self.T}]")
        return t

    def Q_bar(self, t):
        return self.amplitude * np.sin(self._omega * np.asarray(t, dtype=float))

    def Q(self, t):
        t = self._check(t)
        A, B, C = self._coeffs()
        w = self._omega
        return C * np.exp(-self.xi * t) + A * np.sin(w * t) + B * np.cos(w * t)

    def IQ(self, t):
        """``int_0^t Q``."""
        t = self._check(t)
        A, B, C = self._coeffs()
        w = self._omega
        out = C * (t if self.xi == 0 else -np.expm1(-self.xi * t) / self.xi)
        if w != 0:
            out = out + A * (1.0 - np.cos(w * t)) / w + B * np.sin(w * t) / w
        return out

    def _iq_antiderivative(self, t):
        A, B, C = self._coeffs()
        w = self._omega
        if self.xi == 0:
            out = C * t**2 / 2
        else:
            out = C * (t + np.exp(-self.xi * t) / self.xi) / self.xi
        if w != 0:
            out = out + A * (t - np.sin(w * t) / w) / w - B * np.cos(w * t) / w**2
        return out

    def IIQ(self, t):
        """``int_t^T int_0^s Q(r) dr ds``."""
        t = self._check(t)
        return self._iq_antiderivative(self.T) - self._iq_antiderivative(t)


def supply_eval(spec: SupplySpec, t):
    """Closed-form supply ``Q(t)``."""
    return spec.Q(t)
