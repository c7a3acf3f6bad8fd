"""One-dimensional diffusions with natural boundaries.

A :class:`DiffusionModel` bundles drift, volatility, state interval and a
discount rate.  From it we derive the increasing/decreasing fundamental
solutions psi, phi of ``(A - alpha) v = 0``, the increasing map
``F = psi / phi`` and the operator ``h -> (h / phi) o F^{-1}`` that turns
value functions into functions that are linear on the continuation region.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Literal

import numpy as np
from scipy import integrate, optimize

from .errors import ConfigurationError, DomainError, IntegrabilityError
from .special import gauss_hermite

Array = np.ndarray
Fn = Callable[[Array], Array]


def central_diff(fn: Fn, x, rel_step: float = 1e-6):
    x = np.asarray(x, dtype=float)
    h = rel_step * np.maximum(1.0, np.abs(x))
    return (fn(x + h) - fn(x - h)) / (2.0 * h)


@dataclass(frozen=True)
class FundamentalPair:
    psi: Fn
    phi: Fn
    psi_prime: Fn
    phi_prime: Fn
    # closed-form F^{-1}; None -> numerical inversion
    f_inverse: Fn | None = None
    approximate: bool = False


@dataclass(frozen=True)
class DiffusionModel:
    drift: Fn
    volatility: Fn
    discount: float
    interval: tuple[float, float] = (-math.inf, math.inf)
    window: tuple[float, float] | None = None
    closed_form: FundamentalPair | None = None
    # exact transition map X_t = transition(x, t, Z), Z ~ N(0, 1)
    transition: Callable[[Array, float, Array], Array] | None = None
    # "log" when barrier-crossing bridges are Brownian in log(x)
    bridge_scale: Literal["linear", "log"] = "linear"
    name: str = "custom"

    def __post_init__(self):
        if not self.discount > 0:
            raise ConfigurationError(f"discount must be positive, got {self.discount}")
        lo, hi = self.interval
        if not lo < hi:
            raise ConfigurationError(f"empty state interval {self.interval}")
        if self.window is not None:
            wlo, whi = self.window
            if not (lo <= wlo < whi <= hi):
                raise ConfigurationError(f"window {self.window} not inside {self.interval}")
            xs = np.linspace(wlo, whi, 64)[1:-1]
            if np.any(np.asarray(self.volatility(xs)) <= 0):
                raise ConfigurationError("volatility must be strictly positive on the window")

    def generator(self, v: Fn, x, rel_step: float = 1e-4):
        """(A - alpha) v by central differences, with the sum of absolute terms as a scale."""
        x = np.asarray(x, dtype=float)
        # on (0, inf) power-type solutions need steps proportional to x
        h = rel_step * (np.abs(x) if self.interval[0] >= 0 else np.maximum(1.0, np.abs(x)))
        vm, v0, vp = v(x - h), v(x), v(x + h)
        d1 = (vp - vm) / (2 * h)
        d2 = (vp - 2 * v0 + vm) / (h * h)
        s = self.volatility(x)
        terms = (0.5 * s * s * d2, self.drift(x) * d1, -self.discount * v0)
        scale = sum(np.abs(t) for t in terms)
        return sum(terms), scale

    def contains(self, x) -> bool:
        lo, hi = self.interval
        x = np.asarray(x)
        return bool(np.all((x > lo) & (x < hi)))


@dataclass(frozen=True)
class TransformF:
    forward: Fn
    inverse: Fn
    derivative: Fn
    image: tuple[float, float] = (0.0, math.inf)


def fundamental_pair(model: DiffusionModel, numeric: bool = False) -> FundamentalPair:
    if model.closed_form is not None and not numeric:
        return model.closed_form
    if model.window is None:
        raise ConfigurationError("numeric fundamental solutions need a finite computational window")
    return _shoot_pair(model)


def _local_rates(model: DiffusionModel, x: float) -> tuple[float, float]:
    s2 = 0.5 * float(model.volatility(x)) ** 2
    m = float(model.drift(x))
    disc = math.sqrt(m * m + 4 * s2 * model.discount)
    return (-m + disc) / (2 * s2), (-m - disc) / (2 * s2)


def _shoot_pair(model: DiffusionModel) -> FundamentalPair:
    # Riccati form w = v'/v: w' = 2(alpha - mu w)/sigma^2 - w^2, log v = int w.
    # psi is integrated forward and phi backward; both directions are stable.
    lo, hi = model.window
    mid = 0.5 * (lo + hi)
    alpha = model.discount

    def rhs(x, y):
        w = y[0]
        s = float(model.volatility(x))
        return [2.0 * (alpha - float(model.drift(x)) * w) / (s * s) - w * w, w]

    kw = dict(method="LSODA", dense_output=True, rtol=1e-11, atol=1e-13)
    up = integrate.solve_ivp(rhs, (lo, hi), [_local_rates(model, lo)[0], 0.0], **kw)
    dn = integrate.solve_ivp(rhs, (hi, lo), [_local_rates(model, hi)[1], 0.0], **kw)
    if not (up.success and dn.success):
        raise ConfigurationError("ODE shooting for fundamental solutions failed")
    up_mid = up.sol(mid)[1]
    dn_mid = dn.sol(mid)[1]

    def _clip(x):
        x = np.asarray(x, dtype=float)
        if np.any((x < lo) | (x > hi)):
            raise DomainError(f"numeric fundamental solutions only defined on window [{lo}, {hi}]")
        return x

    def psi(x):
        x = _clip(x)
        return np.exp(up.sol(x)[1] - up_mid).reshape(x.shape)

    def phi(x):
        x = _clip(x)
        return np.exp(dn.sol(x)[1] - dn_mid).reshape(x.shape)

    def psi_prime(x):
        x = _clip(x)
        return (up.sol(x)[0]).reshape(x.shape) * psi(x)

    def phi_prime(x):
        x = _clip(x)
        return (dn.sol(x)[0]).reshape(x.shape) * phi(x)

    return FundamentalPair(psi, phi, psi_prime, phi_prime, None, approximate=True)


def transform_f(model: DiffusionModel, pair: FundamentalPair | None = None) -> TransformF:
    pair = pair or fundamental_pair(model)

    def forward(x):
        return pair.psi(x) / pair.phi(x)

    def derivative(x):
        ph = pair.phi(x)
        return (pair.psi_prime(x) * ph - pair.psi(x) * pair.phi_prime(x)) / (ph * ph)

    if pair.approximate:
        lo, hi = model.window
        image = (float(forward(lo)), float(forward(hi)))
    else:
        image = (0.0, math.inf)

    if pair.f_inverse is not None:
        inverse = pair.f_inverse
    else:
        lo, hi = model.window if model.window is not None else model.interval

        def _inv_scalar(y):
            if not image[0] <= y <= image[1]:
                raise DomainError(f"{y} outside the image of F")
            ly = math.log(y)
            return optimize.brentq(lambda x: math.log(float(forward(x))) - ly, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps)

        def inverse(y):
            y = np.asarray(y, dtype=float)
            out = np.array([_inv_scalar(v) for v in y.ravel()])
            return out.reshape(y.shape) if y.ndim else float(out[0])

    return TransformF(forward, inverse, derivative, image)


def hitting_laplace(model: DiffusionModel, x, l: float, r: float, pair: FundamentalPair | None = None):
    """Return (E[e^{-alpha tau_r}; tau_r < tau_l], E[e^{-alpha tau_l}; tau_l < tau_r])."""
    if not l < r:
        raise DomainError(f"need l < r, got l={l}, r={r}")
    x = np.asarray(x, dtype=float)
    if np.any((x < l) | (x > r)):
        raise DomainError(f"x must lie in [{l}, {r}]")
    pair = pair or fundamental_pair(model)
    psi, phi = pair.psi, pair.phi
    den = psi(l) * phi(r) - psi(r) * phi(l)
    up = (psi(l) * phi(x) - psi(x) * phi(l)) / den
    down = (psi(x) * phi(r) - psi(r) * phi(x)) / den
    return np.clip(up, 0.0, 1.0), np.clip(down, 0.0, 1.0)


def expected_reward_g(
    model: DiffusionModel,
    f: Fn | None,
    analytic: Fn | None = None,
    rtol: float = 1e-8,
    nodes: int = 96,
    max_doublings: int = 12,
) -> Fn:
    """x -> E^x[int_0^inf e^{-alpha s} f(X_s) ds].

    Uses ``analytic`` when given.  Otherwise integrates the Gauss-Hermite
    transition expectation of f over time with the substitution
    ``u = 1 - exp(-alpha t)`` and extends the truncation horizon until two
    successive values agree to ``rtol``.
    """
    if analytic is not None:
        return analytic
    if f is None:
        return lambda x: np.zeros_like(np.asarray(x, dtype=float))
    if model.transition is None:
        raise ConfigurationError("numeric g requires an exact transition map on the model")
    alpha = model.discount
    z, w = gauss_hermite(nodes)
    z_half, w_half = gauss_hermite(nodes // 2)

    def mean_f(x0, t, zz=z, ww=w):
        return float(np.dot(ww, f(model.transition(np.full_like(zz, x0), t, zz))))

    def check_tail(x0, horizon, val):
        # quadrature must resolve the transition law at the horizon, and the
        # discounted integrand there must be negligible
        m_full, m_half = mean_f(x0, horizon), mean_f(x0, horizon, z_half, w_half)
        scale = max(abs(val), 1e-300)
        weight = math.exp(-alpha * horizon) / alpha
        if weight * abs(m_full - m_half) > 1e-6 * scale + 1e-12:
            raise IntegrabilityError(f"transition expectation of f not resolved at t={horizon} (x={x0})")
        if weight * abs(m_full) > 1e-6 * scale + 1e-12:
            raise IntegrabilityError(f"discounted running reward not negligible at t={horizon} (x={x0})")

    def g_scalar(x0):
        def integrand(u):
            t = -math.log1p(-u) / alpha
            return mean_f(x0, t) / alpha

        prev = None
        horizon = 8.0 / alpha
        for _ in range(max_doublings):
            u_max = -math.expm1(-alpha * horizon)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", integrate.IntegrationWarning)
                val, _err = integrate.quad(integrand, 0.0, u_max, epsabs=0.0, epsrel=1e-12, limit=400)
            if prev is not None and abs(val - prev) <= rtol * max(abs(val), 1e-300):
                check_tail(x0, horizon, val)
                return val
            prev = val
            horizon *= 2.0
        raise IntegrabilityError(f"discounted reward integral did not converge at x={x0}")

    def g(x):
        x = np.asarray(x, dtype=float)
        out = np.array([g_scalar(v) for v in x.ravel()])
        return out.reshape(x.shape) if x.ndim else float(out[0])

    return g


def to_w(h: Fn, transform: TransformF, phi: Fn) -> Fn:
    """y -> (h / phi)(F^{-1}(y)); linear in h."""
    lo, hi = transform.image

    def w(y):
        y = np.asarray(y, dtype=float)
        if np.any((y <= 0) | (y < lo) | (y > hi)):
            raise DomainError("argument outside the image of F")
        x = transform.inverse(y)
        return h(x) / phi(x)

    return w
