"""Hiring and firing under stochastic demand with a firing delay.

Demand Z is geometric Brownian motion and labor L decays at quit rate
delta.  Profits are homogeneous of degree one in (Z, L), so the problem is
solved in the ratio xi = L / Z, which under the demand-weighted measure is a
driftless-in-log GBM with drift -(b + delta) xi and volatility sigma xi,
discounted at r - b.  Hiring (push xi up to q when it falls to p) is
immediate; firing (bring xi down to c after it reaches d) takes effect
``delay_lag`` later.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from ..band import BandCostStructure, BandSolution
from ..diffusion import DiffusionModel, FundamentalPair
from ..errors import ConfigurationError, HypothesisWarning, NoActionError
from ..special import norm_cdf, norm_pdf

DEFAULT_WINDOW = (1e-3, 200.0)


@dataclass(frozen=True)
class LaborParams:
    b: float = 0.03
    r: float = 0.06
    mu: float = 0.75
    sigma: float = 0.35
    delta: float = 0.1
    A: float = 5.0
    w: float = 2.0
    delta_lag: float = 0.0
    c1: float = 0.05
    c2: float = 0.1
    c3: float = 2.0
    c4: float = 1.0

    def __post_init__(self):
        if not self.r > self.b:
            raise NoActionError(
                f"discount r={self.r} must exceed demand growth b={self.b}; otherwise never intervening is optimal"
            )
        if not 0 < self.mu < 1:
            raise ConfigurationError("mu must lie in (0, 1)")
        for name in ("sigma", "delta", "A", "w", "c1", "c2", "c3", "c4"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be positive")
        if not self.delta_lag >= 0:
            raise ConfigurationError("delta_lag must be non-negative")
        if not k1_denominator(self) > 0:
            raise ConfigurationError("expected revenue diverges: k1 denominator is not positive")

    @classmethod
    def from_mapping(cls, d: dict) -> "LaborParams":
        kw = {}
        for k, v in d.items():
            if k == "sigma_t" or callable(v):
                raise ConfigurationError("only constant volatility is supported for the labor model")
            if k not in cls.__dataclass_fields__:
                raise ConfigurationError(f"unknown labor parameter {k!r}")
            kw[k] = float(v)
        return cls(**kw)

    @property
    def decay(self) -> float:
        return self.b + self.delta


def betas(p: LaborParams) -> tuple[float, float]:
    """Roots of 0.5 s^2 x^2 - (0.5 s^2 + b + delta) x + b - r = 0, larger first."""
    qa = 0.5 * p.sigma**2
    qb = -(0.5 * p.sigma**2 + p.decay)
    qc = p.b - p.r
    disc = math.sqrt(qb * qb - 4 * qa * qc)
    # stable quadratic formula
    t = -0.5 * (qb - disc)
    return t / qa, qc / t


def k1_denominator(p: LaborParams) -> float:
    s2 = 0.5 * p.sigma**2
    return p.r - p.b + p.decay * p.mu + s2 * p.mu - s2 * p.mu**2


def k1(p: LaborParams) -> float:
    return p.A**p.mu / k1_denominator(p)


def k2(p: LaborParams) -> float:
    return -p.w / (p.r + p.delta)


def running_reward(xi, p: LaborParams):
    xi = np.asarray(xi, dtype=float)
    return (p.A * xi) ** p.mu - p.w * xi


def g(xi, p: LaborParams):
    xi = np.asarray(xi, dtype=float)
    return k1(p) * xi**p.mu + k2(p) * xi


def g_prime(xi, p: LaborParams):
    xi = np.asarray(xi, dtype=float)
    return k1(p) * p.mu * xi ** (p.mu - 1) + k2(p)


def transition(xi, t, z, p: LaborParams):
    return np.asarray(xi, dtype=float) * np.exp(
        -(p.decay + 0.5 * p.sigma**2) * t + p.sigma * np.sqrt(t) * np.asarray(z, dtype=float)
    )


def d1(xi, c, p: LaborParams):
    sd = p.sigma * math.sqrt(p.delta_lag)
    return np.log(np.asarray(xi, dtype=float) / c) / sd + (0.5 * p.sigma**2 - p.decay) * math.sqrt(p.delta_lag) / p.sigma


def d2(xi, c, p: LaborParams):
    sd = p.sigma * math.sqrt(p.delta_lag)
    return np.log(np.asarray(xi, dtype=float) / c) / sd - (0.5 * p.sigma**2 + p.decay) * math.sqrt(p.delta_lag) / p.sigma


def epsilon(p: LaborParams) -> float:
    return -(p.decay + 0.5 * p.sigma**2 * (1 - p.mu)) * p.mu * p.delta_lag


# --- moments of xi after the lag, all under the reduced dynamics ---------------------


def prob_above(xi, c, p):
    """A = P(xi_lag > c)."""
    return norm_cdf(d2(xi, c, p))


def prob_below(xi, c, p):
    """B = P(xi_lag < c)."""
    return norm_cdf(-d2(xi, c, p))


def power_moment(xi, theta, p):
    """C(theta) = E[xi_lag^theta]."""
    xi = np.asarray(xi, dtype=float)
    return xi**theta * np.exp(-(p.decay + 0.5 * p.sigma**2 * (1 - theta)) * theta * p.delta_lag)


def partial_mean_above(xi, c, p):
    """D = E[xi_lag; xi_lag > c]."""
    return np.asarray(xi, dtype=float) * math.exp(-p.decay * p.delta_lag) * norm_cdf(d1(xi, c, p))


def partial_mean_below(xi, c, p):
    """E = E[xi_lag; xi_lag < c]."""
    return np.asarray(xi, dtype=float) * math.exp(-p.decay * p.delta_lag) * norm_cdf(-d1(xi, c, p))


def _cost(p: LaborParams) -> BandCostStructure:
    return BandCostStructure(p.c1, p.c2, p.c3, p.c4, delay=p.delta_lag)


def delayed_fire_cost_r(xi, c, p: LaborParams):
    """E^xi[e^{(b-r) lag} C1bar(xi_lag, c)] in closed form."""
    xi = np.asarray(xi, dtype=float)
    if p.delta_lag == 0:
        return _cost(p).fire_cost(xi, c) - g(xi, p) + g(c, p)
    K1, K2 = k1(p), k2(p)
    e = math.exp(-p.decay * p.delta_lag)
    n1, n2 = norm_cdf(d1(xi, c, p)), norm_cdf(d2(xi, c, p))
    inner = (
        -(p.c3 + p.c4) * e * xi * n1
        + (p.c1 - p.c2) * e * xi * (1.0 - n1)
        + p.c3 * c * n2
        - p.c1 * c * (1.0 - n2)
        - K1 * math.exp(epsilon(p)) * xi**p.mu
        - K2 * e * xi
        + K1 * c**p.mu
        + K2 * c
    )
    return math.exp((p.b - p.r) * p.delta_lag) * inner


def delayed_fire_cost_r_dx(xi, c, p: LaborParams):
    xi = np.asarray(xi, dtype=float)
    K1, K2 = k1(p), k2(p)
    if p.delta_lag == 0:
        return _cost(p).hire_cost_dx(xi, c) * (xi <= c) - (p.c3 + p.c4) * (xi > c) - g_prime(xi, p)
    e = math.exp(-p.decay * p.delta_lag)
    a1 = d1(xi, c, p)
    inner = (
        -(p.c3 + p.c4) * e * norm_cdf(a1)
        + (p.c1 - p.c2) * e * norm_cdf(-a1)
        + (p.c2 - p.c4) * e * norm_pdf(a1) / (p.sigma * math.sqrt(p.delta_lag))
        - K1 * p.mu * math.exp(epsilon(p)) * xi ** (p.mu - 1)
        - K2 * e
    )
    return math.exp((p.b - p.r) * p.delta_lag) * inner


def pair(p: LaborParams) -> FundamentalPair:
    b1, b2 = betas(p)
    return FundamentalPair(
        psi=lambda x: np.asarray(x, dtype=float) ** b1,
        phi=lambda x: np.asarray(x, dtype=float) ** b2,
        psi_prime=lambda x: b1 * np.asarray(x, dtype=float) ** (b1 - 1),
        phi_prime=lambda x: b2 * np.asarray(x, dtype=float) ** (b2 - 1),
        f_inverse=lambda y: np.asarray(y, dtype=float) ** (1.0 / (b1 - b2)),
    )


def build(params: LaborParams, window: tuple[float, float] = DEFAULT_WINDOW) -> tuple[DiffusionModel, BandCostStructure]:
    p = params
    if max(p.c1 - p.c2, p.c3 + p.c4) >= abs(k2(p)):
        warnings.warn("adjustment costs are not small relative to the wage bill |k2|", HypothesisWarning)
    model = DiffusionModel(
        drift=lambda x: -p.decay * np.asarray(x, dtype=float),
        volatility=lambda x: p.sigma * np.asarray(x, dtype=float),
        discount=p.r - p.b,
        interval=(0.0, math.inf),
        window=window,
        closed_form=pair(p),
        transition=lambda x, t, z: transition(x, t, z, p),
        bridge_scale="log",
        name="labor",
    )
    cost = BandCostStructure(
        p.c1, p.c2, p.c3, p.c4,
        delay=p.delta_lag,
        running_reward=lambda x: running_reward(x, p),
        expected_reward=lambda x: g(x, p),
        expected_reward_prime=lambda x: g_prime(x, p),
        delayed_cost=lambda x, c: delayed_fire_cost_r(x, c, p),
        delayed_cost_dx=lambda x, c: delayed_fire_cost_r_dx(x, c, p),
    )
    return model, cost


def lift_value(solution: BandSolution, z, l):
    """Firm value at demand z and labor l: z * Y(l / z) with Y = u + g."""
    z = np.asarray(z, dtype=float)
    l = np.asarray(l, dtype=float)
    if np.any(z <= 0) or np.any(l <= 0):
        raise ConfigurationError("demand and labor must be positive")
    return z * solution.v(l / z)
