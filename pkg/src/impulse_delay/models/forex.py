"""Central-bank exchange-rate intervention.

The log exchange rate is a standard Brownian motion.  Holding it at x costs
x^2 per unit time and each intervention costs ``fixed_cost + proportional_cost
* |jump|``.  Costs are minimised; internally we maximise the negated
quantities and flip the sign back in :func:`cost_value`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np

from ..diffusion import DiffusionModel, FundamentalPair
from ..errors import ConfigurationError
from ..special import norm_cdf
from ..threshold import ThresholdCostStructure, ThresholdSolution

RVariant = Literal["first-principles", "paper-verbatim"]
DEFAULT_WINDOW = (-30.0, 60.0)


@dataclass(frozen=True)
class ForexParams:
    fixed_cost: float = 150.0
    proportional_cost: float = 50.0
    discount: float = 0.2
    delay: float = 1.0

    def __post_init__(self):
        if not self.fixed_cost > 0:
            raise ConfigurationError("fixed_cost must be > 0")
        if not self.proportional_cost >= 0:
            raise ConfigurationError("proportional_cost must be >= 0")
        if not self.discount > 0:
            raise ConfigurationError("discount must be > 0")
        if not self.delay >= 0:
            raise ConfigurationError("delay must be >= 0")

    @classmethod
    def from_mapping(cls, d: dict) -> "ForexParams":
        alias = {"c": "fixed_cost", "lambda": "proportional_cost", "lam": "proportional_cost",
                 "alpha": "discount", "delta": "delay"}
        kw = {}
        for k, v in d.items():
            key = alias.get(k, k)
            if key not in cls.__dataclass_fields__:
                raise ConfigurationError(f"unknown forex parameter {k!r}")
            kw[key] = float(v)
        return cls(**kw)


def pair(alpha: float) -> FundamentalPair:
    s = math.sqrt(2.0 * alpha)
    return FundamentalPair(
        psi=lambda x: np.exp(s * np.asarray(x, dtype=float)),
        phi=lambda x: np.exp(-s * np.asarray(x, dtype=float)),
        psi_prime=lambda x: s * np.exp(s * np.asarray(x, dtype=float)),
        phi_prime=lambda x: -s * np.exp(-s * np.asarray(x, dtype=float)),
        f_inverse=lambda y: np.log(np.asarray(y, dtype=float)) / (2.0 * s),
    )


def running_reward(x):
    x = np.asarray(x, dtype=float)
    return -x * x


def g(x, alpha: float):
    x = np.asarray(x, dtype=float)
    return -(x * x / alpha + 1.0 / alpha**2)


def mean_abs_normal(m, var):
    """E|m + sqrt(var) Z| for Z ~ N(0, 1)."""
    m = np.asarray(m, dtype=float)
    if var == 0:
        return np.abs(m)
    sd = math.sqrt(var)
    return sd * math.sqrt(2.0 / math.pi) * np.exp(-m * m / (2.0 * var)) + m * (1.0 - 2.0 * norm_cdf(-m / sd))


def delayed_cost(x, a, p: ForexParams):
    """E^x[e^{-alpha D} Kbar(X_D, a)], X_D ~ N(x, D)."""
    x = np.asarray(x, dtype=float)
    al, D = p.discount, p.delay
    return math.exp(-al * D) * (
        -p.fixed_cost - p.proportional_cost * mean_abs_normal(x - a, D) + (x * x + D - a * a) / al
    )


def delayed_cost_dx(x, a, p: ForexParams):
    x = np.asarray(x, dtype=float)
    al, D = p.discount, p.delay
    m = x - a
    slope = np.sign(m) if D == 0 else 2.0 * norm_cdf(m / math.sqrt(D)) - 1.0
    return math.exp(-al * D) * (-p.proportional_cost * slope + 2.0 * x / al)


def delayed_cost_printed(x, a, p: ForexParams):
    """The closed form exactly as printed in the source write-up (kept for audit).

    Its |jump| expectation uses ``2 D exp(-(a-x)^2 / (4 D^2))`` and
    ``N((a-x)/D)`` where a Gaussian with variance D would give ``sqrt(D)``
    scalings; it differs from :func:`delayed_cost` by up to ~60 near x = a.
    """
    x = np.asarray(x, dtype=float)
    al, D = p.discount, p.delay
    if D == 0:
        return delayed_cost(x, a, p)
    m = a - x
    e_abs = 2.0 * D * np.exp(-m * m / (4.0 * D * D)) + m * (2.0 * norm_cdf(m / D) - 1.0)
    return math.exp(-al * D) * (-p.fixed_cost - p.proportional_cost * e_abs + (x * x - a * a + D) / al)


def transition(x, t, z):
    return np.asarray(x, dtype=float) + np.sqrt(t) * np.asarray(z, dtype=float)


def build(params: ForexParams, r_variant: RVariant = "first-principles",
          window: tuple[float, float] = DEFAULT_WINDOW) -> tuple[DiffusionModel, ThresholdCostStructure]:
    if r_variant not in ("first-principles", "paper-verbatim"):
        raise ConfigurationError(f"unknown r variant {r_variant!r}")
    al = params.discount
    model = DiffusionModel(
        drift=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
        volatility=lambda x: np.ones_like(np.asarray(x, dtype=float)),
        discount=al,
        window=window,
        closed_form=pair(al),
        transition=transition,
        name="forex",
    )
    c, lam = params.fixed_cost, params.proportional_cost
    if r_variant == "first-principles":
        r, r_x = (lambda x, a: delayed_cost(x, a, params)), (lambda x, a: delayed_cost_dx(x, a, params))
    else:
        r, r_x = (lambda x, a: delayed_cost_printed(x, a, params)), None
    cost = ThresholdCostStructure(
        running_reward=running_reward,
        intervention_cost=lambda x, y: -c - lam * np.abs(np.asarray(x, dtype=float) - y),
        delay=params.delay,
        boundary_limit_lc=0.0,
        expected_reward=lambda x: g(x, al),
        expected_reward_prime=lambda x: -2.0 * np.asarray(x, dtype=float) / al,
        delayed_cost=r,
        delayed_cost_dx=r_x,
    )
    return model, cost


def cost_value(solution: ThresholdSolution, x):
    """The optimal cost (sign-flipped value) at x."""
    return -solution.v(x)
