"""One-sided threshold policies with implementation delay.

A threshold policy (a, b) commits to intervene when the state first reaches
b; ``delay`` time units later the state is moved to a from wherever it has
drifted.  With ``u = J - g`` and ``W = (u / phi) o F^{-1}``, W is the line
``rho * y + l_c`` on ``(0, F(b)]``, so the policy is summarised by the slope
rho.  The best trigger for a fixed target solves the smooth-fit equation;
the best target maximises rho.

:func:`gamma_fixed_point_oracle` computes the same trigger by an unrelated
route (fixed point of an optimal-stopping value, each evaluated as the
smallest concave majorant on a sampled transformed grid), so it can be used
to check the smooth-fit solver.
"""

from __future__ import annotations

import functools
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import optimize

from .diffusion import (
    DiffusionModel,
    FundamentalPair,
    TransformF,
    central_diff,
    expected_reward_g,
    fundamental_pair,
    transform_f,
)
from .errors import (
    ConfigurationError,
    DegeneratePolicyError,
    DomainError,
    HypothesisWarning,
    NoThresholdError,
    OracleError,
    WindowWarning,
)
from .special import gauss_hermite


@dataclass(frozen=True)
class ThresholdCostStructure:
    running_reward: Callable | None
    intervention_cost: Callable
    delay: float = 0.0
    boundary_limit_lc: float = 0.0
    expected_reward: Callable | None = None
    expected_reward_prime: Callable | None = None
    # closed-form r(x, a) = E^x[e^{-alpha delay} Kbar(X_delay, a)] and its x-derivative
    delayed_cost: Callable | None = None
    delayed_cost_dx: Callable | None = None

    def __post_init__(self):
        if not self.delay >= 0:
            raise ConfigurationError(f"delay must be non-negative, got {self.delay}")
        if self.boundary_limit_lc < 0:
            raise ConfigurationError("l_c is a limsup of a positive part and cannot be negative")

    def check_fixed_cost(self, xs) -> None:
        xs = np.asarray(xs, dtype=float)
        if np.any(np.asarray(self.intervention_cost(xs, xs)) >= 0):
            raise ConfigurationError("K(x, x) must be negative (fixed intervention cost)")


@dataclass(frozen=True)
class ThresholdPolicy:
    a: float
    b: float

    def __post_init__(self):
        if not self.a < self.b:
            raise DomainError(f"threshold policy needs a < b, got a={self.a}, b={self.b}")


@dataclass
class ThresholdConfig:
    scan_points: int = 400
    eps_b: float = 1e-4
    a_grid: int = 200
    a_tol: float = 1e-6
    residual_tol: float = 1e-10
    a_bounds: tuple[float, float] | None = None
    check_hypotheses: bool = True


class _Kit:
    """Everything derived once from (model, cost)."""

    def __init__(self, model: DiffusionModel, cost: ThresholdCostStructure):
        if model.window is None:
            raise ConfigurationError("threshold solver needs a computational window on the model")
        self.model = model
        self.cost = cost
        self.pair: FundamentalPair = fundamental_pair(model)
        self.F: TransformF = transform_f(model, self.pair)
        self.alpha = model.discount
        self.delay = cost.delay
        self.delay_factor = math.exp(-self.alpha * cost.delay)
        self.lc = cost.boundary_limit_lc
        self.g = expected_reward_g(model, cost.running_reward, cost.expected_reward)
        self.g_prime = cost.expected_reward_prime or (lambda x: central_diff(self.g, x))
        self._gh = gauss_hermite(96)
        if cost.delay > 0 and cost.delayed_cost is None and model.transition is None:
            raise ConfigurationError("delayed cost r needs a closed form or an exact transition map")

    def kbar(self, x, y):
        return self.cost.intervention_cost(x, y) - self.g(x) + self.g(y)

    def r(self, x, a):
        if self.delay == 0:
            return self.kbar(x, a)
        if self.cost.delayed_cost is not None:
            return self.cost.delayed_cost(x, a)
        x = np.asarray(x, dtype=float)
        z, w = self._gh
        xd = self.model.transition(x[..., None], self.delay, z)
        return self.delay_factor * (self.kbar(xd, a) @ w)

    def r_x(self, x, a):
        if self.cost.delayed_cost_dx is not None and (self.delay > 0 or self.cost.delayed_cost is not None):
            return self.cost.delayed_cost_dx(x, a)
        return central_diff(lambda s: self.r(s, a), x)

    def R_prime(self, x, a):
        """dR/dy at y = F(x), by the chain rule in x."""
        ph = self.pair.phi(x)
        dph = self.pair.phi_prime(x)
        return (self.r_x(x, a) * ph - self.r(x, a) * dph) / (ph * ph) / self.F.derivative(x)


@functools.lru_cache(maxsize=64)
def _kit(model, cost) -> _Kit:
    return _Kit(model, cost)


def kbar(cost: ThresholdCostStructure, g, x, y):
    return cost.intervention_cost(x, y) - g(x) + g(y)


def delayed_cost_r(model, cost, x, a):
    return _kit(model, cost).r(x, a)


def transformed_R(model, cost, y, a, derivative: bool = False):
    k = _kit(model, cost)
    y = np.asarray(y, dtype=float)
    if np.any(y <= 0):
        raise DomainError("R is defined on the image of F, which is (0, inf)")
    x = k.F.inverse(y)
    val = k.r(x, a) / k.pair.phi(x)
    if derivative:
        return val, k.R_prime(x, a)
    return val


def _rho_parts(k: _Kit, a, b):
    q = k.delay_factor * k.pair.phi(a) / k.pair.phi(b)
    num = k.r(b, a) / k.pair.phi(b) + k.lc * (q - 1.0)
    den = k.F.forward(b) - q * k.F.forward(a)
    return num, den


def rho_for(model, cost, a, b):
    k = _kit(model, cost)
    if np.any(np.asarray(a) >= np.asarray(b)):
        raise DomainError("rho is defined for a < b")
    num, den = _rho_parts(k, a, b)
    if np.any(den == 0):
        raise DegeneratePolicyError(f"vanishing denominator in rho at a={a}, b={b}")
    return num / den


def _residual(k: _Kit, a, b, scaled=True):
    num, den = _rho_parts(k, a, b)
    with np.errstate(invalid="ignore", divide="ignore"):
        rho = num / den
        ph_b = k.pair.phi(b)
        shift = (
            -k.delay_factor
            * (rho * k.F.forward(a) + k.lc)
            * k.pair.phi(a)
            * k.pair.phi_prime(b)
            / (ph_b * ph_b * k.F.derivative(b))
        )
        slope_r = k.R_prime(b, a)
        res = rho - (shift + slope_r)
        if scaled:
            res = res / (np.abs(rho) + np.abs(shift) + np.abs(slope_r))
    return res


def smooth_fit_residual(model, cost, a, b, scaled: bool = True):
    """W'(F(b)-) - W'(F(b)+) for the policy (a, b); zero at the optimal trigger."""
    k = _kit(model, cost)
    if np.any(np.asarray(a) >= np.asarray(b)):
        raise DomainError("smooth-fit residual is defined for a < b")
    num, den = _rho_parts(k, a, b)
    if np.any(den == 0):
        raise DegeneratePolicyError(f"vanishing denominator at a={a}, b={b}")
    return _residual(k, a, b, scaled)


def _b_scan(k: _Kit, a: float, n: int, eps: float):
    hi = k.model.window[1]
    if not a < hi:
        return np.empty(0), np.empty(0)
    bs = a + np.geomspace(eps * (1.0 + abs(a)), hi - a, n)
    return bs, _residual(k, a, bs)


def _check_b_hypotheses(k: _Kit, a: float, bs) -> dict:
    hi = k.model.window[1]
    tail = np.linspace(hi - 0.25 * (hi - a), hi, 101)
    y = k.F.forward(tail)
    R = k.r(tail, a) / k.pair.phi(tail)
    slopes = np.diff(R) / np.diff(y)
    ok_inc = bool(np.all(slopes > 0))
    ok_concave = bool(np.all(np.diff(slopes) <= 1e-12 * np.abs(slopes[:-1])))
    return {"R_increasing_tail": ok_inc, "R_concave_tail": ok_concave, "R_at_window_edge": float(R[-1])}


def _solve_b(k: _Kit, a: float, cfg: ThresholdConfig) -> tuple[float, dict]:
    bs, res = _b_scan(k, a, cfg.scan_points, cfg.eps_b)
    ok = np.isfinite(res)
    # rho increases below the optimal trigger and decreases above it, so the
    # scaled residual crosses zero from below there
    idx = np.flatnonzero(ok[:-1] & ok[1:] & (res[:-1] < 0) & (res[1:] > 0))
    if idx.size == 0:
        raise NoThresholdError(
            f"no sign change of the smooth-fit residual for a={a} on the window",
            {"a": a, "b_range": (float(bs[0]) if bs.size else None, k.model.window[1]),
             "residual_min": float(np.nanmin(res)) if res.size else None,
             "residual_max": float(np.nanmax(res)) if res.size else None},
        )
    if idx.size > 1:
        num, den = _rho_parts(k, a, bs[idx])
        i = idx[int(np.argmax(num / den))]
    else:
        i = idx[0]
    f = lambda b: float(_residual(k, a, b))
    b_star = optimize.brentq(f, bs[i], bs[i + 1], xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=200)
    diag = {"residual": f(b_star), "bracket": (float(bs[i]), float(bs[i + 1])), "sign_changes": int(idx.size)}
    if cfg.check_hypotheses:
        diag.update(_check_b_hypotheses(k, a, bs))
    return b_star, diag


def solve_b_given_a(model, cost, a: float, config: ThresholdConfig | None = None) -> float:
    cfg = config or ThresholdConfig()
    k = _kit(model, cost)
    b, diag = _solve_b(k, float(a), cfg)
    if cfg.check_hypotheses and not (diag["R_increasing_tail"] and diag["R_concave_tail"]):
        warnings.warn(f"R(.; a={a}) not confirmed increasing/concave near the window edge", HypothesisWarning)
    return b


@dataclass
class ThresholdSolution:
    model: DiffusionModel
    cost: ThresholdCostStructure
    a_star: float
    b_star: float
    rho_star: float
    diagnostics: dict = field(default_factory=dict)

    @property
    def lc(self) -> float:
        return self.cost.boundary_limit_lc

    @property
    def _k(self) -> _Kit:
        return _kit(self.model, self.cost)

    def u0(self, x):
        p = self._k.pair
        return self.rho_star * p.psi(x) + self.lc * p.phi(x)

    def u(self, x):
        x = np.asarray(x, dtype=float)
        k = self._k
        below = x <= self.b_star
        out = np.empty_like(x)
        out[below] = self.u0(x[below])
        if np.any(~below):
            out[~below] = k.r(x[~below], self.a_star) + k.delay_factor * self.u0(self.a_star)
        return out if out.ndim else float(out)

    def v(self, x):
        return self.u(x) + self._k.g(np.asarray(x, dtype=float))

    def W(self, y):
        k = self._k
        x = k.F.inverse(np.asarray(y, dtype=float))
        return self.u(x) / k.pair.phi(x)

    def summary(self) -> dict:
        return {
            "a_star": self.a_star,
            "b_star": self.b_star,
            "rho_star": self.rho_star,
            "lc": self.lc,
            "delay": self.cost.delay,
        }


def policy_value(model, cost, policy: ThresholdPolicy) -> ThresholdSolution:
    """Value of an arbitrary (not necessarily optimal) threshold policy."""
    rho = float(rho_for(model, cost, policy.a, policy.b))
    return ThresholdSolution(model, cost, policy.a, policy.b, rho, {"optimal": False})


def optimize_a(model, cost, config: ThresholdConfig | None = None) -> ThresholdSolution:
    cfg = config or ThresholdConfig()
    k = _kit(model, cost)
    lo, hi = cfg.a_bounds or k.model.window
    span = hi - lo
    lo, hi = lo + 1e-3 * span, hi - 1e-3 * span
    cost.check_fixed_cost(np.linspace(lo, hi, 50))

    def best_rho(a):
        try:
            b, _ = _solve_b(k, a, ThresholdConfig(**{**cfg.__dict__, "check_hypotheses": False}))
        except NoThresholdError:
            return -np.inf, np.nan
        num, den = _rho_parts(k, a, b)
        return float(num / den), b

    grid = np.linspace(lo, hi, cfg.a_grid)
    vals = np.array([best_rho(a)[0] for a in grid])
    if not np.any(np.isfinite(vals)):
        raise NoThresholdError("no target level admits an optimal trigger on the window")
    i = int(np.argmax(vals))
    if i in (0, len(grid) - 1):
        warnings.warn(f"optimal target a lies on the search boundary ({grid[i]})", WindowWarning)
    left, right = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
    res = optimize.minimize_scalar(
        lambda a: -best_rho(a)[0], bounds=(left, right), method="bounded",
        options={"xatol": cfg.a_tol, "maxiter": 500},
    )
    a_star = float(res.x)
    b_star, diag = _solve_b(k, a_star, cfg)
    rho_star = float(rho_for(model, cost, a_star, b_star))
    if cfg.check_hypotheses and not (diag["R_increasing_tail"] and diag["R_concave_tail"]):
        warnings.warn("R not confirmed increasing/concave near the window edge", HypothesisWarning)
    diagnostics = {
        "optimal": True,
        "smooth_fit_residual": diag["residual"],
        "a_grid_best": float(grid[i]),
        "a_grid_rho": float(vals[i]),
        "outer_evaluations": int(res.nfev),
        **{kk: v for kk, v in diag.items() if kk != "residual"},
    }
    return ThresholdSolution(model, cost, a_star, b_star, rho_star, diagnostics)


# --- gamma fixed point / concave majorant oracle -------------------------------------


def upper_hull(xs, ys) -> np.ndarray:
    """Indices of the vertices of the least concave majorant of points sorted by x."""
    hull: list[int] = []
    for i in range(len(xs)):
        while len(hull) >= 2:
            o, m = hull[-2], hull[-1]
            cross = (xs[m] - xs[o]) * (ys[i] - ys[o]) - (ys[m] - ys[o]) * (xs[i] - xs[o])
            if cross >= 0:
                hull.pop()
            else:
                break
        hull.append(i)
    return np.asarray(hull, dtype=int)


@dataclass
class Majorant:
    y: np.ndarray
    values: np.ndarray
    tangency_x: float
    spacing: float

    def __call__(self, y):
        return np.interp(y, self.y, self.values)


def _one_sided_range(k: _Kit, a: float, gamma: float) -> tuple[float, float]:
    """Window cut just above the highest state below a where stopping pays.

    Threshold policies only ever stop on the way up.  If the stopping reward
    is positive far to the left of a (e.g. a quadratic running cost), the
    unrestricted stopping problem would also stop there, so that part of the
    window is excluded.
    """
    lo, hi = k.model.window
    xs = np.linspace(lo, a, 2001)
    pos = np.flatnonzero(k.r(xs, a) + k.delay_factor * gamma > 0)
    if pos.size:
        lo = xs[min(pos[-1] + 1, len(xs) - 1)]
    return float(lo), float(hi)


def concave_majorant(model, cost, a: float, gamma: float, grid_points: int = 4000,
                     refine_to: float = 1e-6, x_range: tuple[float, float] | None = None) -> Majorant:
    """Smallest concave majorant of R^gamma(.; a) through (0, l_c), on a sampled grid.

    The sampled grid is refined around the end of the linear piece until its
    spacing in x drops below ``refine_to``.
    """
    k = _kit(model, cost)
    lo, hi = x_range or _one_sided_range(k, a, gamma)
    xs = np.linspace(lo, hi, grid_points)
    spacing = xs[1] - xs[0]
    while True:
        y = k.F.forward(xs)
        R = (k.r(xs, a) + k.delay_factor * gamma) / k.pair.phi(xs)
        Y = np.concatenate(([0.0], y))
        V = np.concatenate(([k.lc], R))
        h = upper_hull(Y, V)
        j = h[1] - 1  # first vertex after the anchor, as an index into xs
        if spacing <= refine_to or j <= 0 or j >= len(xs) - 1:
            break
        zoom = np.linspace(xs[j - 1], xs[j + 1], 401)
        spacing = zoom[1] - zoom[0]
        xs = np.union1d(xs, zoom)
    return Majorant(Y[h], V[h], float(xs[j]), float(spacing))


def stopping_value_at(model, cost, a: float, gamma: float, **kw) -> tuple[float, Majorant]:
    """V_a^gamma(a) = phi(a) * W_a^gamma(F(a))."""
    k = _kit(model, cost)
    m = concave_majorant(model, cost, a, gamma, **kw)
    return float(k.pair.phi(a) * m(k.F.forward(a))), m


@dataclass
class OracleResult:
    gamma_star: float
    b_gamma_star: float
    slope: float
    resolution: float
    iterations: int
    contraction_violations: int


def gamma_fixed_point_oracle(model, cost, a: float, grid_points: int = 4000, refine_to: float = 1e-6,
                             tol: float = 1e-9, max_iter: int = 10_000) -> OracleResult:
    k = _kit(model, cost)
    xs = np.linspace(*k.model.window, 2000)
    e_kbar = k.r(xs, a) / k.delay_factor
    if not np.nanmax(e_kbar) > 0:
        raise OracleError(f"positivity condition sup_x E[Kbar(X_delay, a)] > 0 fails for a={a}")
    kw = dict(grid_points=grid_points, refine_to=refine_to)
    v0, _ = stopping_value_at(model, cost, a, 0.0, **kw)
    gamma = max(0.0, v0)
    prev_step = math.inf
    violations = 0
    for it in range(1, max_iter + 1):
        nxt, maj = stopping_value_at(model, cost, a, gamma, **kw)
        step = abs(nxt - gamma)
        if step > prev_step * (1 + 1e-9) + 1e-14:
            violations += 1
        prev_step = step
        gamma = nxt
        if step < tol * (1 + abs(gamma)):
            break
    else:
        raise OracleError(f"gamma iteration did not converge in {max_iter} steps")
    # slope of the linear piece of the majorant
    slope = float((maj.values[1] - maj.values[0]) / (maj.y[1] - maj.y[0]))
    return OracleResult(gamma, maj.tangency_x, slope, maj.spacing, it, violations)
