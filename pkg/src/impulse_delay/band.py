"""Two-sided band policies (p, q, c, d) with a delayed upper impulse.

Below p the state is pushed up to q immediately; after the state reaches d
it is moved to c once ``delay`` time units have elapsed.  On the transformed
continuation region ``[F(p), F(d)]`` the value is the line ``rho * y + tau``;
(rho, tau) follow from continuous fit at p and d, the boundaries (p, d) for a
fixed (q, c) from smooth fit, and (q, c) from an outer search.
"""

from __future__ import annotations

import functools
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import optimize

from .diffusion import DiffusionModel, central_diff, expected_reward_g, fundamental_pair, transform_f
from .errors import (
    ConfigurationError,
    DegeneratePolicyError,
    DomainError,
    HypothesisWarning,
    NoBandError,
    WindowWarning,
)
from .special import gauss_hermite


@dataclass(frozen=True)
class BandPolicy:
    p: float
    q: float
    c: float
    d: float

    def __post_init__(self):
        if not (self.p < self.q < self.c < self.d):
            raise DomainError(f"band policy needs p < q < c < d, got {self.astuple()}")

    def astuple(self):
        return (self.p, self.q, self.c, self.d)


@dataclass(frozen=True)
class BandCostStructure:
    c1: float
    c2: float
    c3: float
    c4: float
    delay: float = 0.0
    running_reward: Callable | None = None
    expected_reward: Callable | None = None
    expected_reward_prime: Callable | None = None
    # closed-form E^x[e^{-alpha delay} C1bar(X_delay, c)] and its x-derivative
    delayed_cost: Callable | None = None
    delayed_cost_dx: Callable | None = None

    def __post_init__(self):
        if min(self.c1, self.c2, self.c3, self.c4) <= 0:
            raise ConfigurationError("band cost coefficients c1..c4 must all be positive")
        if not self.delay >= 0:
            raise ConfigurationError("delay must be non-negative")

    def hire_cost(self, x, y):
        """C2(x, y): immediate upward adjustment."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return -self.c1 * (y - x) * (y > x) - self.c2 * x

    def fire_cost(self, x, y):
        """C1(x, y): delayed adjustment, downward (fire) or upward (hire) depending on where x ended up."""
        x = np.asarray(x, dtype=float)
        return np.where(x > y, -(self.c3 * (x - y) + self.c4 * x), self.hire_cost(x, y))

    def hire_cost_dx(self, x, y):
        x = np.asarray(x, dtype=float)
        return np.where(y > x, self.c1 - self.c2, -self.c2)


@dataclass
class BandConfig:
    seed_grid: int = 60
    qc_grid: int = 40
    newton_tol: float = 1e-9
    max_halvings: int = 60
    max_newton: int = 100
    x_ref: float | None = None
    qc_bounds: tuple[float, float] | None = None
    refine_xatol: float = 1e-8
    refine_fatol: float = 1e-12
    check_hypotheses: bool = True


class _BandKit:
    def __init__(self, model: DiffusionModel, cost: BandCostStructure):
        if model.window is None:
            raise ConfigurationError("band solver needs a computational window on the model")
        self.model = model
        self.cost = cost
        self.pair = fundamental_pair(model)
        self.F = transform_f(model, self.pair)
        self.delay = cost.delay
        self.delay_factor = math.exp(-model.discount * cost.delay)
        self.g = expected_reward_g(model, cost.running_reward, cost.expected_reward)
        self.g_prime = cost.expected_reward_prime or (lambda x: central_diff(self.g, x))
        self._gh = gauss_hermite(96)
        if cost.delay > 0 and cost.delayed_cost is None and model.transition is None:
            raise ConfigurationError("delayed firing cost needs a closed form or an exact transition map")

    def c2bar(self, x, q):
        return self.cost.hire_cost(x, q) - self.g(x) + self.g(q)

    def c2bar_x(self, x, q):
        return self.cost.hire_cost_dx(x, q) - self.g_prime(x)

    def c1bar(self, x, c):
        return self.cost.fire_cost(x, c) - self.g(x) + self.g(c)

    def r1(self, x, c):
        if self.delay == 0:
            return self.c1bar(x, c)
        if self.cost.delayed_cost is not None:
            return self.cost.delayed_cost(x, c)
        x = np.asarray(x, dtype=float)
        z, w = self._gh
        xd = self.model.transition(x[..., None], self.delay, z)
        return self.delay_factor * (self.c1bar(xd, c) @ w)

    def r1_x(self, x, c):
        if self.cost.delayed_cost_dx is not None:
            return self.cost.delayed_cost_dx(x, c)
        return central_diff(lambda s: self.r1(s, c), x)

    def _slope(self, val, dval, x):
        ph = self.pair.phi(x)
        return (dval * ph - val * self.pair.phi_prime(x)) / (ph * ph) / self.F.derivative(x)

    def R1_prime(self, x, c):
        return self._slope(self.r1(x, c), self.r1_x(x, c), x)

    def R2_prime(self, x, q):
        return self._slope(self.c2bar(x, q), self.c2bar_x(x, q), x)


@functools.lru_cache(maxsize=64)
def _kit(model, cost) -> _BandKit:
    return _BandKit(model, cost)


def transformed_R1_R2(model, cost, y, c, q, derivative: bool = False):
    """(R1(y; c), R2(y; q)), optionally with their y-derivatives."""
    k = _kit(model, cost)
    y = np.asarray(y, dtype=float)
    if np.any(y <= 0):
        raise DomainError("R1, R2 are defined on the image of F, which is (0, inf)")
    x = k.F.inverse(y)
    ph = k.pair.phi(x)
    R1 = k.r1(x, c) / ph
    R2 = k.c2bar(x, q) / ph
    if derivative:
        return R1, R2, k.R1_prime(x, c), k.R2_prime(x, q)
    return R1, R2


def _rho_tau(k: _BandKit, p, q, c, d):
    """Cramer solve of the two continuous-fit equations (broadcasts)."""
    F, phi = k.F.forward, k.pair.phi
    E = k.delay_factor
    sd = E * phi(c) / phi(d)
    sp = phi(q) / phi(p)
    a11, a12 = F(d) - sd * F(c), 1.0 - sd
    a21, a22 = F(p) - sp * F(q), 1.0 - sp
    b1 = k.r1(d, c) / phi(d)
    b2 = k.c2bar(p, q) / phi(p)
    det = a11 * a22 - a12 * a21
    with np.errstate(invalid="ignore", divide="ignore"):
        rho = (b1 * a22 - a12 * b2) / det
        tau = (a11 * b2 - a21 * b1) / det
    return rho, tau, det


def rho_tau_for(model, cost, p, q, c, d):
    k = _kit(model, cost)
    if not (np.all(np.asarray(p) < q) and q < c and np.all(c < np.asarray(d))):
        raise DomainError("band policy needs p < q < c < d")
    rho, tau, det = _rho_tau(k, p, q, c, d)
    if np.any(det == 0) or not np.all(np.isfinite(det)):
        raise DegeneratePolicyError("continuous-fit system is singular for this band")
    return rho, tau


def _smooth_fit(k: _BandKit, p, q, c, d, scaled=True):
    rho, tau, _ = _rho_tau(k, p, q, c, d)
    phi, dphi, F, dF = k.pair.phi, k.pair.phi_prime, k.F.forward, k.F.derivative
    with np.errstate(invalid="ignore", divide="ignore"):
        shift_p = -(rho * F(q) + tau) * phi(q) / phi(p) ** 2 * dphi(p) / dF(p)
        slope_p = k.R2_prime(p, q)
        res_p = shift_p + slope_p - rho
        shift_d = -k.delay_factor * (rho * F(c) + tau) * phi(c) / phi(d) ** 2 * dphi(d) / dF(d)
        slope_d = k.R1_prime(d, c)
        res_d = rho - (shift_d + slope_d)
        if scaled:
            res_p = res_p / (np.abs(rho) + np.abs(shift_p) + np.abs(slope_p))
            res_d = res_d / (np.abs(rho) + np.abs(shift_d) + np.abs(slope_d))
    return res_p, res_d


def band_smooth_fit_system(model, cost, p, d, q, c, scaled: bool = True):
    """Derivative jumps W'(F(p)-) - W'(F(p)+) and W'(F(d)-) - W'(F(d)+)."""
    k = _kit(model, cost)
    BandPolicy(p, q, c, d)
    _, _, det = _rho_tau(k, p, q, c, d)
    if det == 0:
        raise DegeneratePolicyError("continuous-fit system is singular for this band")
    return _smooth_fit(k, p, q, c, d, scaled)


def _axis(lo, hi, n):
    return np.geomspace(lo, hi, n) if lo > 0 else np.linspace(lo, hi, n)


def _value_at(k: _BandKit, x, p, q, c, d, rho, tau):
    """Band value u(x) for (broadcast) policies with slope/intercept (rho, tau)."""
    psi, phi = k.pair.psi, k.pair.phi
    inside = rho * psi(x) + tau * phi(x)
    below = k.c2bar(x, q) + rho * psi(q) + tau * phi(q)
    above = k.r1(x, c) + k.delay_factor * (rho * psi(c) + tau * phi(c))
    return np.where(x <= p, below, np.where(x >= d, above, inside))


def _seed_table(k: _BandKit, q, c, n, x_ref):
    lo, hi = k.model.window
    ps = _axis(lo, q, n + 1)[:-1]
    ds = _axis(c, hi, n + 1)[1:]
    P, D = np.meshgrid(ps, ds, indexing="ij")
    rho, tau, det = _rho_tau(k, P, q, c, D)
    with np.errstate(invalid="ignore"):
        val = _value_at(k, x_ref, P, q, c, D, rho, tau)
    val = np.where(np.isfinite(val) & (det != 0), val, -np.inf)
    return ps, ds, val


def _newton(k: _BandKit, q, c, z0, cfg: BandConfig):
    lo, hi = k.model.window

    def res(z):
        p, d = z
        if not (lo < p < q and c < d < hi):
            return None
        r = np.array(_smooth_fit(k, p, q, c, d), dtype=float)
        return r if np.all(np.isfinite(r)) else None

    z = np.asarray(z0, dtype=float)
    fz = res(z)
    if fz is None:
        return None
    for it in range(cfg.max_newton):
        nrm = float(np.linalg.norm(fz))
        if nrm < cfg.newton_tol:
            return z, fz, it
        J = np.empty((2, 2))
        for j in range(2):
            h = 1e-6 * (1.0 + abs(z[j]))
            e = np.zeros(2)
            e[j] = h
            fp, fm = res(z + e), res(z - e)
            if fp is None or fm is None:
                return None
            J[:, j] = (fp - fm) / (2 * h)
        try:
            step = np.linalg.solve(J, -fz)
        except np.linalg.LinAlgError:
            return None
        t = 1.0
        for _ in range(cfg.max_halvings):
            trial = res(z + t * step)
            if trial is not None and np.linalg.norm(trial) < nrm:
                z, fz = z + t * step, trial
                break
            t *= 0.5
        else:
            return None
    return (z, fz, cfg.max_newton) if np.linalg.norm(fz) < cfg.newton_tol else None


def _solve_pd(k: _BandKit, q, c, cfg: BandConfig, x_ref=None, seed=None):
    x_ref = math.sqrt(q * c) if x_ref is None else x_ref
    if seed is not None:
        out = _newton(k, q, c, seed, cfg)
        if out is not None:
            return out
    ps, ds, val = _seed_table(k, q, c, cfg.seed_grid, x_ref)
    tried = []
    if np.any(np.isfinite(val)):
        i, j = np.unravel_index(np.argmax(val), val.shape)
        tried.append((ps[i], ds[j]))
        out = _newton(k, q, c, tried[-1], cfg)
        if out is not None:
            return out
    # fall back to the grid cell with the smallest smooth-fit residual
    P, D = np.meshgrid(ps, ds, indexing="ij")
    rp, rd = _smooth_fit(k, P, q, c, D)
    nrm = np.hypot(rp, rd)
    nrm = np.where(np.isfinite(nrm), nrm, np.inf)
    if np.isfinite(nrm).any():
        i, j = np.unravel_index(np.argmin(nrm), nrm.shape)
        tried.append((ps[i], ds[j]))
        out = _newton(k, q, c, tried[-1], cfg)
        if out is not None:
            return out
    raise NoBandError(
        f"no smooth-fit boundaries found for (q, c) = ({q}, {c})",
        {"q": q, "c": c, "seeds_tried": tried,
         "min_grid_residual": float(np.min(nrm)) if np.isfinite(nrm).any() else None},
    )


def solve_pd_given_qc(model, cost, q: float, c: float, config: BandConfig | None = None):
    """(p*, d*, rho, tau) for fixed targets (q, c)."""
    cfg = config or BandConfig()
    if not q < c:
        raise DomainError("need q < c")
    k = _kit(model, cost)
    z, _, _ = _solve_pd(k, q, c, cfg, cfg.x_ref)
    rho, tau, _ = _rho_tau(k, z[0], q, c, z[1])
    return float(z[0]), float(z[1]), float(rho), float(tau)


@dataclass
class BandSolution:
    model: DiffusionModel
    cost: BandCostStructure
    p_star: float
    q_star: float
    c_star: float
    d_star: float
    rho_star: float
    tau_star: float
    diagnostics: dict = field(default_factory=dict)

    @property
    def _k(self) -> _BandKit:
        return _kit(self.model, self.cost)

    @property
    def policy(self) -> BandPolicy:
        return BandPolicy(self.p_star, self.q_star, self.c_star, self.d_star)

    def u0(self, x):
        pr = self._k.pair
        return self.rho_star * pr.psi(x) + self.tau_star * pr.phi(x)

    def u(self, x):
        k = self._k
        x = np.asarray(x, dtype=float)
        out = np.empty_like(x)
        lo, hi = x <= self.p_star, x >= self.d_star
        mid = ~(lo | hi)
        out[lo] = k.c2bar(x[lo], self.q_star) + self.u0(self.q_star)
        out[mid] = self.u0(x[mid])
        out[hi] = k.r1(x[hi], self.c_star) + k.delay_factor * self.u0(self.c_star)
        return out if out.ndim else float(out)

    def v(self, x):
        return self.u(x) + self._k.g(np.asarray(x, dtype=float))

    def W(self, y):
        k = self._k
        x = k.F.inverse(np.asarray(y, dtype=float))
        return self.u(x) / k.pair.phi(x)

    def summary(self) -> dict:
        return {
            "rho_star": self.rho_star,
            "tau_star": self.tau_star,
            "p_star": self.p_star,
            "q_star": self.q_star,
            "c_star": self.c_star,
            "d_star": self.d_star,
            "delay": self.cost.delay,
        }


def band_policy_value(model, cost, policy: BandPolicy) -> BandSolution:
    """Value of an arbitrary band policy (no optimisation)."""
    k = _kit(model, cost)
    rho, tau, det = _rho_tau(k, *policy.astuple())
    if det == 0:
        raise DegeneratePolicyError("continuous-fit system is singular for this band")
    return BandSolution(model, cost, *policy.astuple(), float(rho), float(tau), {"optimal": False})


def check_band_hypotheses(k: _BandKit, q, c, p=None) -> dict:
    """Numerical check of the shape conditions on R1(.; c) and R2(.; q)."""
    lo, hi = k.model.window
    tail = _axis(hi - 0.25 * (hi - c), hi, 101)
    R1 = k.r1(tail, c) / k.pair.phi(tail)
    y1 = k.F.forward(tail)
    s1 = np.diff(R1) / np.diff(y1)
    # only (0, F(q)] enters the lower smooth-fit equation
    xs = _axis(lo, q, 2001)
    R2 = k.c2bar(xs, q) / k.pair.phi(xs)
    y2 = k.F.forward(xs)
    peak = int(np.argmax(R2))
    s2 = np.diff(R2[: peak + 1]) / np.diff(y2[: peak + 1])
    return {
        "R1_increasing_tail": bool(np.all(s1 > 0)),
        "R1_concave_tail": bool(np.all(np.diff(s1) <= 1e-12 * np.abs(s1[:-1]))),
        "R1_unbounded": bool(R1[-1] > R1[0] and R1[-1] > 0),
        "R2_interior_peak_below_q": bool(0 < peak < len(xs) - 1),
        "R2_concave_before_peak": bool(peak < 2 or np.all(np.diff(s2) <= 1e-9 * np.abs(s2[:-1]))),
        "R2_decreasing_after_peak": bool(np.all(np.diff(R2[peak:]) <= 0)),
    }


def optimize_qc(model, cost, config: BandConfig | None = None) -> BandSolution:
    cfg = config or BandConfig()
    k = _kit(model, cost)
    lo, hi = cfg.qc_bounds or k.model.window
    axis = _axis(lo, hi, cfg.qc_grid + 2)[1:-1]
    # the optimal band maximises u at every state, so a single common state
    # is enough to rank candidates
    x_coarse = cfg.x_ref if cfg.x_ref is not None else (math.sqrt(lo * hi) if lo > 0 else 0.5 * (lo + hi))

    # coarse stage: score each (q, c) by the best (p, d) grid cell
    score = np.full((len(axis), len(axis)), -np.inf)
    for i, q in enumerate(axis):
        for j in range(i + 1, len(axis)):
            c = axis[j]
            _, _, val = _seed_table(k, q, c, cfg.seed_grid, x_coarse)
            score[i, j] = np.max(val)
    if not np.isfinite(score).any():
        raise NoBandError("no admissible band on the window")
    i, j = np.unravel_index(np.argmax(score), score.shape)
    q0, c0 = float(axis[i]), float(axis[j])
    if i == 0 or j == len(axis) - 1 or j == i + 1:
        warnings.warn(f"coarse (q, c) optimum ({q0}, {c0}) is on the edge of the search region", WindowWarning)
    x_ref = cfg.x_ref if cfg.x_ref is not None else math.sqrt(q0 * c0)
    psi_ref, phi_ref = float(k.pair.psi(x_ref)), float(k.pair.phi(x_ref))

    warm = {"z": None}
    log_scale = lo > 0

    def unpack(t):
        return (math.exp(t[0]), math.exp(t[1])) if log_scale else (t[0], t[1])

    def objective(t):
        q, c = unpack(t)
        if not (lo < q < c < hi):
            return math.inf
        try:
            z, _, _ = _solve_pd(k, q, c, cfg, x_ref, seed=warm["z"])
        except NoBandError:
            return math.inf
        if not (z[0] < x_ref < z[1]):
            return math.inf
        warm["z"] = z
        rho, tau, _ = _rho_tau(k, z[0], q, c, z[1])
        return -(rho * psi_ref + tau * phi_ref)

    t0 = np.log([q0, c0]) if log_scale else np.array([q0, c0])
    res = optimize.minimize(
        objective, t0, method="Nelder-Mead",
        options={"xatol": cfg.refine_xatol, "fatol": cfg.refine_fatol, "maxiter": 4000,
                 "initial_simplex": np.array([t0, t0 + [0.05, 0.0], t0 + [0.0, 0.05]])},
    )
    q_star, c_star = unpack(res.x)
    z, fz, _ = _solve_pd(k, q_star, c_star, cfg, x_ref, seed=warm["z"])
    p_star, d_star = float(z[0]), float(z[1])
    rho, tau, _ = _rho_tau(k, p_star, q_star, c_star, d_star)
    diag = {
        "optimal": True,
        "residual_p": float(fz[0]),
        "residual_d": float(fz[1]),
        "x_ref": x_ref,
        "coarse_qc": (q0, c0),
        "outer_evaluations": int(res.nfev),
        "outer_converged": bool(res.success),
    }
    # sign condition of the existence result: hiring up to q must be worth more than its cost
    diag["hire_sign_condition"] = bool(cost.c1 * q_star - float(k.g(q_star)) < 0)
    if cfg.check_hypotheses:
        diag.update(check_band_hypotheses(k, q_star, c_star))
        flags = [v for kk, v in diag.items() if kk.startswith("R") or kk == "hire_sign_condition"]
        if not all(flags):
            warnings.warn("band existence conditions not all confirmed numerically", HypothesisWarning)
    return BandSolution(model, cost, p_star, q_star, c_star, d_star, float(rho), float(tau), diag)
