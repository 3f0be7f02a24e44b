"""Closed-form blow-up time brackets, growth envelopes and probability bounds.

All hitting times are evaluated on the path grid with trapezoidal
accumulation and reported as ``Hit`` records (``hit=False`` means the
threshold was not reached within the supplied horizon).
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np

from .fbm import derive_seed, running_sup_abs, sample_fbm_path
from .quadrature import cumulative_trapezoid

DOMAIN_MEASURE = 2.0
GAMMA_EPS = 1e-15
GAMMA_MAXITER = 100_000
TAIL_RTOL = 1e-12


# ---------------------------------------------------------------- gamma

def _gamma_series(a, x):
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(GAMMA_MAXITER):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * GAMMA_EPS:
            break
    else:
        raise ArithmeticError("incomplete gamma series did not converge")
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_contfrac(a, x):
    # modified Lentz for the continued fraction of Q(a, x)
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, GAMMA_MAXITER):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < GAMMA_EPS:
            break
    else:
        raise ArithmeticError("incomplete gamma continued fraction did not converge")
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def _check_gamma_args(a, x):
    if not a > 0:
        raise ValueError(f"shape a must be > 0, got {a}")
    if not x >= 0:
        raise ValueError(f"argument x must be >= 0, got {x}")


def regularized_gamma_p(a, x):
    """Lower regularized incomplete gamma P(a, x)."""
    _check_gamma_args(a, x)
    if x == 0:
        return 0.0
    if math.isinf(x):
        return 1.0
    if x < a + 1.0:
        return min(1.0, _gamma_series(a, x))
    return max(0.0, 1.0 - _gamma_contfrac(a, x))


def regularized_gamma_q(a, x):
    """Upper regularized incomplete gamma Q(a, x) = 1 - P(a, x)."""
    _check_gamma_args(a, x)
    if x == 0:
        return 1.0
    if math.isinf(x):
        return 0.0
    if x < a + 1.0:
        return max(0.0, 1.0 - _gamma_series(a, x))
    return min(1.0, _gamma_contfrac(a, x))


# ------------------------------------------------------------- helpers

class Hit(NamedTuple):
    hit: bool
    time: float | None
    accumulated: float
    threshold: float
    index: int | None


def _first_crossing(t, cum, threshold):
    idx = np.flatnonzero(cum >= threshold)
    if idx.size:
        i = int(idx[0])
        return Hit(True, float(t[i]), float(cum[i]), float(threshold), i)
    return Hit(False, None, float(cum[-1]), float(threshold), None)


def _horizon_index(path, T):
    if T is None:
        return path.N
    n = int(round(T / path.dt))
    if n > path.N:
        raise ValueError(f"path horizon {path.T} shorter than T={T}")
    return n


def _profile_on_grid(profile, n_end):
    prof = np.asarray(profile, dtype=float)
    if prof.size < n_end + 1:
        raise ValueError(f"semigroup profile has {prof.size} samples, need {n_end + 1}")
    return prof[:n_end + 1]


def _phi_power_integral(eig, r):
    return eig.power_integral(r)


def _pq_exponent(params):
    if params.p == params.q:
        raise ValueError("p = q makes the exponent q/(q-p) undefined")
    return params.q / (params.q - params.p)


def exponent_regime(params):
    """Which ordering of p and q holds: 'p>q', 'q>p' or 'p=q'."""
    if params.p > params.q:
        return "p>q"
    if params.q > params.p:
        return "q>p"
    return "p=q"


def theta(params):
    """vartheta = sigma^2/2 - gamma for the Brownian transformed problem."""
    return 0.5 * params.sigma ** 2 - params.gamma


# -------------------------------------------------------- lower bracket

def lower_threshold(params, f_sup):
    if params.delta == 0:
        return math.inf
    return 1.0 / (params.delta * DOMAIN_MEASURE * (params.q - 1.0) * f_sup ** (params.q - 1.0))


def _lower_cumulative(path, semigroup_profile, params, n_end):
    t = path.t[:n_end + 1]
    prof = _profile_on_grid(semigroup_profile, n_end)
    q1 = params.q - 1.0
    with np.errstate(over="ignore"):
        g = np.exp(q1 * params.sigma * path.values[:n_end + 1]) * prof ** q1
    return t, g, cumulative_trapezoid(g, t)


def tau_lower_bound(path, semigroup_profile, params, f_sup, T=None):
    """First grid time where int_0^t e^{(q-1) sigma B} ||e^{gamma r} S(r)||^{q-1} dr
    reaches 1 / (delta |D| (q-1) f_sup^{q-1}).

    ``semigroup_profile`` is sampled on ``path.t``.
    """
    if not params.q > 1:
        raise ValueError("q must be > 1")
    if not f_sup > 0:
        raise ValueError("f_sup must be positive")
    n_end = _horizon_index(path, T)
    t, _, cum = _lower_cumulative(path, semigroup_profile, params, n_end)
    return _first_crossing(t, cum, lower_threshold(params, f_sup))


def growth_envelope(t_grid, path, semigroup_profile, params, f_sup):
    """G(t) and the sup-norm upper envelope profile(t) * f_sup * G(t).

    Returns (G, envelope) sampled at ``t_grid`` (points of the path grid).
    """
    t_req = np.asarray(t_grid, dtype=float)
    n_req = np.rint(t_req / path.dt).astype(int)
    if np.any(np.abs(n_req * path.dt - t_req) > 1e-9 * max(1.0, path.T)):
        raise ValueError("t_grid must lie on the path grid")
    n_end = int(n_req.max())
    t, _, cum = _lower_cumulative(path, semigroup_profile, params, n_end)
    q1 = params.q - 1.0
    bracket = 1.0 - q1 * params.delta * DOMAIN_MEASURE * f_sup ** q1 * cum[n_req]
    if np.any(bracket <= 0):
        tau = tau_lower_bound(path, semigroup_profile, params, f_sup, T=n_end * path.dt)
        raise ValueError(f"bracket nonpositive: requested times reach tau_lower = {tau.time}")
    G = bracket ** (-1.0 / q1)
    prof = _profile_on_grid(semigroup_profile, n_end)[n_req]
    return G, prof * f_sup * G


def global_existence_criterion(path, semigroup_profile, params, f_sup, T_cut=math.inf):
    """Three-valued global existence test: True, False, or None (tail not converged)."""
    if params.delta == 0 or f_sup == 0:
        return True
    q1 = params.q - 1.0
    factor = params.delta * DOMAIN_MEASURE * q1 * f_sup ** q1
    n_end = path.N if math.isinf(T_cut) else _horizon_index(path, T_cut)
    t, g, cum = _lower_cumulative(path, semigroup_profile, params, n_end)
    total = float(cum[-1])
    if not math.isfinite(total) or factor * total >= 1.0:
        return False
    if g[-1] < TAIL_RTOL * total:
        return True
    return None


# -------------------------------------------------------- upper bracket

class B1Result(NamedTuple):
    ok: bool
    margin: float
    margins: tuple
    regime: str
    bstar: float


def check_condition_B1(b, t, path, params, eig, variant="fbm"):
    """Evaluate both admissibility inequalities for amplitude ``b`` at time ``t``.

    ``variant='brownian'`` replaces lambda1 by lambda1 + vartheta.
    The margin is the smaller of the two ratios lhs / rhs.
    """
    if not b > 1:
        raise ValueError("b must be > 1")
    r = _pq_exponent(params)
    p, q, sig = params.p, params.q, params.sigma
    n = _horizon_index(path, t)
    bstar = float(running_sup_abs(path)[n])
    lam = eig.lambda1 + (theta(params) if variant == "brownian" else 0.0)
    if variant not in ("fbm", "brownian"):
        raise ValueError(f"unknown variant {variant!r}")
    I_r = _phi_power_integral(eig, r)
    I_p1 = _phi_power_integral(eig, p + 1.0)
    if I_r <= 0 or I_p1 <= 0:
        raise ValueError("negative base in fractional power")
    lhs1 = b ** (q - p) * params.delta * math.exp(-sig * (q - p) * bstar)
    rhs1 = (params.beta * eig.M1 ** p + lam * eig.M1) * DOMAIN_MEASURE ** (q - 1.0)
    lhs2 = b ** (q - p) * params.delta * math.exp(-sig * (q - 1.0) * bstar)
    rhs2 = 2.0 * params.beta * I_r ** ((q - p) / p) / I_p1 ** ((q - p) / p)
    m1 = lhs1 / rhs1 if rhs1 > 0 else (math.inf if lhs1 >= rhs1 else -math.inf)
    m2 = lhs2 / rhs2 if rhs2 > 0 else math.inf
    ok = lhs1 >= rhs1 and lhs2 >= rhs2
    return B1Result(bool(ok), float(min(m1, m2)), (float(m1), float(m2)), exponent_regime(params), bstar)


def upper_constants(params, eig, f):
    """(J0, c0, threshold) for the eigenfunction-tested upper bracket."""
    f = np.asarray(f, dtype=float)
    J0 = float(np.sum(f * eig.phi1) * eig.dx)
    r = _pq_exponent(params)
    I_r = _phi_power_integral(eig, r)
    c0 = 0.5 * params.delta * I_r ** ((params.p - params.q) / params.p)
    thr = J0 ** (1.0 - params.q) / ((params.q - 1.0) * c0) if c0 > 0 else math.inf
    return J0, c0, thr


class UpperResult(NamedTuple):
    hit: Hit
    J0: float
    c0: float
    precondition_ok: bool


def _upper_rate(params, eig, variant):
    if variant == "fbm":
        return params.gamma - eig.lambda1
    if variant == "brownian":
        return -(eig.lambda1 + theta(params))
    raise ValueError(f"unknown variant {variant!r}")


def _upper_cumulative(path, eig, params, n_end, variant):
    t = path.t[:n_end + 1]
    q1 = params.q - 1.0
    rate = _upper_rate(params, eig, variant)
    with np.errstate(over="ignore"):
        g = np.exp(params.sigma * q1 * path.values[:n_end + 1] + rate * q1 * t)
    return t, cumulative_trapezoid(g, t)


def tau_upper_bound(path, eig, params, f, T=None, b=None, variant="fbm"):
    """First grid time where int_0^t e^{sigma(q-1)B + (gamma-lambda1)(q-1)s} ds
    reaches J0^{1-q} / ((q-1) c0).

    When ``b`` is given the preconditions f >= b phi1 and the admissibility
    condition at T are checked and reported (the value is computed regardless).
    """
    J0, c0, thr = upper_constants(params, eig, f)
    n_end = _horizon_index(path, T)
    pre_ok = True
    if b is not None:
        pre_ok = bool(np.all(np.asarray(f) >= b * eig.phi1 * (1 - 1e-12)))
        pre_ok = pre_ok and check_condition_B1(b, n_end * path.dt, path, params, eig, variant).ok
    t, cum = _upper_cumulative(path, eig, params, n_end, variant)
    return UpperResult(_first_crossing(t, cum, thr), J0, c0, pre_ok)


def bernoulli_lower_profile(t_grid, path, eig, params, J0):
    """Lower growth profile e^{(gamma-lambda1)t}[J0^{1-q} - (q-1)c0 int ...]^{-1/(q-1)}."""
    t_req = np.asarray(t_grid, dtype=float)
    n_req = np.rint(t_req / path.dt).astype(int)
    n_end = int(n_req.max())
    r = _pq_exponent(params)
    c0 = 0.5 * params.delta * _phi_power_integral(eig, r) ** ((params.p - params.q) / params.p)
    q1 = params.q - 1.0
    t, cum = _upper_cumulative(path, eig, params, n_end, "fbm")
    bracket = J0 ** (-q1) - q1 * c0 * cum[n_req]
    if np.any(bracket <= 0):
        raise ValueError(f"bracket nonpositive: requested times reach tau_upper at t={t_req[bracket <= 0][0]}")
    return np.exp((params.gamma - eig.lambda1) * t_req) * bracket ** (-1.0 / q1)


# -------------------------------------------------- probability bounds

def default_alpha1(H):
    return min(1.0, H + 0.2)


def upper_threshold_x(params, eig, J0):
    """x = 2 J0^{1-q} / (delta (q-1) (int phi^{q/(q-p)})^{(p-q)/p})."""
    r = _pq_exponent(params)
    I_r = _phi_power_integral(eig, r)
    return 2.0 * J0 ** (1.0 - params.q) / (params.delta * (params.q - 1.0) * I_r ** ((params.p - params.q) / params.p))


class NHEstimate(NamedTuple):
    value: float
    se: float
    samples: np.ndarray


def _nh_ratio_sup(path, rho, a, log_x1, alpha1):
    t = path.t
    expo = -a * t - 0.5 * rho ** 2 * t ** (2.0 * path.hurst) + rho * path.values
    cum = cumulative_trapezoid(np.exp(expo), t)
    ta = t ** alpha1
    ratio = (np.log1p(cum) + ta) / (log_x1 + ta)
    # the t -> infinity limit of the ratio is 1
    return max(1.0, float(ratio.max()))


def estimate_NH(params, eig, J0, alpha1, n_paths, T_sup, seed, n_steps=1000):
    """Monte-Carlo estimate of the expected sup-ratio N(H) with its standard error."""
    if not alpha1 > params.hurst:
        raise ValueError(f"alpha1 must exceed H={params.hurst}, got {alpha1}")
    if not eig.lambda1 > params.gamma:
        raise ValueError("lambda1 <= gamma: inner integral diverges; blow-up is almost sure in this regime")
    if n_paths < 2:
        raise ValueError("n_paths must be at least 2")
    rho = params.sigma * (params.q - 1.0)
    a = (eig.lambda1 - params.gamma) * (params.q - 1.0)
    log_x1 = math.log(upper_threshold_x(params, eig, J0) + 1.0)
    vals = np.empty(n_paths)
    for i in range(n_paths):
        path = sample_fbm_path(params.hurst, T_sup, n_steps, derive_seed(seed, i))
        vals[i] = _nh_ratio_sup(path, rho, a, log_x1, alpha1)
    return NHEstimate(float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n_paths)), vals)


def blowup_prob_lower_bound_fbm(params, eig, J0, alpha1, NH):
    """Lower bound on P(tau_b < infinity) from the Gaussian tail of the sup-ratio."""
    if eig.lambda1 < params.gamma:
        return 1.0
    if eig.lambda1 == params.gamma:
        raise ValueError("lambda1 = gamma is not covered by either branch")
    if NH < 1:
        raise ValueError(f"N(H) must be >= 1, got {NH}")
    rho = params.sigma * (params.q - 1.0)
    if not rho > 0:
        raise ValueError("rho = sigma (q-1) must be positive")
    H = params.hurst
    L = math.log(upper_threshold_x(params, eig, J0) + 1.0)
    e = 2.0 * H / alpha1
    expo = (L ** (e - 2.0)) * ((alpha1 - H) / alpha1) ** (2.0 - e) * (NH - 1.0) ** 2 / (2.0 * rho ** 2)
    val = -math.expm1(-expo)
    return min(max(val, 0.0), math.nextafter(1.0, 0.0))


class BrownianBounds(NamedTuple):
    prob_lower: float
    prob_upper: float
    theta1: float
    nu: float
    N_tilde: float
    kappa: float


def brownian_bounds(params, eig, J0, f_sup):
    """Gamma-law lower and upper bounds on the blow-up probability (Brownian surrogate)."""
    if not params.sigma > 0:
        raise ValueError("sigma must be positive")
    rho = params.sigma * (params.q - 1.0)
    th = theta(params)
    theta1 = 2.0 * (eig.lambda1 + th) * (params.q - 1.0) / rho ** 2
    nu = 2.0 * th * (params.q - 1.0) / rho ** 2
    if not theta1 > 0:
        raise ValueError(f"theta1 = {theta1} must be positive")
    if not nu > 0:
        raise ValueError(f"nu = {nu} must be positive (needs sigma^2/2 > gamma)")
    r = _pq_exponent(params)
    kappa = params.delta * (params.q - 1.0) * _phi_power_integral(eig, r) ** ((params.p - params.q) / params.p)
    lower = regularized_gamma_p(theta1, kappa / (rho ** 2 * J0 ** (1.0 - params.q)))
    N_tilde = lower_threshold(params, f_sup)
    upper = regularized_gamma_p(nu, 2.0 / (rho ** 2 * N_tilde))
    return BrownianBounds(lower, upper, theta1, nu, N_tilde, kappa)


def upper_density(y, nu, rho):
    """Density h(y) of 2 / (rho^2 Z_nu), Z_nu ~ Gamma(nu, 1)."""
    y = np.asarray(y, dtype=float)
    z = 2.0 / (rho ** 2 * y)
    return np.exp(nu * np.log(z) - z - math.lgamma(nu)) / y


def brownian_exp_functional_samples(n_samples, abar, seed, T=30.0, dt=1e-3, block=1000):
    """Samples of int_0^T exp(2 (W_t - abar t)) dt by trapezoid on a Brownian grid."""
    rng = np.random.default_rng(seed)
    n_steps = int(round(T / dt))
    out = np.empty(n_samples)
    sq = math.sqrt(dt)
    for start in range(0, n_samples, block):
        m = min(block, n_samples - start)
        x = np.zeros(m)
        prev = np.ones(m)
        acc = np.zeros(m)
        for k in range(1, n_steps + 1):
            x += sq * rng.standard_normal(m) - abar * dt
            cur = np.exp(2.0 * x)
            acc += 0.5 * dt * (prev + cur)
            prev = cur
        out[start:start + m] = acc
    return out


# ------------------------------------------------------------- report

def inputs_digest(params, grid, seed):
    payload = json.dumps({"params": asdict(params), "grid": asdict(grid), "seed": seed},
                         sort_keys=True, default=repr)
    return hashlib.sha256(payload.encode()).hexdigest()


def _hit_dict(h):
    return {"hit": h.hit, "time": h.time, "accumulated": h.accumulated, "threshold": h.threshold}


@dataclass
class BoundsReport:
    tau_lower: dict
    tau_upper: dict | None
    J0: float
    c0: float | None
    b_condition_ok: bool | None
    b_margin: float | None
    exponent_regime: str
    global_existence: bool | None
    NH: float | None
    NH_se: float | None
    prob_lower_fbm: float | None
    prob_bounds_brownian: list | None
    inputs_digest: str
    path_seed: int | None = None
    notes: list = field(default_factory=list)

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True, indent=2, allow_nan=True) + "\n"

    CSV_FIELDS = ("path_seed", "tau_lower", "tau_upper", "J0", "c0", "b_condition_ok", "b_margin",
                  "global_existence", "NH", "prob_lower_fbm", "prob_lower_brownian",
                  "prob_upper_brownian", "inputs_digest")

    def csv_row(self):
        pb = self.prob_bounds_brownian or [None, None]
        up = self.tau_upper["time"] if self.tau_upper else None
        return [self.path_seed, self.tau_lower["time"], up, self.J0, self.c0,
                self.b_condition_ok, self.b_margin, self.global_existence, self.NH,
                self.prob_lower_fbm, pb[0], pb[1], self.inputs_digest]


def evaluate_bounds(params, grid, path, f, b, alpha1=None, n_paths=200, T_sup=20.0, seed=0,
                    disc=None, nh_steps=1000):
    """Evaluate every bracket and probability bound for one path and initial field."""
    from .operator import semigroup_sup_norm_profile
    from .simulator import discretize

    disc = disc or discretize(params, grid)
    eig = disc.eig
    f = np.asarray(f, dtype=float)
    f_sup = float(f.max())
    notes = []
    prof = semigroup_sup_norm_profile(disc.op, params.gamma, path.t, max_substep=min(path.dt, 1e-3))
    low = tau_lower_bound(path, prof, params, f_sup)
    ge = global_existence_criterion(path, prof, params, f_sup)
    J0 = float(np.sum(f * eig.phi1) * eig.dx)
    up_dict, c0, b1_ok, b1_margin = None, None, None, None
    try:
        up = tau_upper_bound(path, eig, params, f, b=b)
        b1 = check_condition_B1(b, path.T, path, params, eig)
        up_dict, c0, b1_ok, b1_margin = _hit_dict(up.hit), up.c0, b1.ok, b1.margin
        if not up.precondition_ok:
            notes.append("upper bracket preconditions not satisfied")
    except ValueError as exc:
        notes.append(f"upper bracket: {exc}")
    alpha1 = default_alpha1(params.hurst) if alpha1 is None else alpha1
    NH = NH_se = plow = None
    try:
        if eig.lambda1 < params.gamma:
            plow = 1.0
        else:
            est = estimate_NH(params, eig, J0, alpha1, n_paths, T_sup, seed, n_steps=nh_steps)
            NH, NH_se = est.value, est.se
            plow = blowup_prob_lower_bound_fbm(params, eig, J0, alpha1, NH)
    except (ValueError, OverflowError) as exc:
        notes.append(f"fbm probability bound: {exc}")
    pb = None
    try:
        bb = brownian_bounds(params, eig, J0, f_sup)
        pb = [bb.prob_lower, bb.prob_upper]
    except ValueError as exc:
        notes.append(f"brownian bounds: {exc}")
    return BoundsReport(_hit_dict(low), up_dict, J0, c0, b1_ok, b1_margin, exponent_regime(params),
                        ge, NH, NH_se, plow, pb, inputs_digest(params, grid, path.seed), path.seed, notes)
