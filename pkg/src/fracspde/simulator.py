"""Semi-implicit Euler time stepping for the nonlocal fractional SPDE.

Direct scheme, per step and interior node::

    (I - dt A) u^{n+1} = u^n + dt F(u^n) + sigma(u^n) dB_n

with F(u) = delta * int u^q + gamma u - beta u^p and dB_n the fBm
increment over [t_n, t_{n+1}]. The transformed (pathwise) problem for
v = exp(-sigma B) u is stepped with the same splitting and left-endpoint
coefficients.
"""

from __future__ import annotations

import functools
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .operator import build_fd_matrix, principal_eigenpair
from .quadrature import composite_simpson

DEFAULT_BLOWUP_THRESHOLD = 4.5036e15
NOISE_SHAPES = ("linear", "saturating")
POS_RTOL = 1e-8

COMPLETED, THRESHOLD, OVERFLOW = "completed", "threshold", "overflow"


@dataclass(frozen=True)
class ModelParams:
    delta: float = 1.0
    gamma: float = 0.1
    beta: float = 1.0
    sigma: float = 0.1
    p: float = 2.0
    q: float = 2.0
    alpha: float = 1.2
    hurst: float = 0.6
    noise_shape: str = "linear"

    def __post_init__(self):
        if not self.p > 1:
            raise ValueError(f"p must be > 1, got {self.p}")
        if not self.q >= 1:
            raise ValueError(f"q must be >= 1, got {self.q}")
        for name in ("delta", "beta", "sigma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")
        if not 0 < self.alpha <= 2:
            raise ValueError(f"alpha must lie in (0, 2], got {self.alpha}")
        if not 0 < self.hurst < 1:
            raise ValueError(f"hurst must lie in the open interval (0, 1), got {self.hurst}")
        if self.noise_shape not in NOISE_SHAPES:
            raise ValueError(f"noise_shape must be one of {NOISE_SHAPES}, got {self.noise_shape!r}")

    def replace(self, **kw):
        d = asdict(self)
        d.update(kw)
        return ModelParams(**d)


@dataclass(frozen=True)
class GridSpec:
    M: int = 101
    N: int = 10_000
    T: float = 1.0
    blowup_threshold: float = DEFAULT_BLOWUP_THRESHOLD

    def __post_init__(self):
        if self.M < 8:
            raise ValueError(f"M must be at least 8, got {self.M}")
        if self.N < 1:
            raise ValueError(f"N must be positive, got {self.N}")
        if not self.T > 0:
            raise ValueError(f"T must be positive, got {self.T}")
        if not self.blowup_threshold > 0:
            raise ValueError("blowup_threshold must be positive")

    @property
    def dx(self):
        return 2.0 / self.M

    @property
    def dt(self):
        return self.T / self.N

    @property
    def x(self):
        """Interior nodes x_1..x_{M-1}."""
        return -1.0 + self.dx * np.arange(1, self.M)

    @property
    def t(self):
        return self.dt * np.arange(self.N + 1)

    @property
    def simpson_fallback(self):
        return self.M % 2 == 1

    def replace(self, **kw):
        d = asdict(self)
        d.update(kw)
        return GridSpec(**d)


class ImplicitSolver:
    """Cholesky factorisation of I - dt*A, reused across steps."""

    def __init__(self, matrix, dt):
        self.matrix = np.asarray(matrix)
        self.dt = dt
        self._chol = cho_factor(np.eye(self.matrix.shape[0]) - dt * self.matrix)

    def solve(self, rhs):
        return cho_solve(self._chol, rhs, check_finite=False)


@dataclass(frozen=True)
class Discretization:
    grid: GridSpec
    op: object
    eig: object
    solver: ImplicitSolver


@functools.lru_cache(maxsize=32)
def _operator_and_eig(alpha, M):
    op = build_fd_matrix(alpha, M)
    return op, principal_eigenpair(op)


@functools.lru_cache(maxsize=32)
def _solver(alpha, M, dt):
    op, _ = _operator_and_eig(alpha, M)
    return ImplicitSolver(op.matrix, dt)


def discretize(params, grid):
    op, eig = _operator_and_eig(float(params.alpha), int(grid.M))
    return Discretization(grid, op, eig, _solver(float(params.alpha), int(grid.M), grid.dt))


@dataclass
class Trajectory:
    t: np.ndarray
    x: np.ndarray
    fields: np.ndarray  # (n_snapshots, M-1)
    steps: np.ndarray


@dataclass
class BlowupRecord:
    blew_up: bool
    tau_b: float | None
    sup_history: np.ndarray = field(repr=False)
    termination: str
    positivity_violations: int = 0
    simpson_fallback: bool = False
    trajectory: Trajectory | None = field(default=None, repr=False)
    t_history: np.ndarray | None = field(default=None, repr=False)

    @property
    def sup_final(self):
        return float(self.sup_history[-1])


def make_initial_condition(kind, c, eig, grid, custom=None):
    """Initial field on interior nodes: c(1-x^2) + phi1, phi1, or custom data."""
    if c < 0:
        raise ValueError("c must be >= 0")
    x = grid.x
    if eig.phi1.size != x.size:
        raise ValueError("eigenpair and grid sizes differ")
    if kind == "bump_plus_eigen":
        f = c * (1.0 - x ** 2) + eig.phi1
    elif kind == "pure_eigen":
        f = (1.0 + c) * eig.phi1 if c else np.array(eig.phi1)
    elif kind == "custom":
        if custom is None:
            raise ValueError("custom initial data required")
        f = np.asarray(custom, dtype=float).copy()
        if f.shape != x.shape:
            raise ValueError("custom data must live on the interior nodes")
        if np.any(f < 0):
            raise ValueError("initial data must be nonnegative")
    else:
        raise ValueError(f"unknown initial condition kind {kind!r}")
    return f


def _power(u, r):
    if float(r).is_integer():
        return u ** int(r)
    return np.maximum(u, 0.0) ** r


def _nonlocal_integral(u, q, dx):
    pad = [(1, 1)] + [(0, 0)] * (u.ndim - 1)
    full = np.pad(_power(u, q), pad)
    val, _ = composite_simpson(full, dx, axis=0)
    return val


def _drift(u, params, dx, delta_factor=1.0, beta_factor=1.0, gamma=None):
    g = params.gamma if gamma is None else gamma
    Iq = _nonlocal_integral(u, params.q, dx)
    return params.delta * delta_factor * Iq + g * u - params.beta * beta_factor * _power(u, params.p)


def nonlocal_drift(u, params, grid):
    """F(u) = delta * I_q[u] + gamma u - beta u^p.

    ``u`` lives on the M-1 interior nodes (exterior taken as 0) or on all
    M+1 nodes, in which case the integral uses the values as given.
    """
    u = np.asarray(u, dtype=float)
    if not np.all(np.isfinite(u)):
        raise FloatingPointError("overflow: non-finite field entries")
    if u.shape[0] == grid.M + 1:
        Iq, _ = composite_simpson(_power(u, params.q), grid.dx, axis=0)
        return params.delta * Iq + params.gamma * u - params.beta * _power(u, params.p)
    if u.shape[0] != grid.M - 1:
        raise ValueError(f"field has {u.shape[0]} nodes; expected {grid.M - 1} or {grid.M + 1}")
    return _drift(u, params, grid.dx)


def noise_coefficient(u, params):
    if params.noise_shape == "linear":
        return params.sigma * u
    return params.sigma * u / (1.0 + u)


def step_semi_implicit(u, noise_increment, solver, params, grid):
    """One step of (I - dt A) u' = u + dt F(u) + sigma(u) dB."""
    rhs = u + grid.dt * nonlocal_drift(u, params, grid) + noise_coefficient(u, params) * noise_increment
    out = solver.solve(rhs)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("overflow: non-finite result")
    return out


@dataclass
class BatchResult:
    blew_up: np.ndarray
    tau_b: np.ndarray
    termination: list
    sup_final: np.ndarray
    positivity_violations: np.ndarray
    sup_history: np.ndarray | None = None
    fields: np.ndarray | None = None
    field_steps: np.ndarray | None = None


def evolve_batch(disc, params, U0, dB, keep_history=False, field_stride=0):
    """Advance R realizations side by side; columns of ``U0`` are initial fields.

    ``dB`` has shape (N, R). Finished columns drop out of the active set.
    Field snapshots (every ``field_stride`` steps) are only supported for R == 1.
    """
    grid = disc.grid
    dt, dx, Mb = grid.dt, grid.dx, grid.blowup_threshold
    U = np.array(U0, dtype=float, copy=True)
    if U.ndim == 1:
        U = U[:, None]
    R = U.shape[1]
    N = dB.shape[0]
    if dB.shape[1] != R:
        raise ValueError("noise array does not match batch size")
    tau = np.full(R, np.nan)
    term = np.zeros(R, dtype=np.int8)  # 0 completed, 1 threshold, 2 overflow
    viol = np.zeros(R, dtype=np.int64)
    sup_final = np.full(R, np.nan)
    hist = np.full((N + 1, R), np.nan) if keep_history else None
    s0 = U.max(axis=0)
    if hist is not None:
        hist[0] = s0
    snaps, snap_steps = [], []
    if field_stride:
        if R != 1:
            raise ValueError("field snapshots require a single realization")
        snaps.append(U[:, 0].copy())
        snap_steps.append(0)
    active = np.arange(R)
    linear_noise = params.noise_shape == "linear"
    sigma = params.sigma
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        for n in range(N):
            if active.size == 0:
                break
            F = _drift(U, params, dx)
            if linear_noise:
                noise = sigma * U * dB[n, active]
            else:
                noise = sigma * U / (1.0 + U) * dB[n, active]
            U = disc.solver.solve(U + dt * F + noise)
            s = U.max(axis=0)
            finite = np.isfinite(U).all(axis=0)
            over = ~finite
            thr = finite & (s >= Mb)
            neg = finite & (U.min(axis=0) < -POS_RTOL * np.abs(s))
            viol[active[neg]] += 1
            if hist is not None:
                hist[n + 1, active] = np.where(over, np.inf, s)
            if snaps and ((n + 1) % field_stride == 0 or n + 1 == N):
                snaps.append(U[:, 0].copy())
                snap_steps.append(n + 1)
            done = over | thr
            if done.any():
                idx = active[done]
                tau[idx] = (n + 1) * dt
                term[active[thr]] = 1
                term[active[over]] = 2
                sup_final[idx] = np.where(over[done], np.inf, s[done])
                keep = ~done
                U = U[:, keep]
                active = active[keep]
        if active.size:
            sup_final[active] = U.max(axis=0)
    names = [COMPLETED, THRESHOLD, OVERFLOW]
    res = BatchResult(term > 0, tau, [names[k] for k in term], sup_final, viol, hist)
    if snaps:
        res.fields = np.array(snaps)
        res.field_steps = np.array(snap_steps)
    return res


def simulate_realization(params, grid, path, f, store_stride=0, disc=None):
    """Run one realization to T, stopping at the first threshold crossing or overflow."""
    if path.N != grid.N:
        raise ValueError(f"path has {path.N} steps, grid expects {grid.N}")
    disc = disc or discretize(params, grid)
    res = evolve_batch(disc, params, np.asarray(f, dtype=float), path.increments[:, None],
                       keep_history=True, field_stride=store_stride)
    hist = res.sup_history[:, 0]
    last = int(np.flatnonzero(~np.isnan(hist))[-1])
    hist = hist[:last + 1]
    traj = None
    if store_stride:
        traj = Trajectory(res.field_steps * grid.dt, grid.x, res.fields, res.field_steps)
    tau = float(res.tau_b[0]) if res.blew_up[0] else None
    return BlowupRecord(bool(res.blew_up[0]), tau, hist, res.termination[0],
                        int(res.positivity_violations[0]), grid.simpson_fallback, traj,
                        grid.dt * np.arange(hist.size))


@dataclass
class TransformedRun:
    t: np.ndarray
    v_sup: np.ndarray
    u_sup: np.ndarray
    v_fields: np.ndarray | None
    u_fields: np.ndarray | None
    field_steps: np.ndarray | None
    record: BlowupRecord
    effective_gamma: float


def simulate_transformed(params, grid, path, f, variant="fbm_s1", store_stride=0, disc=None):
    """Step the random PDE for v = exp(-sigma B) u and reconstruct u.

    ``fbm_s1`` uses the linear rate gamma; ``brownian_ss1`` requires a
    Brownian path (H = 1/2) and uses gamma - sigma^2/2.
    """
    if params.noise_shape != "linear":
        raise ValueError("the exponential transform needs linear noise")
    if variant == "fbm_s1":
        g_eff = params.gamma
    elif variant == "brownian_ss1":
        if path.hurst != 0.5:
            raise ValueError("brownian_ss1 requires a Brownian path (hurst = 0.5)")
        g_eff = params.gamma - 0.5 * params.sigma ** 2
    else:
        raise ValueError(f"unknown variant {variant!r}")
    if path.N != grid.N:
        raise ValueError(f"path has {path.N} steps, grid expects {grid.N}")
    disc = disc or discretize(params, grid)
    dt, dx, Mb = grid.dt, grid.dx, grid.blowup_threshold
    sig, B = params.sigma, path.values
    v = np.asarray(f, dtype=float).copy()
    N = grid.N
    v_sup = np.full(N + 1, np.nan)
    u_sup = np.full(N + 1, np.nan)
    v_sup[0] = v.max()
    u_sup[0] = math.exp(sig * B[0]) * v_sup[0]
    vf, uf, steps = [], [], []
    if store_stride:
        vf.append(v.copy())
        uf.append(math.exp(sig * B[0]) * v)
        steps.append(0)
    termination, tau, viol = COMPLETED, None, 0
    last = N
    with np.errstate(over="ignore", invalid="ignore"):
        for n in range(N):
            qf = math.exp((params.q - 1.0) * sig * B[n])
            pf = math.exp((params.p - 1.0) * sig * B[n])
            F = _drift(v, params, dx, delta_factor=qf, beta_factor=pf, gamma=g_eff)
            v = disc.solver.solve(v + dt * F)
            ef = math.exp(sig * B[n + 1])
            vs = v.max()
            us = ef * vs
            if not np.all(np.isfinite(v)) or not math.isfinite(us):
                v_sup[n + 1] = u_sup[n + 1] = np.inf
                termination, tau, last = OVERFLOW, (n + 1) * dt, n + 1
                break
            v_sup[n + 1], u_sup[n + 1] = vs, us
            if v.min() < -POS_RTOL * abs(vs):
                viol += 1
            if store_stride and ((n + 1) % store_stride == 0 or n + 1 == N):
                vf.append(v.copy())
                uf.append(ef * v)
                steps.append(n + 1)
            if us >= Mb:
                termination, tau, last = THRESHOLD, (n + 1) * dt, n + 1
                break
    t = dt * np.arange(last + 1)
    rec = BlowupRecord(termination != COMPLETED, tau, u_sup[:last + 1], termination, viol,
                       grid.simpson_fallback, None, t)
    return TransformedRun(t, v_sup[:last + 1], u_sup[:last + 1],
                          np.array(vf) if store_stride else None,
                          np.array(uf) if store_stride else None,
                          np.array(steps) if store_stride else None,
                          rec, g_eff)
