"""Discrete Dirichlet fractional Laplacian on [-1, 1] and its principal eigenpair.

The matrix follows the weighted-trapezoid finite-difference scheme for
``(-Delta)^{s}`` with ``s = alpha/2`` (splitting parameter ``rho`` in
``(alpha, 2]``). ``FracOperator.matrix`` approximates the generator
``Delta_alpha = -(-Delta)^{alpha/2}`` and is therefore negative definite;
``stiffness`` is its negation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, eigh_tridiagonal, toeplitz
from scipy.special import gamma as gamma_fn

from .quadrature import composite_simpson

DOMAIN_LENGTH = 2.0
EIGEN_TOL = 1e-10
EIGEN_MAXITER = 10_000


class EigenSolverError(RuntimeError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


def fractional_constant(alpha):
    """1-D normalising constant C_{1,alpha} of (-Delta)^{alpha/2}."""
    return (alpha * 2.0 ** (alpha - 1.0) * gamma_fn((1.0 + alpha) / 2.0)
            / (math.sqrt(math.pi) * gamma_fn(1.0 - alpha / 2.0)))


def admissible_rho(alpha):
    """Open-closed interval (alpha, 2] for the splitting parameter."""
    return alpha, 2.0


def _freeze(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class FracOperator:
    alpha: float
    m_interior: int
    dx: float
    matrix: np.ndarray = field(repr=False)
    rho_scheme: float
    c_norm: float
    scale: float

    @property
    def M(self):
        return self.m_interior + 1

    @property
    def stiffness(self):
        """-matrix: discretisation of (-Delta)^{alpha/2} (positive definite)."""
        return -self.matrix

    @property
    def x_interior(self):
        return -1.0 + self.dx * np.arange(1, self.M)

    @property
    def x_nodes(self):
        return -1.0 + self.dx * np.arange(self.M + 1)

    def to_csv(self, path):
        np.savetxt(path, self.matrix, delimiter=",", fmt="%.17g")


@dataclass(frozen=True)
class EigenPair:
    lambda1: float
    phi1: np.ndarray = field(repr=False)
    dx: float
    residual: float
    iterations: int

    @property
    def M1(self):
        return float(self.phi1.max())

    @property
    def phi1_full(self):
        """phi1 on all nodes including the two zero boundary nodes."""
        return np.concatenate(([0.0], self.phi1, [0.0]))

    def power_integral(self, r):
        """Quadrature of int_D phi1^r.

        Positive powers use composite Simpson on the full grid (zero at the
        boundary). Negative powers are singular at the boundary and are
        integrated over the interior nodes only.
        """
        if r == 0:
            return DOMAIN_LENGTH
        if r > 0:
            val, _ = composite_simpson(self.phi1_full ** r, self.dx)
        else:
            val, _ = composite_simpson(self.phi1 ** r, self.dx)
        return float(val)


def _classical_matrix(M, dx):
    n = M - 1
    col = np.zeros(n)
    col[0] = -2.0
    if n > 1:
        col[1] = 1.0
    return toeplitz(col) / dx ** 2


def build_fd_matrix(alpha, M, rho_scheme=None):
    """Assemble the (M-1)x(M-1) Toeplitz matrix for Delta_alpha on [-1, 1].

    ``M`` is the number of grid intervals (dx = 2/M); the exterior nodes
    j=0 and j=M carry the Dirichlet condition. For ``alpha == 2`` the
    classical 3-point Laplacian is returned.
    """
    if not 0.0 < alpha <= 2.0:
        raise ValueError(f"alpha must lie in (0, 2], got {alpha}")
    if M < 8:
        raise ValueError(f"M must be at least 8 to form the stencil, got {M}")
    M = int(M)
    dx = DOMAIN_LENGTH / M
    if alpha == 2.0:
        mat = _classical_matrix(M, dx)
        return FracOperator(2.0, M - 1, dx, _freeze(mat), 2.0, 1.0, 1.0 / dx ** 2)

    s = alpha / 2.0
    if rho_scheme is None:
        rho_scheme = 1.0 + s
    lo, hi = admissible_rho(alpha)
    if not lo < rho_scheme <= hi:
        raise ValueError(f"rho_scheme must lie in ({lo}, {hi}] for alpha={alpha}, got {rho_scheme}")
    rho = float(rho_scheme)
    chi = rho - alpha
    kappa = 2.0 if rho == 2.0 else 1.0

    k = np.arange(2, M, dtype=float)
    diag = (np.sum(((k + 1) ** chi - (k - 1) ** chi) / k ** rho)
            + ((M + 1) ** chi - (M - 1) ** chi) / M ** rho
            + (2.0 ** chi + kappa - 1.0)
            + chi / (s * M ** alpha))
    col = np.empty(M - 1)
    col[0] = diag
    col[1] = -0.5 * (2.0 ** chi + kappa - 1.0)
    kk = np.arange(2, M - 1, dtype=float)
    col[2:] = -((kk + 1) ** chi - (kk - 1) ** chi) / (2.0 * kk ** rho)

    c_norm = fractional_constant(alpha)
    scale = c_norm / (chi * dx ** alpha)
    mat = -scale * toeplitz(col)
    return FracOperator(float(alpha), M - 1, dx, _freeze(mat), rho, c_norm, scale)


def principal_eigenpair(op, eigen_tol=EIGEN_TOL, max_iter=EIGEN_MAXITER):
    """Inverse power iteration on the stiffness matrix -A.

    Starts from the all-ones vector; returns phi1 normalised to unit
    integral (sum phi1 * dx = 1).
    """
    if eigen_tol <= 0:
        raise ValueError("eigen_tol must be positive")
    K = op.stiffness
    chol = cho_factor(K)
    x = np.ones(op.m_interior)
    x /= np.linalg.norm(x)
    lam = float(x @ K @ x)
    res = np.inf
    for it in range(1, max_iter + 1):
        y = cho_solve(chol, x)
        x = y / np.linalg.norm(y)
        Kx = K @ x
        lam = float(x @ Kx)
        res = float(np.linalg.norm(Kx - lam * x))
        if res <= eigen_tol * lam:
            break
    else:
        raise EigenSolverError(f"inverse iteration did not converge in {max_iter} iterations "
                               f"(residual {res:.3e})", residual=res)
    if x.sum() < 0:
        x = -x
    if np.any(x <= 0):
        raise EigenSolverError("principal eigenvector is not strictly positive", residual=res)
    phi = x / (x.sum() * op.dx)
    rel = float(np.linalg.norm(K @ phi - lam * phi) / np.linalg.norm(phi))
    return EigenPair(lam, _freeze(phi), op.dx, rel, it)


def classical_principal_eigenvalue(M):
    """Smallest eigenvalue of the 3-point Dirichlet Laplacian (-d^2/dx^2) on the same grid."""
    dx = DOMAIN_LENGTH / M
    n = M - 1
    w = eigh_tridiagonal(np.full(n, 2.0 / dx ** 2), np.full(n - 1, -1.0 / dx ** 2),
                         eigvals_only=True, select="i", select_range=(0, 0))
    return float(w[0])


def semigroup_sup_norm_profile(op, gamma, t_grid, max_substep=1e-3):
    """Sample t -> ||e^{gamma t} S_alpha(t)||_{inf->inf} on ``t_grid``.

    The semigroup is applied to the constant 1 (exterior 0) with implicit
    Euler substeps; since the discrete resolvent is entrywise positive the
    sup of the evolved vector equals the operator norm. The factor
    e^{gamma t} is applied exactly.
    """
    t = np.asarray(t_grid, dtype=float)
    if t.ndim != 1 or t.size == 0 or t[0] != 0.0 or np.any(np.diff(t) < 0):
        raise ValueError("t_grid must be sorted and start at 0")
    n = op.m_interior
    eye = np.eye(n)
    cache = {}
    w = np.ones(n)
    out = np.empty(t.size)
    out[0] = 1.0
    for i in range(1, t.size):
        span = t[i] - t[i - 1]
        if span > 0:
            nsub = max(1, math.ceil(span / max_substep - 1e-9))
            h = span / nsub
            key = round(h, 15)
            if key not in cache:
                cache[key] = cho_factor(eye - h * op.matrix)
            chol = cache[key]
            for _ in range(nsub):
                w = cho_solve(chol, w)
        m = float(w.max())
        if m <= 0 or not np.isfinite(m):
            raise ArithmeticError(f"semigroup profile lost positivity at t={t[i]}")
        out[i] = m * math.exp(gamma * t[i])
    return out


@dataclass
class SweepRow:
    alpha: float
    lambda1: float | None
    comparison_bound: float
    within_bound: bool | None
    error: str | None = None


def eigenvalue_alpha_sweep(alphas, M):
    """lambda1 for each alpha, checked against (lambda1^{(2)})^{alpha/2}."""
    lam2 = classical_principal_eigenvalue(M)
    rows = []
    for a in alphas:
        bound = lam2 ** (a / 2.0)
        try:
            if not 0.0 < a < 2.0:
                raise ValueError(f"alpha must lie in (0, 2), got {a}")
            lam = principal_eigenpair(build_fd_matrix(a, M)).lambda1
            rows.append(SweepRow(float(a), lam, bound, lam <= bound))
        except (ValueError, EigenSolverError) as exc:
            rows.append(SweepRow(float(a), None, bound, None, str(exc)))
    return rows
