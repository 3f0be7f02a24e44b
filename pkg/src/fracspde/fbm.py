"""Fractional Brownian motion on a uniform time grid.

Paths are drawn exactly in distribution by circulant embedding of the
fractional Gaussian noise autocovariance (Davies-Harte), with a Cholesky
fallback when the embedding is not nonnegative definite.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.linalg import cholesky

NEG_EIG_RTOL = 1e-10
TAIL_RTOL = 1e-12
MAX_EXTENSION = 64


def derive_seed(master_seed, index):
    """Stateless 64-bit seed for realization ``index`` of an ensemble."""
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(index),))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _check_hurst(H):
    if not 0.0 < H < 1.0:
        raise ValueError(f"hurst must lie in the open interval (0, 1), got {H}")


def fgn_autocovariance(H, n_lags, dt=1.0):
    """Autocovariance gamma(0..n_lags) of increments B^H(t+dt) - B^H(t)."""
    _check_hurst(H)
    if dt <= 0:
        raise ValueError("dt must be positive")
    k = np.arange(n_lags + 1, dtype=float)
    h2 = 2.0 * H
    g = 0.5 * (np.abs(k + 1) ** h2 - 2.0 * np.abs(k) ** h2 + np.abs(k - 1) ** h2)
    return g * dt ** h2


def _readonly(a):
    a = np.ascontiguousarray(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class FbmPath:
    hurst: float
    dt: float
    values: np.ndarray = field(repr=False)
    increments: np.ndarray = field(repr=False)
    seed: int | None
    method: str = "circulant"

    @classmethod
    def from_values(cls, hurst, dt, values, seed=None, method="given"):
        values = np.asarray(values, dtype=float)
        if values[0] != 0.0:
            raise ValueError("path must start at 0")
        return cls(float(hurst), float(dt), _readonly(values), _readonly(np.diff(values)), seed, method)

    @property
    def N(self):
        return self.increments.size

    @property
    def T(self):
        return self.N * self.dt

    @property
    def t(self):
        return self.dt * np.arange(self.N + 1)

    def coarsen(self, factor):
        """Same path observed on every ``factor``-th grid point."""
        if self.N % factor:
            raise ValueError("factor must divide the number of steps")
        return FbmPath.from_values(self.hurst, self.dt * factor, self.values[::factor],
                                   self.seed, self.method)

    def prefix(self, n):
        return FbmPath.from_values(self.hurst, self.dt, self.values[:n + 1], self.seed, self.method)

    def to_csv(self, path):
        bstar = running_sup_abs(self)
        t = self.t
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["n", "t", "B", "dB", "Bstar"])
            for n in range(self.N + 1):
                dB = repr(float(self.increments[n])) if n < self.N else ""
                w.writerow([n, repr(float(t[n])), repr(float(self.values[n])), dB, repr(float(bstar[n]))])


def _circulant_eigenvalues(H, N, dt):
    size = 1
    while size < 2 * (N + 1):
        size *= 2
    m = size // 2
    g = fgn_autocovariance(H, m, dt)
    row = np.concatenate([g, g[-2:0:-1]])
    return np.fft.fft(row).real, size


def _fgn_cholesky(H, N, dt, rng):
    g = fgn_autocovariance(H, N - 1, dt)
    idx = np.arange(N)
    C = g[np.abs(idx[:, None] - idx[None, :])]
    try:
        L = cholesky(C, lower=True)
    except np.linalg.LinAlgError as exc:
        raise RuntimeError("Cholesky factorisation of the fGn covariance failed") from exc
    return L @ rng.standard_normal(N)


def sample_fbm_path(H, T, N, seed):
    """Draw B^H on t_n = n T / N, n = 0..N, deterministically from ``seed``."""
    _check_hurst(H)
    if N < 2:
        raise ValueError("N must be at least 2")
    if T <= 0:
        raise ValueError("T must be positive")
    N = int(N)
    dt = T / N
    rng = np.random.default_rng(seed)
    lam, size = _circulant_eigenvalues(H, N, dt)
    neg_floor = -NEG_EIG_RTOL * lam.max()
    if lam.min() < neg_floor:
        method = "cholesky"
        fgn = _fgn_cholesky(H, N, dt, rng)
    else:
        method = "circulant"
        lam = np.clip(lam, 0.0, None)
        z = rng.standard_normal(size) + 1j * rng.standard_normal(size)
        fgn = np.fft.fft(np.sqrt(lam / size) * z).real[:N]
    values = np.concatenate(([0.0], np.cumsum(fgn)))
    return FbmPath(float(H), dt, _readonly(values), _readonly(np.diff(values)), seed, method)


def running_sup_abs(path):
    """B*(t_n) = max_{k<=n} |B(t_k)|."""
    values = path.values if isinstance(path, FbmPath) else np.asarray(path, dtype=float)
    return np.maximum.accumulate(np.abs(values))


class ExpFunctional(NamedTuple):
    value: float
    tail: float
    horizon: float
    converged: bool


def _exp_integrand(path, rho, a, gaussian_correction, n_end):
    t = path.t[:n_end + 1]
    expo = rho * path.values[:n_end + 1] - a * t
    if gaussian_correction:
        expo = expo - 0.5 * rho ** 2 * t ** (2.0 * path.hurst)
    big = np.flatnonzero(expo > 700.0)
    if big.size:
        raise OverflowError(f"exponent overflows at t={t[big[0]]:.6g}")
    return t, np.exp(expo)


def _trapz(y, t):
    return float(np.sum(0.5 * (y[1:] + y[:-1]) * np.diff(t)))


def exp_functional(path, rho, a, gaussian_correction=False, T_cut=None, T_base=None):
    """Trapezoidal integral of exp{rho B(s) - a s [- rho^2 s^{2H} / 2]} on [0, T_cut].

    ``T_cut=None`` integrates over the whole path. ``T_cut=math.inf``
    requests the infinite-horizon value: the horizon is doubled from
    ``T_base`` (default path.T / 64) until the endpoint integrand falls below
    1e-12 of the accumulated integral, capped at the path length.
    """
    if T_cut is None:
        t, y = _exp_integrand(path, rho, a, gaussian_correction, path.N)
        return ExpFunctional(_trapz(y, t), float(y[-1]), float(t[-1]), True)
    if math.isinf(T_cut):
        if a <= 0:
            raise ValueError("infinite-horizon exponential functional diverges a.s. for a <= 0")
        base = path.T / MAX_EXTENSION if T_base is None else T_base
        horizon = base
        while True:
            n_end = min(path.N, max(1, int(round(horizon / path.dt))))
            t, y = _exp_integrand(path, rho, a, gaussian_correction, n_end)
            val = _trapz(y, t)
            if y[-1] < TAIL_RTOL * val:
                return ExpFunctional(val, float(y[-1]), float(t[-1]), True)
            if n_end >= path.N or horizon >= MAX_EXTENSION * base:
                warnings.warn(f"exponential functional not converged at horizon {t[-1]:.4g}",
                              RuntimeWarning, stacklevel=2)
                return ExpFunctional(val, float(y[-1]), float(t[-1]), False)
            horizon *= 2.0
    n_end = int(round(T_cut / path.dt))
    if n_end > path.N:
        raise ValueError(f"path horizon {path.T} shorter than T_cut={T_cut}")
    t, y = _exp_integrand(path, rho, a, gaussian_correction, n_end)
    return ExpFunctional(_trapz(y, t), float(y[-1]), float(t[-1]), True)
