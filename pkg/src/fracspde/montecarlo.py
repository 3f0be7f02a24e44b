"""Seeded ensembles, parameter sweeps and cross-validation experiments.

Realizations are processed in fixed index blocks; each block is a pure
function of (inputs, master_seed, block range), so results do not depend
on the number of worker processes.
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .fbm import derive_seed, sample_fbm_path
from .simulator import discretize, evolve_batch, make_initial_condition, simulate_realization

WORKERS_ENV = "FRACSPDE_WORKERS"
BLOCK_SIZE = 250
CMP_RTOL = 1e-6
SWEEP_AXES = ("q", "H", "sigma", "c", "alpha")
SWEEP_HEADER = ("axis_value", "p_hat", "se_phat", "mean_tau", "var_tau", "n_blowup",
                "n_realizations", "master_seed")
REALIZATION_HEADER = ("realization_id", "seed", "blew_up", "tau_b", "termination", "sup_final")


class ICSpec(NamedTuple):
    kind: str = "bump_plus_eigen"
    c: float = 0.01


@dataclass(frozen=True)
class EnsembleStats:
    n_realizations: int
    n_blowup: int
    p_hat: float
    mean_tau: float | None
    var_tau: float | None
    se_phat: float
    master_seed: int


@dataclass
class EnsembleResult:
    stats: EnsembleStats
    seeds: np.ndarray
    blew_up: np.ndarray
    tau_b: np.ndarray
    termination: list
    sup_final: np.ndarray
    positivity_violations: np.ndarray

    def rows(self):
        for i in range(self.seeds.size):
            tau = float(self.tau_b[i]) if self.blew_up[i] else None
            yield (i, int(self.seeds[i]), bool(self.blew_up[i]), tau, self.termination[i],
                   float(self.sup_final[i]))


def default_workers():
    env = os.environ.get(WORKERS_ENV)
    if env:
        n = int(env)
        if n < 1:
            raise ValueError(f"{WORKERS_ENV} must be >= 1")
        return n
    return os.cpu_count() or 1


def aggregate(blew_up, tau_b, master_seed):
    n = int(blew_up.size)
    nb = int(np.count_nonzero(blew_up))
    p = nb / n
    taus = tau_b[blew_up]
    mean = float(taus.mean()) if nb else None
    var = (float(taus.var(ddof=1)) if nb > 1 else 0.0) if nb else None
    return EnsembleStats(n, nb, p, mean, var, math.sqrt(p * (1.0 - p) / n), int(master_seed))


def _run_block(args):
    params, grid, ic, master_seed, lo, hi = args
    disc = discretize(params, grid)
    f = make_initial_condition(ic.kind, ic.c, disc.eig, grid)
    seeds = np.array([derive_seed(master_seed, i) for i in range(lo, hi)], dtype=np.uint64)
    dB = np.empty((grid.N, hi - lo))
    for k, s in enumerate(seeds):
        dB[:, k] = sample_fbm_path(params.hurst, grid.T, grid.N, int(s)).increments
    U0 = np.repeat(f[:, None], hi - lo, axis=1)
    res = evolve_batch(disc, params, U0, dB)
    return seeds, res.blew_up, res.tau_b, res.termination, res.sup_final, res.positivity_violations


def run_ensemble(params, grid, ic_spec, N_R, master_seed, workers=None, block_size=BLOCK_SIZE):
    """N_R independent realizations with per-index seeds; aggregated blow-up statistics."""
    if N_R < 1:
        raise ValueError("N_R must be at least 1")
    ic_spec = ICSpec(*ic_spec)
    workers = default_workers() if workers is None else workers
    tasks = [(params, grid, ic_spec, int(master_seed), lo, min(lo + block_size, N_R))
             for lo in range(0, N_R, block_size)]
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as ex:
            parts = list(ex.map(_run_block, tasks))
    else:
        parts = [_run_block(t) for t in tasks]
    seeds = np.concatenate([p[0] for p in parts])
    blew = np.concatenate([p[1] for p in parts])
    tau = np.concatenate([p[2] for p in parts])
    term = [x for p in parts for x in p[3]]
    sup = np.concatenate([p[4] for p in parts])
    viol = np.concatenate([p[5] for p in parts])
    return EnsembleResult(aggregate(blew, tau, master_seed), seeds, blew, tau, term, sup, viol)


class SweepRow(NamedTuple):
    axis_value: float
    stats: EnsembleStats | None
    error: str | None = None


def _apply_axis(params, ic, axis, value):
    if axis == "q":
        return params.replace(q=value), ic
    if axis == "H":
        return params.replace(hurst=value), ic
    if axis == "sigma":
        return params.replace(sigma=value), ic
    if axis == "alpha":
        return params.replace(alpha=value), ic
    if axis == "c":
        return params, ICSpec(ic.kind, value)
    raise ValueError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")


def parameter_sweep(params, grid, ic_spec, N_R, master_seed, axis, values, workers=None):
    """One ensemble per value (same master seed), rows in input order."""
    if axis not in SWEEP_AXES:
        raise ValueError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")
    if len(values) == 0:
        raise ValueError("sweep values must be nonempty")
    ic_spec = ICSpec(*ic_spec)
    rows = []
    for v in values:
        try:
            p, ic = _apply_axis(params, ic_spec, axis, float(v))
            st = run_ensemble(p, grid, ic, N_R, master_seed, workers=workers).stats
            rows.append(SweepRow(float(v), st))
        except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
            rows.append(SweepRow(float(v), None, f"{type(exc).__name__}: {exc}"))
    return rows


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_sweep_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_HEADER)
        for r in rows:
            s = r.stats
            if s is None:
                w.writerow([_fmt(r.axis_value)] + [""] * (len(SWEEP_HEADER) - 1))
                continue
            w.writerow([_fmt(v) for v in (r.axis_value, s.p_hat, s.se_phat, s.mean_tau, s.var_tau,
                                          s.n_blowup, s.n_realizations, s.master_seed)])


def write_realizations_csv(result, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REALIZATION_HEADER)
        for row in result.rows():
            w.writerow([_fmt(v) for v in row])


class ComparisonResult(NamedTuple):
    max_violation: float
    relative_violation: float
    passed: bool
    steps_compared: int


def pathwise_comparison_test(params, grid, path_seed, f_low, f_high, cmp_tol=CMP_RTOL):
    """Max positive part of u_low - u_high over all steps before either run blows up."""
    f_low = np.asarray(f_low, dtype=float)
    f_high = np.asarray(f_high, dtype=float)
    if np.any(f_low > f_high):
        raise ValueError("f_low must not exceed f_high")
    disc = discretize(params, grid)
    path = sample_fbm_path(params.hurst, grid.T, grid.N, path_seed)
    lo = simulate_realization(params, grid, path, f_low, store_stride=1, disc=disc)
    hi = simulate_realization(params, grid, path, f_high, store_stride=1, disc=disc)
    n = min(lo.trajectory.fields.shape[0], hi.trajectory.fields.shape[0])
    if lo.blew_up or hi.blew_up:
        n -= 1  # the crossing step itself is excluded
    d = lo.trajectory.fields[:n] - hi.trajectory.fields[:n]
    viol = float(np.max(np.clip(d, 0.0, None))) if n else 0.0
    scale = np.max(np.abs(hi.trajectory.fields[:n]), axis=1) if n else np.ones(1)
    rel = float(np.max(np.clip(d, 0.0, None).max(axis=1) / np.maximum(scale, 1e-300))) if n else 0.0
    return ComparisonResult(viol, rel, rel <= cmp_tol, n)


def decay_rate_fit(sup_history, t_grid, window=0.5):
    """Least-squares slope of log sup-norm on the last ``window`` fraction of the horizon."""
    s = np.asarray(sup_history, dtype=float)
    t = np.asarray(t_grid, dtype=float)
    if s.shape != t.shape:
        raise ValueError("sup_history and t_grid differ in length")
    if not 0 < window <= 1:
        raise ValueError("window must lie in (0, 1]")
    t0 = t[-1] - window * (t[-1] - t[0])
    sel = t >= t0
    if np.any(s[sel] <= 0) or not np.all(np.isfinite(s[sel])):
        raise ValueError("sup_history must be positive and finite on the fitted window")
    if sel.sum() < 2:
        raise ValueError("window holds fewer than two samples")
    slope, _ = np.polyfit(t[sel], np.log(s[sel]), 1)
    return float(slope)
