"""Command line entry point: ``fracspde {simulate,sweep,bounds,fbm-test,validate}``."""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from dataclasses import asdict

import numpy as np

from . import bounds as bnd
from .config import ConfigError, format_config, parse_config
from .fbm import derive_seed, fgn_autocovariance, sample_fbm_path
from .montecarlo import (EnsembleResult, SweepRow, pathwise_comparison_test, parameter_sweep,
                         run_ensemble, write_realizations_csv, write_sweep_csv)
from .operator import build_fd_matrix, principal_eigenpair
from .simulator import (BlowupRecord, Trajectory, discretize, make_initial_condition,
                        simulate_realization, simulate_transformed)

COMMANDS = ("simulate", "sweep", "bounds", "fbm-test", "validate")
MANIFEST = "FAILED.json"
CALIBRATION_LAMBDA = 1.3037
CALIBRATION_TOL = 0.01


def _num(x):
    if x is None:
        return "nan"
    return repr(float(x))


def emit_plot_data(artifact, target, stride=1):
    """Write whitespace-separated columns with a '#' header line.

    BlowupRecord -> (t, sup); Trajectory -> (t, x, u) triples for every
    ``stride``-th snapshot; sweep rows -> (axis_value, p_hat, se_phat,
    mean_tau, var_tau); EnsembleResult -> per-realization (id, blew_up, tau_b, sup_final).
    """
    if stride is None or int(stride) < 1:
        raise ValueError(f"stride must be a positive integer, got {stride}")
    stride = int(stride)
    lines = []
    if isinstance(artifact, BlowupRecord):
        t = artifact.t_history
        lines.append("# t sup")
        lines += [f"{_num(a)} {_num(b)}" for a, b in zip(t[::stride], artifact.sup_history[::stride])]
    elif isinstance(artifact, Trajectory):
        if artifact.fields.size == 0:
            raise ValueError("empty trajectory")
        lines.append("# t x u")
        for k in range(0, artifact.fields.shape[0], stride):
            tk = _num(artifact.t[k])
            lines += [f"{tk} {_num(x)} {_num(u)}" for x, u in zip(artifact.x, artifact.fields[k])]
    elif isinstance(artifact, EnsembleResult):
        lines.append("# realization_id blew_up tau_b sup_final")
        for row in list(artifact.rows())[::stride]:
            lines.append(f"{row[0]} {int(row[2])} {_num(row[3])} {_num(row[5])}")
    elif isinstance(artifact, (list, tuple)) and all(isinstance(r, SweepRow) for r in artifact):
        lines.append("# axis_value p_hat se_phat mean_tau var_tau")
        for r in artifact[::stride]:
            s = r.stats
            vals = (s.p_hat, s.se_phat, s.mean_tau, s.var_tau) if s else (None,) * 4
            lines.append(" ".join([_num(r.axis_value)] + [_num(v) for v in vals]))
    else:
        raise TypeError(f"cannot emit plot data for {type(artifact).__name__}")
    try:
        with open(target, "w") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write plot data to {target}: {exc}") from exc
    return target


class _Run:
    def __init__(self, cfg, out):
        self.cfg = cfg
        self.out = out
        self.written = []

    def path(self, name):
        return os.path.join(self.out, name)

    def write_text(self, name, text):
        p = self.path(name)
        with open(p, "w") as fh:
            fh.write(text)
        self.written.append(name)
        return p

    def write_json(self, name, obj):
        return self.write_text(name, json.dumps(obj, sort_keys=True, indent=2) + "\n")

    def emit(self, name, artifact, stride=1):
        emit_plot_data(artifact, self.path(name), stride)
        self.written.append(name)

    @property
    def want_csv(self):
        return "csv" in self.cfg.output.formats

    @property
    def want_json(self):
        return "json" in self.cfg.output.formats


def _initial_field(cfg, disc):
    return make_initial_condition(cfg.ic.kind, cfg.ic.c, disc.eig, cfg.grid)


def _stats_dict(stats):
    return asdict(stats)


def cmd_simulate(run):
    cfg = run.cfg
    res = run_ensemble(cfg.model, cfg.grid, cfg.ic, cfg.ensemble.n_realizations, cfg.ensemble.master_seed)
    if run.want_csv:
        write_realizations_csv(res, run.path("realizations.csv"))
        run.written.append("realizations.csv")
    if run.want_json:
        run.write_json("stats.json", _stats_dict(res.stats))
    run.emit("realizations.dat", res)
    disc = discretize(cfg.model, cfg.grid)
    path = sample_fbm_path(cfg.model.hurst, cfg.grid.T, cfg.grid.N, int(res.seeds[0]))
    rec = simulate_realization(cfg.model, cfg.grid, path, _initial_field(cfg, disc),
                               store_stride=cfg.output.trajectory_stride, disc=disc)
    run.emit("sup_history_0.dat", rec)
    if rec.trajectory is not None:
        run.emit("trajectory_0.dat", rec.trajectory)
    return True


def cmd_sweep(run):
    cfg = run.cfg
    if not cfg.sweep.axis or not cfg.sweep.values:
        raise ConfigError("sweep.axis", "sweep requires sweep.axis and sweep.values")
    rows = parameter_sweep(cfg.model, cfg.grid, cfg.ic, cfg.ensemble.n_realizations,
                           cfg.ensemble.master_seed, cfg.sweep.axis, cfg.sweep.values)
    name = f"sweep_{cfg.sweep.axis}"
    if run.want_csv:
        write_sweep_csv(rows, run.path(name + ".csv"))
        run.written.append(name + ".csv")
    if run.want_json:
        run.write_json(name + ".json", [{"axis_value": r.axis_value, "error": r.error,
                                         "stats": _stats_dict(r.stats) if r.stats else None}
                                        for r in rows])
    run.emit(name + ".dat", rows)
    return all(r.error is None for r in rows)


def cmd_bounds(run):
    cfg = run.cfg
    disc = discretize(cfg.model, cfg.grid)
    f = _initial_field(cfg, disc)
    alpha1 = cfg.bounds.alpha1 or None
    reports = []
    for i in range(cfg.bounds.n_seeds):
        seed = derive_seed(cfg.ensemble.master_seed, i)
        path = sample_fbm_path(cfg.model.hurst, cfg.grid.T, cfg.grid.N, seed)
        rep = bnd.evaluate_bounds(cfg.model, cfg.grid, path, f, cfg.bounds.b, alpha1=alpha1,
                                  n_paths=cfg.bounds.n_paths, T_sup=cfg.bounds.T_sup,
                                  seed=cfg.ensemble.master_seed, disc=disc)
        reports.append(rep)
        if run.want_json:
            run.write_text(f"bounds_{i}.json", rep.to_json())
    if run.want_csv:
        with open(run.path("bounds.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(bnd.BoundsReport.CSV_FIELDS)
            for rep in reports:
                w.writerow(["" if v is None else (repr(v) if isinstance(v, float) else v)
                            for v in rep.csv_row()])
        run.written.append("bounds.csv")
    return True


FBM_PAIRS = ((0.2, 0.4), (0.3, 0.9), (0.5, 0.5), (0.6, 1.0), (0.1, 0.8))


def fbm_diagnostics(H, T, N, n_paths, master_seed, z_max=4.0):
    """Covariance, variance and (for a Brownian path) lag-1 correlation checks."""
    # pairs are fractions of the horizon T
    idx = sorted({int(round(x * N)) for pair in FBM_PAIRS for x in pair} | {N})
    vals = np.empty((n_paths, len(idx)))
    for i in range(n_paths):
        vals[i] = sample_fbm_path(H, T, N, derive_seed(master_seed, i)).values[idx]
    col = {n: k for k, n in enumerate(idx)}
    items = []
    for s, t in FBM_PAIRS:
        a, b = vals[:, col[int(round(s * N))]], vals[:, col[int(round(t * N))]]
        prod = a * b
        sa, ta = s * T, t * T
        exact = 0.5 * (sa ** (2 * H) + ta ** (2 * H) - abs(ta - sa) ** (2 * H))
        se = prod.std(ddof=1) / math.sqrt(n_paths)
        z = (prod.mean() - exact) / se
        items.append({"name": f"cov({s},{t})", "empirical": float(prod.mean()), "exact": exact,
                      "z": float(z), "passed": bool(abs(z) <= z_max)})
    bm = sample_fbm_path(0.5, T, N, derive_seed(master_seed, n_paths)).increments
    r = float(np.corrcoef(bm[:-1], bm[1:])[0, 1])
    items.append({"name": "brownian_lag1_corr", "r": r, "limit": 3 / math.sqrt(N),
                  "passed": bool(abs(r) < 3 / math.sqrt(N))})
    g = fgn_autocovariance(H, N - 1, T / N)
    var_sum = float(g[0] * N + 2 * np.sum((N - np.arange(1, N)) * g[1:]))
    items.append({"name": "autocovariance_telescoping", "value": var_sum, "exact": T ** (2 * H),
                  "passed": bool(abs(var_sum - T ** (2 * H)) <= 1e-8 * T ** (2 * H))})
    return items


def cmd_fbm_test(run):
    cfg = run.cfg
    items = fbm_diagnostics(cfg.model.hurst, cfg.grid.T, cfg.grid.N, cfg.fbmtest.n_paths,
                            cfg.ensemble.master_seed)
    if run.want_json:
        run.write_json("fbm_test.json", items)
    if run.want_csv:
        path = sample_fbm_path(cfg.model.hurst, cfg.grid.T, cfg.grid.N,
                               derive_seed(cfg.ensemble.master_seed, 0))
        path.to_csv(run.path("fbm_path_0.csv"))
        run.written.append("fbm_path_0.csv")
    return all(it["passed"] for it in items)


def validation_items(cfg):
    items = []

    def add(name, passed, **detail):
        items.append({"name": name, "passed": bool(passed), **detail})

    eig = principal_eigenpair(build_fd_matrix(1.2, 101))
    add("calibration", abs(eig.lambda1 - CALIBRATION_LAMBDA) <= CALIBRATION_TOL,
        lambda1=eig.lambda1, target=CALIBRATION_LAMBDA)

    disc = discretize(cfg.model, cfg.grid)
    add("eigen_residual", disc.eig.residual <= 1e-10 * disc.eig.lambda1,
        residual=disc.eig.residual, lambda1=disc.eig.lambda1)

    f_high = _initial_field(cfg, disc)
    worst = 0.0
    for i in range(3):
        r = pathwise_comparison_test(cfg.model, cfg.grid, derive_seed(cfg.ensemble.master_seed, i),
                                     0.5 * f_high, f_high)
        worst = max(worst, r.relative_violation)
    add("comparison_principle", worst <= 1e-6, max_relative_violation=worst)

    if cfg.model.noise_shape == "linear":
        horizon = min(cfg.grid.T, 0.2)
        n = max(2, int(round(cfg.grid.N * horizon / cfg.grid.T)))
        g = cfg.grid.replace(N=n, T=horizon)
        path = sample_fbm_path(cfg.model.hurst, horizon, n, derive_seed(cfg.ensemble.master_seed, 0))
        p0 = cfg.model.replace(sigma=0.0)
        d = simulate_realization(p0, g, path, f_high, store_stride=1)
        tr = simulate_transformed(p0, g, path, f_high, store_stride=1)
        same = (d.trajectory.fields.shape == tr.u_fields.shape
                and np.array_equal(d.trajectory.fields, tr.u_fields))
        d1 = simulate_realization(cfg.model, g, path, f_high, store_stride=1)
        tr1 = simulate_transformed(cfg.model, g, path, f_high, store_stride=1)
        k = min(d1.trajectory.fields.shape[0], tr1.u_fields.shape[0])
        diff = float(np.max(np.abs(d1.trajectory.fields[:k] - tr1.u_fields[:k])))
        rel = diff / float(np.max(np.abs(d1.trajectory.fields[:k])))
        add("transform_equivalence", same and rel <= 0.05, sigma0_identical=same,
            relative_discrepancy=rel)

    xs = (0.1, 0.5, 1.0, 3.0, 10.0)
    e1 = max(abs(bnd.regularized_gamma_p(1.0, x) + math.expm1(-x)) for x in xs)
    e2 = max(abs(bnd.regularized_gamma_p(0.5, x) - math.erf(math.sqrt(x))) for x in xs)
    e3 = max(abs(bnd.regularized_gamma_p(a, x) + bnd.regularized_gamma_q(a, x) - 1.0)
             for a in (0.3, 1.0, 4.5) for x in xs)
    add("gamma_identity", max(e1, e2, e3) <= 1e-10, exp_error=e1, erf_error=e2, complement_error=e3)

    a = sample_fbm_path(cfg.model.hurst, cfg.grid.T, cfg.grid.N, 12345)
    b = sample_fbm_path(cfg.model.hurst, cfg.grid.T, cfg.grid.N, 12345)
    add("fbm_determinism", np.array_equal(a.values, b.values))
    return items


def cmd_validate(run):
    items = validation_items(run.cfg)
    run.write_json("validate.json", items)
    for it in items:
        print(f"{'PASS' if it['passed'] else 'FAIL'} {it['name']}")
    return all(it["passed"] for it in items)


HANDLERS = {"simulate": cmd_simulate, "sweep": cmd_sweep, "bounds": cmd_bounds,
            "fbm-test": cmd_fbm_test, "validate": cmd_validate}


def dispatch(command, cfg, out):
    """Run one subcommand; returns the process exit status."""
    if command not in HANDLERS:
        raise ValueError(f"unknown command {command!r}")
    os.makedirs(out, exist_ok=True)
    manifest = os.path.join(out, MANIFEST)
    if os.path.exists(manifest):
        os.remove(manifest)
    run = _Run(cfg, out)
    run.write_text("config.txt", format_config(cfg))
    error = None
    try:
        ok = HANDLERS[command](run)
    except Exception as exc:  # noqa: BLE001 - reported in the manifest
        ok, error = False, f"{type(exc).__name__}: {exc}"
    if ok:
        return 0
    with open(manifest, "w") as fh:
        json.dump({"command": command, "error": error, "artifacts": run.written}, fh,
                  sort_keys=True, indent=2)
        fh.write("\n")
    if error:
        print(f"error: {error}", file=sys.stderr)
    return 1


def build_parser():
    ap = argparse.ArgumentParser(prog="fracspde")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="flat key = value config file")
    ap.add_argument("--out", help="output directory (overrides output.dir)")
    ap.add_argument("--seed", type=int, help="master seed (overrides ensemble.master_seed)")
    ap.add_argument("--profile", choices=("desk", "full"))
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    source = ""
    if args.config:
        with open(args.config) as fh:
            source = fh.read()
    overrides = {}
    if args.seed is not None:
        overrides["ensemble.master_seed"] = args.seed
    try:
        cfg = parse_config(source, overrides=overrides, profile=args.profile)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    out = args.out or cfg.output.dir
    return dispatch(args.command, cfg, out)


if __name__ == "__main__":
    sys.exit(main())
