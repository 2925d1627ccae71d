"""Command-line front end.

Subcommands
-----------
solve     --config <file> --out <dir>     solve one parameterization (or a
                                          sweep) and write solution JSON plus
                                          a diagnostics text.
simulate  --solution <file> --paths <int> --seed <int> --out <dir>
                                          Monte Carlo run: ensemble stats and
                                          the per-figure stats bundle.
verify    --solution <file> --out <dir>   exact Gaussian-projection checks.
report    --in <dir> --out <dir>          figure CSVs (with sidecar metadata)
                                          and a qualitative summary.

Exit codes: 0 success, 1 numerical failure, 2 invalid input.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import os
import sys

import numpy as np

from . import errors
from .model import (ModelParams, load_solution, save_solution,
                    validate_params)
from .oracle import verify_filtering, verify_private_filters
from .simulator import SimulationConfig, figure_statistics, simulate
from .solver import SolverConfig, kyle_benchmark, shoot

EXIT_OK = 0
EXIT_NUMERICAL = 1
EXIT_INVALID = 2


def _load_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise errors.MissingInput(f"no such file: {path}")
    except json.JSONDecodeError as e:
        raise errors.InvalidParam("config", f"invalid JSON in {path}: {e}")


def _params_from_dict(d):
    try:
        p = ModelParams(
            n_periods=int(d["n_periods"]),
            sigma_v_sq=float(d["sigma_v_sq"]),
            sigma_a_sq=float(d["sigma_a_sq"]),
            sigma_w_sq=float(d["sigma_w_sq"]),
            rho=float(d.get("rho", 0.0)),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise errors.InvalidParam("params", f"bad params object: {e}")
    return validate_params(p)


def _solver_cfg_from_dict(d):
    known = {f.name for f in dataclasses.fields(SolverConfig)}
    unknown = set(d) - known
    if unknown:
        raise errors.InvalidParam("solver", f"unknown fields: {sorted(unknown)}")
    cfg = SolverConfig(**d)
    try:
        cfg.validate()
    except ValueError as e:
        raise errors.InvalidParam("solver", str(e))
    return cfg


def _file_hash(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        h.update(fh.read())
    return h.hexdigest()


def _write_diag(path, sol):
    d = sol.diagnostics
    lines = [
        "equilibrium solve diagnostics",
        f"residual_norm: {sol.residual_norm:.3e}",
        f"time0_mismatch: {d.get('time0_mismatch', float('nan')):.3e}",
        f"continuation_stages: {d.get('continuation_stages')}",
        f"elapsed_seconds: {d.get('elapsed_seconds', 0.0):.3f}",
        "per-period second-order margins (insider, rebalancer):",
    ]
    for k, mg in enumerate(d.get("soc_margins", []), start=1):
        lines.append(f"  period {k}: {mg[0]:+.6e}  {mg[1]:+.6e}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _sweep_label(overrides):
    parts = []
    for k in sorted(overrides):
        parts.append(f"{k}_{overrides[k]}")
    return "-".join(parts).replace(".", "p")


def cmd_solve(args):
    cfg_doc = _load_json(args.config)
    if "params" not in cfg_doc:
        raise errors.InvalidParam("config", "missing required 'params' object")
    solver_cfg = _solver_cfg_from_dict(cfg_doc.get("solver", {}))
    base = cfg_doc["params"]
    sweep = cfg_doc.get("sweep") or [{}]
    os.makedirs(args.out, exist_ok=True)
    results = []
    for overrides in sweep:
        merged = dict(base)
        merged.update(overrides)
        p = _params_from_dict(merged)
        outdir = args.out if not overrides else os.path.join(
            args.out, _sweep_label(overrides))
        os.makedirs(outdir, exist_ok=True)
        sol = shoot(p, solver_cfg)
        sol_path = os.path.join(outdir, "solution.json")
        save_solution(sol, sol_path)
        _write_diag(os.path.join(outdir, "diagnostics.txt"), sol)
        results.append((sol_path, sol))
        print(f"solved {merged} -> {sol_path} "
              f"(residual {sol.residual_norm:.2e})")
    if len(results) > 1:
        _write_sweep_table(os.path.join(args.out, "sweep_price_impact.csv"),
                           results)
    return EXIT_OK


def _write_sweep_table(path, results):
    n = results[0][1].n_periods
    header = ["period"] + [os.path.basename(os.path.dirname(p)) or "base"
                           for p, _ in results]
    rows = []
    for k in range(n):
        rows.append([k + 1] + [sol.steps[k].lam for _, sol in results])
    _write_csv(path, header, rows, {
        "description": "price impact per period for each sweep member",
        "columns": {"period": "1-based trading round",
                    "other": "price impact of the labeled parameterization"},
        "provenance": {"solutions": [p for p, _ in results]},
    })


def _write_csv(path, header, rows, meta):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow(row)
    with open(path + ".meta.json", "w") as fh:
        json.dump(meta, fh, indent=1)
        fh.write("\n")


def cmd_simulate(args):
    sol = load_solution(args.solution)
    cfg = SimulationConfig(n_paths=args.paths, seed=args.seed).validate()
    os.makedirs(args.out, exist_ok=True)
    stats = simulate(sol, cfg)
    with open(os.path.join(args.out, "ensemble_stats.json"), "w") as fh:
        json.dump(stats.to_dict(), fh, indent=1)
        fh.write("\n")
    bundle = figure_statistics(sol, cfg)
    bundle["provenance"] = {
        "solution_file": os.path.abspath(args.solution),
        "solution_sha256": _file_hash(args.solution),
        "seed": args.seed,
        "n_paths": args.paths,
    }
    with open(os.path.join(args.out, "stats_bundle.json"), "w") as fh:
        json.dump(bundle, fh, indent=1)
        fh.write("\n")
    if args.export_paths:
        _export_paths(sol, cfg, args)
    print(f"simulated {args.paths} paths (seed {args.seed}) -> {args.out}")
    return EXIT_OK


def _export_paths(sol, cfg, args):
    from .simulator import run_paths
    cfg_small = SimulationConfig(n_paths=min(args.export_paths, args.paths),
                                 seed=args.seed)
    paths = run_paths(sol, cfg_small)
    out = os.path.join(args.out, "paths.csv")
    header = ["path", "period", "v", "a", "dw", "dtheta_i", "dtheta_r",
              "y", "p", "q"]
    rows = []
    for i in range(cfg_small.n_paths):
        for k in range(sol.n_periods):
            rows.append([i, k + 1, paths["v"][i], paths["a"][i],
                         paths["dw"][i, k], paths["dth_i"][i, k],
                         paths["dth_r"][i, k], paths["y"][i, k],
                         paths["p"][i, k], paths["q"][i, k]])
    _write_csv(out, header, rows, {
        "description": "raw simulated market paths, one row per path-period",
        "columns": {
            "path": "path index", "period": "1-based trading round",
            "v": "terminal value draw", "a": "target draw",
            "dw": "noise-trade increment", "dtheta_i": "insider order",
            "dtheta_r": "rebalancer order", "y": "aggregate order flow",
            "p": "price after the round", "q": "demand estimate after the round"},
        "provenance": {"solution_file": os.path.abspath(args.solution),
                       "solution_sha256": _file_hash(args.solution),
                       "seed": args.seed},
    })


def cmd_verify(args):
    sol = load_solution(args.solution)
    os.makedirs(args.out, exist_ok=True)
    rep1 = verify_filtering(sol)
    rep2 = verify_private_filters(sol)
    report = {"kind": "verification_report",
              "solution_file": os.path.abspath(args.solution),
              "solution_sha256": _file_hash(args.solution),
              "filtering": rep1, "private_filters": rep2,
              "passed": rep1["passed"] and rep2["passed"]}
    with open(os.path.join(args.out, "verification.json"), "w") as fh:
        json.dump(report, fh, indent=1)
        fh.write("\n")
    print(f"verification {'passed' if report['passed'] else 'FAILED'} "
          f"-> {args.out}/verification.json")
    return EXIT_OK if report["passed"] else EXIT_NUMERICAL


REQUIRED_FIGURE_KEYS = (
    "price_impact", "value_variance", "insider_loading",
    "insider_conditional_mean_trades", "rebalancer_loadings",
    "rebalancer_conditional_mean_trades", "rebalancer_conditional_std",
    "price_change_rms", "predictable_fractions", "trade_correlation")


def _find_runs(indir):
    """Locate (solution.json, stats_bundle.json) pairs under ``indir``."""
    runs = []
    for root, _, files in sorted(os.walk(indir)):
        if "solution.json" in files:
            sol_path = os.path.join(root, "solution.json")
            bundle_path = (os.path.join(root, "stats_bundle.json")
                           if "stats_bundle.json" in files else None)
            label = os.path.relpath(root, indir)
            runs.append({"label": "base" if label == "." else label,
                         "solution": sol_path, "bundle": bundle_path})
    return runs


def cmd_report(args):
    runs = _find_runs(args.indir)
    if not runs:
        raise errors.MissingInput(f"no solution.json found under {args.indir}")
    missing = [r["solution"] for r in runs if r["bundle"] is None]
    if missing:
        raise errors.MissingInput(
            "missing stats_bundle.json next to: " + ", ".join(missing))
    os.makedirs(args.out, exist_ok=True)
    loaded = []
    for r in runs:
        bundle = _load_json(r["bundle"])
        absent = [k for k in REQUIRED_FIGURE_KEYS if k not in bundle]
        if absent:
            raise errors.MissingInput(
                f"{r['bundle']} lacks figure keys: {absent}")
        loaded.append({**r, "bundle_doc": bundle,
                       "sol": load_solution(r["solution"])})
    _emit_figure_csvs(loaded, args.out)
    summary = _qualitative_summary(loaded)
    with open(os.path.join(args.out, "summary.txt"), "w") as fh:
        fh.write(summary)
    print(summary)
    return EXIT_OK


def _series_csv(out, name, loaded, extract, description):
    periods = loaded[0]["bundle_doc"]["periods"]
    header = ["period"]
    cols = []
    for r in loaded:
        series = extract(r["bundle_doc"])
        for sub, vals in series:
            header.append(f"{r['label']}:{sub}" if sub else r["label"])
            cols.append(vals)
    rows = [[p] + [c[i] if i < len(c) else "" for c in cols]
            for i, p in enumerate(periods)]
    meta = {
        "description": description,
        "columns": {"period": "1-based trading round",
                    "other": "one series per run label (and sub-series)"},
        "provenance": [{"label": r["label"],
                        "solution_file": os.path.abspath(r["solution"]),
                        "solution_sha256": _file_hash(r["solution"]),
                        "seed": r["bundle_doc"].get("seed")} for r in loaded],
    }
    _write_csv(os.path.join(out, f"{name}.csv"), header, rows, meta)


def _emit_figure_csvs(loaded, out):
    _series_csv(out, "fig_price_impact", loaded,
                lambda b: [("model", b["price_impact"]["model"]),
                           ("benchmark", b["price_impact"]["benchmark"])],
                "per-period price impact, model vs single-insider benchmark")
    _series_csv(out, "fig_value_variance", loaded,
                lambda b: [("model", b["value_variance"]["model"][1:]),
                           ("benchmark", b["value_variance"]["benchmark"][1:])],
                "post-trade value variance per period")
    _series_csv(out, "fig_insider_loading", loaded,
                lambda b: [("model", b["insider_loading"]["model"]),
                           ("benchmark", b["insider_loading"]["benchmark"])],
                "insider mispricing loading per period")
    _series_csv(out, "fig_insider_conditional_mean", loaded,
                lambda b: [("", b["insider_conditional_mean_trades"]["dth_i"])],
                "exact mean insider order per period given unit value")
    _series_csv(out, "fig_rebalancer_loadings", loaded,
                lambda b: [("alpha_r", b["rebalancer_loadings"]["alpha_r"]),
                           ("beta_r", b["rebalancer_loadings"]["beta_r"])],
                "rebalancer strategy loadings per period")
    _series_csv(out, "fig_rebalancer_conditional_mean", loaded,
                lambda b: [("", b["rebalancer_conditional_mean_trades"]["dth_r"])],
                "exact mean rebalancer order per period given unit target")
    _series_csv(out, "fig_rebalancer_conditional_std", loaded,
                lambda b: [("", b["rebalancer_conditional_std"]["std"])],
                "Monte Carlo std of rebalancer orders given unit target")
    _series_csv(out, "fig_price_change_rms", loaded,
                lambda b: [("exact", b["price_change_rms"]["exact"]),
                           ("mc", b["price_change_rms"]["mc"])],
                "root-mean-square price change per period")
    _series_csv(out, "fig_predictable_fractions", loaded,
                lambda b: [("mm_exact", b["predictable_fractions"]["exact"]
                            ["mm_fraction"]),
                           ("insider_exact", b["predictable_fractions"]["exact"]
                            ["insider_extra_fraction"]),
                           ("mm_mc", [r["mm_predictable_fraction"]
                                      for r in b["predictable_fractions"]["rows"]]),
                           ("insider_mc", [r["insider_predictable_fraction"]
                                           for r in b["predictable_fractions"]["rows"]]),
                           ("rebalancer_mc", [r["rebalancer_predictable_fraction"]
                                              for r in b["predictable_fractions"]["rows"]])],
                "predictable fractions of strategic orders per period")
    _series_csv(out, "fig_trade_correlation", loaded,
                lambda b: [("exact", b["trade_correlation"]["exact"]),
                           ("mc", b["trade_correlation"]["mc"])],
                "correlation of insider and rebalancer orders per period")


def check_s_shape(model, benchmark):
    """Single crossing: model above benchmark early, below late."""
    diff = np.asarray(model) - np.asarray(benchmark)
    signs = np.sign(diff)
    crossings = int(np.sum(signs[1:] != signs[:-1]))
    return bool(diff[0] > 0 and diff[-1] < 0 and crossings == 1)


def check_u_shape(values, strict_last=True):
    v = np.abs(np.asarray(values, float))
    interior = v[1:-1]
    if interior.size == 0:
        return False
    ok = v[0] > interior.min()
    if strict_last:
        ok = ok and v[-1] > interior.min()
    return bool(ok)


def _qualitative_summary(loaded):
    lines = ["qualitative figure checks"]
    for r in loaded:
        b = r["bundle_doc"]
        sol = r["sol"]
        n = sol.n_periods
        checks = []
        checks.append(("price impact S-shape single crossing",
                       check_s_shape(b["price_impact"]["model"],
                                     b["price_impact"]["benchmark"])))
        checks.append(("rebalancer conditional mean U-shape",
                       check_u_shape(b["rebalancer_conditional_mean_trades"]["dth_r"])))
        checks.append(("insider conditional mean slight U-shape",
                       check_u_shape(b["insider_conditional_mean_trades"]["dth_i"],
                                     strict_last=False)))
        corr = np.asarray(b["trade_correlation"]["exact"])
        checks.append(("late-day trade correlation negative",
                       bool(np.all(corr[-max(1, n // 3):] < 0))))
        if abs(sol.params.sigma_a_sq - 1.0) < 1e-9:
            fr = b["predictable_fractions"]["exact"]["mm_fraction"][:-1]
            checks.append(("market-maker-predictable fraction < 5%",
                           bool(np.all(np.abs(np.asarray(fr)) < 0.05))))
        lam = np.asarray(b["price_impact"]["model"])
        if np.any(np.diff(lam) > 0):
            lines.append(f"[{r['label']}] note: price impact non-monotone")
        for name, ok in checks:
            lines.append(f"[{r['label']}] {name}: {'PASS' if ok else 'FAIL'}")
    return "\n".join(lines) + "\n"


def build_parser():
    ap = argparse.ArgumentParser(
        prog="rebkyle",
        description="equilibrium solver and simulator for a multi-round "
                    "market with an informed trader and a target rebalancer")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("solve", help="solve an equilibrium from a config file")
    sp.add_argument("--config", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_solve)

    sp = sub.add_parser("simulate", help="Monte Carlo run on a solution file")
    sp.add_argument("--solution", required=True)
    sp.add_argument("--paths", type=int, default=100_000)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.add_argument("--export-paths", type=int, default=0,
                    help="also export this many raw paths as CSV")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("verify", help="exact Gaussian-projection verification")
    sp.add_argument("--solution", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("report", help="emit figure CSVs and summary")
    sp.add_argument("--in", dest="indir", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_report)
    return ap


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except (errors.InvalidParam, errors.MissingInput) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except (errors.OuterNoConvergence, errors.PathologicalRegion,
            errors.InnerNoConvergence, errors.AdmissibilityFail,
            errors.SocViolation, errors.NoPositiveRoot,
            errors.DegenerateDenominator, errors.SingularCovariance,
            np.linalg.LinAlgError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        record = {"kind": "failure_record", "error": type(e).__name__,
                  "message": str(e)}
        out = getattr(args, "out", None)
        if out:
            os.makedirs(out, exist_ok=True)
            with open(os.path.join(out, "failure.json"), "w") as fh:
                json.dump(record, fh, indent=1)
                fh.write("\n")
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
