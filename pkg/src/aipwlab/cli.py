"""Command line entry point: ``aipwlab VERB --config PATH [options]``."""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .estimators import aipw_estimate
from .harness import Context, ExperimentConfig, monte_carlo, pathwise_bound, run_experiment
from .instance import ConfigurationError, load_config, read_trajectory_csv, sample_trajectory, simulate_paths
from .learners import RegretLedger, regret_trace, write_regret_trace
from .lowerbound import (DegenerateFunctionalError, PreconditionError, lecam_context_certificate,
                         lecam_outcome_certificate, reference_policies, theorem5_floor)
from .exactmath import enumerate_trajectories


def _config(args) -> ExperimentConfig:
    cfg = dict(load_config(args.config))
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.reps is not None:
        cfg["replications"] = args.reps
    if args.mode is not None:
        cfg["mode"] = args.mode
    if getattr(args, "n", None) is not None:
        cfg["n"] = args.n
    config = ExperimentConfig.from_dict(cfg)
    if args.workers is not None:
        config.workers = args.workers
    return config


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def cmd_simulate(args) -> int:
    config = _config(args)
    ctx = Context.build(config)
    out = _out(args)
    paths = simulate_paths(ctx.instance, ctx.policy, config.n, config.replications, config.seed)
    width = len(str(config.replications - 1))
    for k in range(paths.N):
        paths.trajectory(k).to_csv(out / f"trajectory_{k:0{width}d}.csv", ctx.instance)
    if args.plot_data:
        with open(out / "trajectories_tidy.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["rep", "i", "x", "a", "y", "pi"])
            for k in range(paths.N):
                for i in range(paths.n):
                    w.writerow([k, i + 1, ctx.instance.contexts[paths.X[k, i]],
                                ctx.instance.actions[paths.A[k, i]], repr(float(paths.Y[k, i])),
                                repr(float(paths.PI[k, i]))])
    _write_json(out / "simulate.json", {"replications": paths.N, "n": paths.n, "seed": config.seed,
                                        "config_hash": config.config_hash()})
    return 0


def cmd_estimate(args) -> int:
    config = _config(args)
    ctx = Context.build(config)
    out = _out(args)
    if args.trajectory:
        traj = read_trajectory_csv(args.trajectory, ctx.instance, ctx.policy)
    else:
        traj = sample_trajectory(ctx.instance, ctx.policy, config.n, config.seed)
        traj.to_csv(out / "trajectory.csv", ctx.instance)
    learner = ctx.learner.build(ctx.instance, ctx.B, traj.n)
    rep = aipw_estimate(traj, learner, ctx.g, ctx.cls, ctx.B, config.seed)
    (out / "estimate.json").write_text(rep.to_json() + "\n")
    write_regret_trace(out / "regret_trace.csv", regret_trace(learner.ledger, ctx.cls))
    return 0


def cmd_regret_audit(args) -> int:
    config = _config(args)
    ctx = Context.build(config)
    out = _out(args)
    q = monte_carlo(ctx)
    regret = q["loss_total"] - q["hindsight"]
    bound = pathwise_bound(ctx)
    certified = regret + q["gap"]
    summary = {
        "config_hash": config.config_hash(), "seed": config.seed, "replications": config.replications,
        "n": config.n, "B": ctx.B, "learner": ctx.learner.type, "mode": ctx.learner.mode,
        "regret_mean": float(np.mean(regret)), "regret_max": float(np.max(regret)),
        "regret_max_certified": float(np.max(certified)), "bound": bound,
        "violations": None if bound is None else int(np.sum(certified > bound + 1e-9)),
    }
    summary["pass"] = bound is None or summary["violations"] == 0
    _write_json(out / "regret_audit.json", summary)
    # per-round trace of the first replication
    paths = simulate_paths(ctx.instance, ctx.policy, config.n, 1, config.seed)
    preds, losses = ctx.learner.run_paths(ctx.instance, ctx.g, paths, ctx.B)
    ledger = RegretLedger(ctx.learner.mode)
    for i in range(paths.n):
        x, a = int(paths.X[0, i]), int(paths.A[0, i])
        ledger.record(x, a, paths.Y[0, i], paths.PI[0, i], ctx.g[x, a], losses[0, i])
    rows = regret_trace(ledger, ctx.cls)
    write_regret_trace(out / "regret_trace.csv", rows)
    if args.plot_data:
        with open(out / "regret_tidy.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["rep", "regret", "certified", "bound"])
            for k, (r, c) in enumerate(zip(regret, certified)):
                w.writerow([k, repr(float(r)), repr(float(c)), bound])
    return 0 if summary["pass"] else 1


def cmd_certify(args) -> int:
    config = _config(args)
    ctx = Context.build(config)
    out = _out(args)
    n = config.n
    dist = enumerate_trajectories(ctx.instance, ctx.policy, ctx.g, n, config.cap)
    report = {"n": n, "config_hash": config.config_hash()}
    ok = True
    try:
        cert = lecam_context_certificate(ctx.instance, ctx.policy, ctx.g, n)
        report["context"] = cert.to_dict()
        ok &= all(cert.checks.values())
    except (PreconditionError, DegenerateFunctionalError) as exc:
        report["context"] = {"skipped": str(exc)}
    ref = reference_policies(ctx.instance, ctx.policy, n, ctx.g, dist)
    oc = lecam_outcome_certificate(ctx.instance, ctx.policy, ref, ctx.g, n, dist)
    report["reference_K"] = ref.K
    report["outcome"] = oc.to_dict()
    ok &= all(oc.checks.values())
    fl = theorem5_floor(ctx.instance, ctx.policy, ref, ctx.g, n, dist)
    exact = run_experiment(ExperimentConfig.from_dict({**config.to_dict(), "mode": "exact",
                                                       "checks": ["unbiased"]}))
    fl.estimator_mse = {e: v["exact"]["mse"] for e, v in exact.data["estimators"].items()}
    report["floor"] = fl.to_dict()
    report["floor_le_mse"] = all(fl.floor <= m + 1e-9 for m in fl.estimator_mse.values())
    ok &= report["floor_le_mse"]
    report["pass"] = bool(ok)
    _write_json(out / "certificates.json", report)
    return 0 if ok else 1


def cmd_check_bounds(args) -> int:
    config = _config(args)
    rep = run_experiment(config)
    out = _out(args)
    (out / "report.json").write_text(rep.to_json() + "\n")
    _write_json(out / "timing.json", rep.timing)
    if args.plot_data:
        with open(out / "checks_tidy.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["name", "route", "lhs", "rhs", "tolerance", "pass"])
            for c in rep.checks:
                w.writerow([c["name"], c["route"], repr(c["lhs"]), repr(c["rhs"]), repr(c["tolerance"]),
                            int(c["pass"])])
    for c in rep.checks:
        print(f"{'PASS' if c['pass'] else 'FAIL'} {c['name']:<14} [{c['route']}] "
              f"lhs={c['lhs']:.6g} rhs={c['rhs']:.6g} tol={c['tolerance']:.3g}")
    return 0 if rep.all_pass else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="aipwlab", description="AIPW estimation and bound-checking laboratory")
    sub = p.add_subparsers(dest="verb", required=True)
    verbs = {
        "simulate": (cmd_simulate, "sample trajectories and export them as CSV"),
        "estimate": (cmd_estimate, "run the AIPW estimator on one trajectory"),
        "certify-lower-bound": (cmd_certify, "build and certify the two-point lower-bound constructions"),
        "regret-audit": (cmd_regret_audit, "audit learner regret against its pathwise bound"),
        "check-bounds": (cmd_check_bounds, "evaluate estimators and all enabled bound checks"),
    }
    for name, (fn, help_) in verbs.items():
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", required=True, help="JSON experiment config")
        s.add_argument("--seed", type=int, help="override the config seed (unsigned 64-bit)")
        s.add_argument("--reps", type=int, help="override the number of replications")
        s.add_argument("--out", default="out", help="output directory")
        s.add_argument("--mode", choices=("mc", "exact", "both"), help="override the evaluation mode")
        s.add_argument("--n", type=int, help="override the horizon")
        s.add_argument("--workers", type=int, help="threads for Monte Carlo chunks")
        s.add_argument("--plot-data", action="store_true", help="also write tidy CSV for plotting")
        if name == "estimate":
            s.add_argument("--trajectory", help="estimate from a stored trajectory CSV instead of sampling")
        s.set_defaults(func=fn)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigurationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
