"""Experiment runner: exact and Monte Carlo evaluation plus bound checks.

Both routes share :func:`path_quantities`, which maps a weighted batch of
trajectories to per-path arrays; the exact route weights them by their
enumerated probabilities, the Monte Carlo route uniformly.  Monte Carlo
replications are simulated in chunks (optionally on threads) and always
reassembled in replication order before any reduction, so serial and
parallel runs give identical reports.
"""
from __future__ import annotations

import hashlib
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .estimators import AuxiliaryCollection, aipw_scores_paths, oracle_paths, perturbed_ipw_paths
from .exactmath import DEFAULT_CAP, context_variance, enumerate_trajectories, weight_table
from .instance import (ConfigurationError, Paths, functional_from_config, instance_from_config,
                       off_policy_value, overlap_constant, simulate_paths)
from .learners import LearnerSpec, box_diameter, loss_weight
from .lowerbound import reference_policies, theorem5_floor
from .policies import policy_from_config

EXACT_TOL = 1e-9
MC_SIGMAS = 3.0
ESTIMATORS = ("oracle", "ipw", "aipw")
ALL_CHECKS = ("unbiased", "thm1", "thm2", "thm_general", "thm3", "thm4", "finite", "lower_bound",
              "mc_consistency")
INSTANCE_FIELDS = ("contexts", "actions", "outcome_grid", "context_pmf", "kernel", "L", "gaussian")


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


@dataclass
class ExperimentConfig:
    instance: dict
    policy: dict
    g: dict
    learner: dict
    n: int
    replications: int = 1000
    seed: int = 0
    mode: str = "exact"
    checks: Optional[list] = None
    workers: int = 1
    chunk_size: int = 2000
    cap: int = DEFAULT_CAP

    @classmethod
    def from_dict(cls, cfg: dict) -> "ExperimentConfig":
        cfg = dict(cfg)
        inst = cfg.pop("instance", None)
        if inst is None:
            inst = {k: cfg.pop(k) for k in INSTANCE_FIELDS if k in cfg}
        else:
            for k in INSTANCE_FIELDS:
                cfg.pop(k, None)
        out = cls(
            instance=inst,
            policy=cfg.pop("policy", {}),
            g=cfg.pop("g", {"kind": "ATE"}),
            learner=cfg.pop("learner", {}),
            n=int(cfg.pop("n", 0)),
            replications=int(cfg.pop("replications", 1000)),
            seed=int(cfg.pop("seed", 0)),
            mode=cfg.pop("mode", "exact"),
            checks=cfg.pop("checks", None),
            workers=int(cfg.pop("workers", 1)),
            chunk_size=int(cfg.pop("chunk_size", 2000)),
            cap=int(cfg.pop("cap", DEFAULT_CAP)),
        )
        if cfg:
            raise ConfigurationError(f"unknown config fields {sorted(cfg)}")
        out.validate()
        return out

    def validate(self):
        if self.n < 1:
            raise ConfigurationError("n must be at least 1")
        if self.replications < 1:
            raise ConfigurationError("replications must be at least 1")
        if self.mode not in ("mc", "exact", "both"):
            raise ConfigurationError(f"unknown mode {self.mode!r}")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigurationError("seed must be an unsigned 64-bit integer")
        for c in self.checks or []:
            if c not in ALL_CHECKS:
                raise ConfigurationError(f"unknown check {c!r}")

    def to_dict(self) -> dict:
        """Everything that determines the results (``workers`` excluded)."""
        return {
            "instance": self.instance, "policy": self.policy, "g": self.g, "learner": self.learner,
            "n": self.n, "replications": self.replications, "seed": self.seed, "mode": self.mode,
            "checks": self.checks, "chunk_size": self.chunk_size, "cap": self.cap,
        }

    def config_hash(self) -> str:
        return hashlib.sha256(canonical_json(self.to_dict()).encode()).hexdigest()


@dataclass
class Context:
    """Built objects shared by every route."""

    config: ExperimentConfig
    instance: object
    policy: object
    g: np.ndarray
    learner: LearnerSpec
    cls: object
    B: float
    tau_star: float
    cvar: float

    @classmethod
    def build(cls, config: ExperimentConfig) -> "Context":
        inst = instance_from_config(config.instance)
        pol = policy_from_config(config.policy, inst.n_contexts, inst.n_actions)
        g = functional_from_config({"g": config.g}, inst).table
        spec = LearnerSpec.from_config(config.learner)
        B = overlap_constant(inst, pol, g, config.n)
        return cls(config, inst, pol, g, spec, spec.function_class(inst), B,
                   off_policy_value(inst, g), context_variance(inst, g))


def path_quantities(ctx: Context, paths: Paths) -> dict:
    """Per-path estimator values, error terms and regret components."""
    inst, g, n = ctx.instance, ctx.g, paths.n
    zero = AuxiliaryCollection.zero(n, inst.n_contexts, inst.n_actions)
    preds, losses = ctx.learner.run_paths(inst, g, paths, ctx.B)
    gv = g[paths.X, paths.A]
    mu_err = np.take_along_axis(preds, paths.A[..., None], axis=2)[..., 0] - inst.mu_star[paths.X, paths.A]
    sig = inst.sigma_sq[paths.X, paths.A]
    W = loss_weight(gv, paths.PI, ctx.learner.mode)
    _, hind, gap = ctx.cls.fit(paths.X, paths.A, paths.Y, W)
    return {
        "oracle": oracle_paths(paths, g, inst),
        "ipw": perturbed_ipw_paths(paths, g, zero),
        "aipw": aipw_scores_paths(paths, g, preds).mean(axis=1),
        "err_term": np.mean((gv * mu_err / paths.PI) ** 2, axis=1),
        "sigma_term": np.mean(gv ** 2 * sig / paths.PI ** 2, axis=1),
        "loss_total": losses.sum(axis=1),
        "hindsight": hind,
        "gap": gap,
    }


def _wmean(w, v) -> float:
    return float(np.sum(w * v))


def jackknife_se(values: np.ndarray) -> float:
    """Jackknife standard error of the sample mean (equals ``s / sqrt(R)``)."""
    v = np.asarray(values, dtype=float)
    R = v.size
    if R < 2:
        return math.inf
    loo = (np.sum(v) - v) / (R - 1)
    return float(math.sqrt((R - 1) / R * np.sum((loo - loo.mean()) ** 2)))


def jackknife_var_se(values: np.ndarray) -> float:
    v = np.asarray(values, dtype=float)
    R = v.size
    if R < 3:
        return math.inf
    s1, s2 = np.sum(v), np.sum(v * v)
    m = (s1 - v) / (R - 1)
    loo = ((s2 - v * v) - (R - 1) * m * m) / (R - 2)
    return float(math.sqrt((R - 1) / R * np.sum((loo - loo.mean()) ** 2)))


def _approx(ctx: Context, dist: Paths) -> float:
    """Certified lower value of the approximation term under the batch law."""
    wt = weight_table(dist, ctx.g, dist.n, ctx.learner.mode)
    val, gap = ctx.cls.approximation_error(wt, np.asarray(ctx.instance.mu_star))
    return max(val - gap, 0.0)


def _moments(w, s, tau) -> dict:
    mean = _wmean(w, s)
    return {"mean": mean, "variance": _wmean(w, (s - mean) ** 2), "mse": _wmean(w, (s - tau) ** 2)}


def _check(name, lhs, rhs, tol, route) -> dict:
    return {"name": name, "lhs": float(lhs), "rhs": float(rhs), "tolerance": float(tol),
            "route": route, "pass": bool(lhs <= rhs + tol)}


def default_checks(spec: LearnerSpec, mode: str) -> list:
    out = ["unbiased", "thm1"]
    out.append("thm2" if spec.mode == "weighted" else "thm_general")
    if spec.mode == "weighted" and spec.eta_schedule == "theorem":
        if spec.type == "ogd_tabular":
            out.append("thm3")
        if spec.type == "ogd_linear":
            out.append("thm4")
    if spec.type == "aggregating":
        out.append("finite")
    if mode in ("exact", "both"):
        out.append("lower_bound")
    return out


def _validate_pairing(spec: LearnerSpec, checks: list, mode: str):
    need = {
        "thm2": spec.mode == "weighted",
        "thm_general": spec.mode == "plain",
        "thm3": spec.type == "ogd_tabular" and spec.mode == "weighted" and spec.eta_schedule == "theorem",
        "thm4": spec.type == "ogd_linear" and spec.mode == "weighted" and spec.eta_schedule == "theorem",
        "finite": spec.type == "aggregating",
        "lower_bound": mode in ("exact", "both"),
        "mc_consistency": mode == "both",
    }
    for c in checks:
        if not need.get(c, True):
            raise ConfigurationError(f"check {c!r} does not apply to learner {spec.type}/{spec.mode} in mode {mode}")


def pathwise_bound(ctx: Context) -> Optional[float]:
    spec, inst, n, B = ctx.learner, ctx.instance, ctx.config.n, ctx.B
    L = spec.bound_L(inst)
    if spec.type == "ogd_tabular":
        return 6.0 * L * B * B * box_diameter(inst.n_contexts, inst.n_actions, L) * math.sqrt(n)
    if spec.type == "ogd_linear":
        R = float(spec.R)
        return 6.0 * B * B * R * (L + R) * math.sqrt(n)
    if spec.type == "aggregating":
        return 32.0 * L * L * math.log(len(spec.experts))
    return None


def _route_checks(ctx: Context, q: dict, w: np.ndarray, route: str, approx: float, checks: list) -> list:
    """Bound checks from per-path quantities under weights ``w``."""
    n, tau, cvar = ctx.config.n, ctx.tau_star, ctx.cvar
    regret = q["loss_total"] - q["hindsight"]
    mse = (q["aipw"] - tau) ** 2
    out = []
    exact = route == "exact"
    R = w.size

    def compare(name, d_terms, rhs_terms):
        lhs = _wmean(w, mse)
        rhs = _wmean(w, rhs_terms)
        tol = EXACT_TOL if exact else MC_SIGMAS * jackknife_se(d_terms)
        out.append(_check(name, lhs, rhs, tol, route))

    if "unbiased" in checks:
        if exact:
            lhs = max(abs(_wmean(w, q[e]) - tau) for e in ESTIMATORS)
            out.append(_check("unbiased", lhs, 0.0, EXACT_TOL, route))
        else:
            z = max(abs(_wmean(w, q[e]) - tau) / max(jackknife_se(q[e]), 1e-300) for e in ESTIMATORS)
            out.append(_check("unbiased", z, MC_SIGMAS, 0.0, route))
    if "thm1" in checks:
        rhs_t = (cvar + q["sigma_term"] + q["err_term"]) / n
        compare("thm1", mse - rhs_t, rhs_t)
    if "thm2" in checks:
        rhs_t = (cvar + q["sigma_term"] + regret / n + approx) / n
        compare("thm2", mse - rhs_t, rhs_t)
    if "thm_general" in checks:
        B2 = ctx.B ** 2
        rhs_t = (cvar + q["sigma_term"] + B2 * (regret / n + approx)) / n
        compare("thm_general", mse - rhs_t, rhs_t)
    for name in ("thm3", "thm4", "finite"):
        if name in checks:
            support = w > 0
            lhs = float(np.max((regret + q["gap"])[support]))
            out.append(_check(name, lhs, pathwise_bound(ctx), EXACT_TOL, route))
    return out


@dataclass
class ExperimentReport:
    data: dict
    timing: dict = field(default_factory=dict)

    @property
    def checks(self) -> list:
        return self.data["checks"]

    @property
    def all_pass(self) -> bool:
        return all(c["pass"] for c in self.checks)

    def to_json(self) -> str:
        """Deterministic JSON; timing is kept out so reruns are byte identical."""
        return json.dumps(self.data, indent=2, sort_keys=True, allow_nan=True)


def _mc_chunk(ctx: Context, offset: int, size: int) -> dict:
    paths = simulate_paths(ctx.instance, ctx.policy, ctx.config.n, size, ctx.config.seed, offset)
    q = path_quantities(ctx, paths)
    q["wtab"] = _per_path_weight_tables(ctx, paths)
    return q


def _per_path_weight_tables(ctx: Context, paths: Paths) -> np.ndarray:
    nx, na = ctx.instance.n_contexts, ctx.instance.n_actions
    W = loss_weight(ctx.g[paths.X, paths.A], paths.PI, ctx.learner.mode)
    cell = paths.X * na + paths.A + (nx * na) * np.arange(paths.N)[:, None]
    return np.bincount(cell.ravel(), W.ravel(), paths.N * nx * na).reshape(paths.N, nx, na) / paths.n


def monte_carlo(ctx: Context) -> dict:
    """Per-replication quantities for all replications, in replication order."""
    R, size = ctx.config.replications, max(1, ctx.config.chunk_size)
    chunks = [(o, min(size, R - o)) for o in range(0, R, size)]
    if ctx.config.workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(ctx.config.workers) as ex:
            parts = list(ex.map(lambda c: _mc_chunk(ctx, *c), chunks))
    else:
        parts = [_mc_chunk(ctx, *c) for c in chunks]
    return {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}


def _mc_approx(ctx: Context, q: dict) -> float:
    wt = q["wtab"].mean(axis=0)
    val, gap = ctx.cls.approximation_error(wt, np.asarray(ctx.instance.mu_star))
    return max(val - gap, 0.0)


def mc_mse(config, estimator: str = "aipw"):
    """Monte Carlo MSE against the true value with its jackknife standard error."""
    if not isinstance(config, ExperimentConfig):
        config = ExperimentConfig.from_dict(config)
    if config.replications < 2:
        raise ConfigurationError("need at least two replications")
    ctx = Context.build(config)
    q = monte_carlo(ctx)
    sq = (q[estimator] - ctx.tau_star) ** 2
    return float(np.mean(sq)), jackknife_se(sq)


def run_experiment(config) -> ExperimentReport:
    """Evaluate estimators and bound checks for one configuration."""
    if not isinstance(config, ExperimentConfig):
        config = ExperimentConfig.from_dict(config)
    t0 = time.perf_counter()
    ctx = Context.build(config)
    checks = list(config.checks) if config.checks is not None else default_checks(ctx.learner, config.mode)
    _validate_pairing(ctx.learner, checks, config.mode)
    timing = {}
    data = {
        "provenance": {"config_hash": config.config_hash(), "seed": config.seed},
        "n": config.n, "mode": config.mode, "replications": config.replications,
        "tau_star": ctx.tau_star, "B": ctx.B, "context_variance": ctx.cvar,
        "learner": {"type": ctx.learner.type, "mode": ctx.learner.mode},
        "estimators": {e: {} for e in ESTIMATORS},
        "regret": {}, "tolerances": {"exact_abs": EXACT_TOL, "mc_sigmas": MC_SIGMAS},
        "discrepancies": [],
    }
    results = []
    exact_stats = None
    if config.mode in ("exact", "both"):
        t = time.perf_counter()
        dist = enumerate_trajectories(ctx.instance, ctx.policy, ctx.g, config.n, config.cap)
        q = path_quantities(ctx, dist)
        w = dist.weight
        for e in ESTIMATORS:
            data["estimators"][e]["exact"] = _moments(w, q[e], ctx.tau_star)
        reg = q["loss_total"] - q["hindsight"]
        data["regret"]["exact"] = {"mean": _wmean(w, reg), "max": float(np.max(reg)),
                                   "max_certified": float(np.max(reg + q["gap"]))}
        vs = ctx.cvar + _wmean(w, q["sigma_term"])
        data["v_star_sq"] = vs
        approx = _approx(ctx, dist)
        data["approximation_error"] = approx
        results += _route_checks(ctx, q, w, "exact", approx, checks)
        if "lower_bound" in checks:
            ref = reference_policies(ctx.instance, ctx.policy, config.n, ctx.g, dist)
            fl = theorem5_floor(ctx.instance, ctx.policy, ref, ctx.g, config.n, dist)
            fl.estimator_mse = {e: data["estimators"][e]["exact"]["mse"] for e in ESTIMATORS}
            data["lower_bound"] = fl.to_dict()
            results.append(_check("lower_bound", fl.floor, min(fl.estimator_mse.values()), EXACT_TOL, "exact"))
        exact_stats = data["estimators"]
        timing["exact_s"] = time.perf_counter() - t
    if config.mode in ("mc", "both"):
        t = time.perf_counter()
        q = monte_carlo(ctx)
        R = config.replications
        w = np.full(R, 1.0 / R)
        for e in ESTIMATORS:
            m = _moments(w, q[e], ctx.tau_star)
            m["mean_se"] = jackknife_se(q[e])
            m["variance_se"] = jackknife_var_se(q[e])
            m["mse_se"] = jackknife_se((q[e] - ctx.tau_star) ** 2)
            data["estimators"][e]["mc"] = m
        reg = q["loss_total"] - q["hindsight"]
        data["regret"]["mc"] = {"mean": float(np.mean(reg)), "mean_se": jackknife_se(reg),
                                "max": float(np.max(reg)), "max_certified": float(np.max(reg + q["gap"]))}
        approx = _mc_approx(ctx, q)
        data["approximation_error_mc"] = approx
        # in ``both`` mode the bound checks come from the exact route only
        mc_checks = [] if exact_stats is not None else [c for c in checks if c != "lower_bound"]
        results += _route_checks(ctx, q, w, "mc", approx, mc_checks)
        timing["mc_s"] = time.perf_counter() - t
        if exact_stats is not None:
            worst = 0.0
            for e in ESTIMATORS:
                ex, mc = exact_stats[e]["exact"], exact_stats[e]["mc"]
                for key, se in (("mean", "mean_se"), ("mse", "mse_se"), ("variance", "variance_se")):
                    z = abs(mc[key] - ex[key]) / mc[se] if mc[se] > 0 else (0.0 if mc[key] == ex[key] else math.inf)
                    worst = max(worst, z)
                    if z > MC_SIGMAS:
                        data["discrepancies"].append({"estimator": e, "quantity": key, "z": z})
            if "mc_consistency" in checks:
                results.append(_check("mc_consistency", worst, MC_SIGMAS, 0.0, "both"))
    data["checks"] = results
    data["all_pass"] = all(c["pass"] for c in results)
    timing["total_s"] = time.perf_counter() - t0
    return ExperimentReport(data, timing)
