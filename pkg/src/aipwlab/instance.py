"""Problem instances, evaluation functionals, trajectories and data generation.

All spaces are finite label sets indexed ``0..k-1`` internally; base measures
are counting measures, so every inner product over actions is a finite sum.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.special import ndtri

from .rng import replication_uniforms

PMF_ATOL = 1e-12


class ConfigurationError(ValueError):
    """Inputs that do not describe a valid instance, policy or functional."""


class OverlapError(ValueError):
    """A policy without a positive propensity floor."""


def _frozen(arr, dtype=float) -> np.ndarray:
    out = np.array(arr, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class ProblemInstance:
    """Ground-truth instance: context pmf plus an outcome kernel.

    Outcomes are either a finite grid with conditional pmf ``kernel[x, a, y]``
    or Gaussian with tables ``gaussian_mean`` / ``gaussian_var`` (lower-bound
    constructions only; enumeration rejects them).
    """

    context_pmf: np.ndarray
    outcome_grid: Optional[np.ndarray] = None
    kernel: Optional[np.ndarray] = None
    gaussian_mean: Optional[np.ndarray] = None
    gaussian_var: Optional[np.ndarray] = None
    L: Optional[float] = None
    contexts: Optional[tuple] = None
    actions: Optional[tuple] = None
    mu_star: np.ndarray = field(init=False, repr=False)
    sigma_sq: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        xi = _frozen(self.context_pmf)
        if xi.ndim != 1 or np.any(xi < 0) or abs(xi.sum() - 1.0) > PMF_ATOL:
            raise ConfigurationError("context_pmf must be a pmf")
        object.__setattr__(self, "context_pmf", xi)
        n_x = xi.size
        if self.kernel is not None:
            grid = _frozen(self.outcome_grid)
            ker = _frozen(self.kernel)
            if ker.ndim != 3 or ker.shape[0] != n_x or ker.shape[2] != grid.size:
                raise ConfigurationError(f"kernel shape {ker.shape} does not match spaces")
            if np.any(ker < 0) or np.any(np.abs(ker.sum(axis=2) - 1.0) > PMF_ATOL):
                raise ConfigurationError("every kernel row must be a pmf")
            L = float(np.max(np.abs(grid))) if self.L is None else float(self.L)
            if np.any(np.abs(grid) > L):
                raise ConfigurationError("outcome grid exceeds the magnitude bound L")
            mu = ker @ grid
            var = np.einsum("xay,xay->xa", ker, (grid[None, None, :] - mu[..., None]) ** 2)
            object.__setattr__(self, "outcome_grid", grid)
            object.__setattr__(self, "kernel", ker)
        elif self.gaussian_mean is not None:
            mu = np.array(self.gaussian_mean, dtype=float)
            var = np.array(self.gaussian_var, dtype=float)
            if mu.shape != var.shape or mu.ndim != 2 or mu.shape[0] != n_x:
                raise ConfigurationError("gaussian mean/var tables must be (contexts, actions)")
            if np.any(var < 0):
                raise ConfigurationError("negative variance")
            L = float(self.L) if self.L is not None else float("inf")
            object.__setattr__(self, "gaussian_mean", _frozen(mu))
            object.__setattr__(self, "gaussian_var", _frozen(var))
        else:
            raise ConfigurationError("instance needs a finite kernel or Gaussian outcome tables")
        if L <= 0:
            raise ConfigurationError("L must be positive")
        object.__setattr__(self, "L", L)
        object.__setattr__(self, "mu_star", _frozen(mu))
        object.__setattr__(self, "sigma_sq", _frozen(np.maximum(var, 0.0)))
        n_a = mu.shape[1]
        object.__setattr__(self, "contexts", tuple(self.contexts) if self.contexts else tuple(range(n_x)))
        object.__setattr__(self, "actions", tuple(self.actions) if self.actions else tuple(range(n_a)))
        if len(self.contexts) != n_x or len(self.actions) != n_a:
            raise ConfigurationError("label sets do not match table shapes")

    @property
    def n_contexts(self) -> int:
        return self.context_pmf.size

    @property
    def n_actions(self) -> int:
        return self.mu_star.shape[1]

    @property
    def n_outcomes(self) -> int:
        return 0 if self.outcome_grid is None else self.outcome_grid.size

    @property
    def is_finite(self) -> bool:
        return self.kernel is not None

    def with_context_pmf(self, xi) -> "ProblemInstance":
        return ProblemInstance(
            context_pmf=xi,
            outcome_grid=self.outcome_grid,
            kernel=self.kernel,
            gaussian_mean=self.gaussian_mean,
            gaussian_var=self.gaussian_var,
            L=self.L,
            contexts=self.contexts,
            actions=self.actions,
        )

    @classmethod
    def gaussian(cls, context_pmf, mean, var, **kw) -> "ProblemInstance":
        return cls(context_pmf=context_pmf, gaussian_mean=mean, gaussian_var=var, **kw)


def random_instance(rng: np.random.Generator, n_contexts=2, n_actions=2, n_outcomes=2, L=1.0,
                    grid=None) -> ProblemInstance:
    """Random finite instance with Dirichlet pmfs and a fixed outcome grid."""
    if grid is None:
        grid = np.linspace(-L, L, n_outcomes) if n_outcomes > 1 else np.array([L / 2])
    xi = rng.dirichlet(np.ones(n_contexts))
    ker = rng.dirichlet(np.ones(len(grid)), size=(n_contexts, n_actions))
    return ProblemInstance(context_pmf=xi / xi.sum(), outcome_grid=grid, kernel=ker, L=L)


@dataclass(frozen=True)
class EvaluationFunctional:
    table: np.ndarray
    kind: str = "Custom"

    def __post_init__(self):
        object.__setattr__(self, "table", _frozen(self.table))
        if self.table.ndim != 2:
            raise ConfigurationError("g must be a (contexts, actions) table")
        if self.kind == "TargetPolicy":
            if np.any(self.table < 0) or np.any(np.abs(self.table.sum(axis=1) - 1.0) > PMF_ATOL):
                raise ConfigurationError("target policy rows must be pmfs")
        elif self.kind == "ATE":
            if self.table.shape[1] != 2:
                raise ConfigurationError("ATE needs a binary action set")
        elif self.kind != "Custom":
            raise ConfigurationError(f"unknown functional kind {self.kind!r}")

    def __array__(self, dtype=None, copy=None):
        return self.table if dtype is None else self.table.astype(dtype)


def make_functional(kind: str, instance: ProblemInstance, table=None) -> EvaluationFunctional:
    """Build ``g`` for the ATE (``g(x, a) = 2a - 1``) or a target policy."""
    if kind == "ATE":
        if instance.n_actions != 2:
            raise ConfigurationError("ATE needs a binary action set")
        labels = np.asarray(instance.actions)
        if set(labels.tolist()) != {0, 1}:
            raise ConfigurationError("ATE needs actions labelled {0, 1}")
        row = 2.0 * labels.astype(float) - 1.0
        return EvaluationFunctional(np.tile(row, (instance.n_contexts, 1)), "ATE")
    if kind == "TargetPolicy":
        t = np.asarray(table, dtype=float)
        if t.ndim == 1:
            t = np.tile(t, (instance.n_contexts, 1))
        _check_shape(t, instance)
        return EvaluationFunctional(t, "TargetPolicy")
    if kind == "Custom":
        t = np.asarray(table, dtype=float)
        _check_shape(t, instance)
        return EvaluationFunctional(t, "Custom")
    raise ConfigurationError(f"unknown functional kind {kind!r}")


def _check_shape(table: np.ndarray, instance: ProblemInstance):
    if table.shape != (instance.n_contexts, instance.n_actions):
        raise ConfigurationError(
            f"g has shape {table.shape}, instance is {(instance.n_contexts, instance.n_actions)}"
        )


def as_table(g) -> np.ndarray:
    return g.table if isinstance(g, EvaluationFunctional) else np.asarray(g, dtype=float)


def off_policy_value(instance: ProblemInstance, g) -> float:
    """``sum_x xi(x) sum_a g(x, a) mu*(x, a)``."""
    gt = as_table(g)
    _check_shape(gt, instance)
    return float(instance.context_pmf @ np.sum(gt * instance.mu_star, axis=1))


def context_values(instance: ProblemInstance, g) -> np.ndarray:
    """``<g(x, .), mu*(x, .)>`` for every context."""
    return np.sum(as_table(g) * instance.mu_star, axis=1)


# --------------------------------------------------------------------------
# trajectories


@dataclass(frozen=True)
class Trajectory:
    """One observed sequence ``(x_i, a_i, y_i)`` with realized propensities.

    ``pmf`` holds the full behavior pmf row at every round, recorded at
    sampling time; ``pi[i] == pmf[i, a[i]]``.
    """

    x: np.ndarray
    a: np.ndarray
    y: np.ndarray
    pi: np.ndarray
    pmf: np.ndarray

    def __post_init__(self):
        for name, dtype in (("x", np.int64), ("a", np.int64), ("y", float), ("pi", float), ("pmf", float)):
            object.__setattr__(self, name, _frozen(getattr(self, name), dtype))

    @property
    def n(self) -> int:
        return self.x.size

    def __len__(self):
        return self.n

    def prefix(self, k: int) -> "Trajectory":
        return Trajectory(self.x[:k], self.a[:k], self.y[:k], self.pi[:k], self.pmf[:k])

    def records(self):
        return list(zip(self.x.tolist(), self.a.tolist(), self.y.tolist(), self.pi.tolist()))

    def as_paths(self) -> "Paths":
        return Paths(self.x[None], self.a[None], self.y[None], self.pi[None], self.pmf[None], np.ones(1))

    def to_csv(self, path, instance: Optional[ProblemInstance] = None):
        xs = instance.contexts if instance else None
        acts = instance.actions if instance else None
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["i", "x", "a", "y", "pi"])
            for i, (x, a, y, p) in enumerate(self.records(), start=1):
                w.writerow([i, xs[x] if xs else x, acts[a] if acts else a, repr(y), repr(p)])


def read_trajectory_csv(path, instance: Optional[ProblemInstance] = None, policy=None) -> Trajectory:
    """Load a trajectory exported by :meth:`Trajectory.to_csv`.

    The pmf rows are not stored in the CSV; they are replayed from ``policy``
    when given, otherwise only the realized entry is known and the other
    entries are NaN.
    """
    rows = list(csv.DictReader(open(path, newline="")))
    xl = {str(v): k for k, v in enumerate(instance.contexts)} if instance else None
    al = {str(v): k for k, v in enumerate(instance.actions)} if instance else None
    x = np.array([xl[r["x"]] if xl else int(r["x"]) for r in rows], dtype=np.int64)
    a = np.array([al[r["a"]] if al else int(r["a"]) for r in rows], dtype=np.int64)
    y = np.array([float(r["y"]) for r in rows])
    pi = np.array([float(r["pi"]) for r in rows])
    n_a = instance.n_actions if instance else int(a.max()) + 1
    pmf = np.full((len(rows), n_a), np.nan)
    if policy is not None:
        for i in range(len(rows)):
            prefix = Trajectory(x[:i], a[:i], y[:i], pi[:i], pmf[:i])
            pmf[i] = policy.pmf(int(x[i]), prefix)
    else:
        pmf[np.arange(len(rows)), a] = pi
    return Trajectory(x, a, y, pi, pmf)


@dataclass
class Paths:
    """A weighted batch of equal-length trajectories.

    Arrays are ``(N, n)`` (``pmf`` is ``(N, n, n_actions)``); ``weight`` sums
    to one: exact probabilities for an enumerated law, ``1/N`` for Monte Carlo.
    """

    X: np.ndarray
    A: np.ndarray
    Y: np.ndarray
    PI: np.ndarray
    PMF: np.ndarray
    weight: np.ndarray
    Yidx: Optional[np.ndarray] = None

    @property
    def N(self) -> int:
        return self.X.shape[0]

    @property
    def n(self) -> int:
        return self.X.shape[1]

    def trajectory(self, k: int) -> Trajectory:
        return Trajectory(self.X[k], self.A[k], self.Y[k], self.PI[k], self.PMF[k])

    def take(self, idx) -> "Paths":
        w = self.weight[idx]
        return Paths(self.X[idx], self.A[idx], self.Y[idx], self.PI[idx], self.PMF[idx],
                     w / w.sum(), None if self.Yidx is None else self.Yidx[idx])

    @classmethod
    def concat(cls, parts: Sequence["Paths"]) -> "Paths":
        w = np.concatenate([p.weight * p.N for p in parts])
        return cls(
            np.concatenate([p.X for p in parts]),
            np.concatenate([p.A for p in parts]),
            np.concatenate([p.Y for p in parts]),
            np.concatenate([p.PI for p in parts]),
            np.concatenate([p.PMF for p in parts]),
            w / w.sum(),
            None if parts[0].Yidx is None else np.concatenate([p.Yidx for p in parts]),
        )


def _inverse_cdf(cdf: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Row-wise inverse CDF; ``cdf`` is ``(N, k)`` or ``(k,)``, ``u`` is ``(N,)``."""
    cdf = np.atleast_2d(cdf)
    cdf = cdf / cdf[:, -1:]
    idx = np.sum(cdf <= u[:, None], axis=1)
    return np.minimum(idx, cdf.shape[1] - 1)


def simulate_paths(instance: ProblemInstance, policy, n: int, reps: int, seed: int,
                   offset: int = 0) -> Paths:
    """Monte Carlo replications ``offset .. offset + reps - 1`` of the adaptive experiment.

    Replication ``k`` consumes its own stream, so results do not depend on
    how replications are chunked.
    """
    if n < 1 or reps < 1:
        raise ConfigurationError("need n >= 1 and reps >= 1")
    if policy.n_actions != instance.n_actions:
        raise ConfigurationError("policy and instance disagree on the action set")
    U = replication_uniforms(seed, reps, n, 3, offset)
    X = np.empty((reps, n), dtype=np.int64)
    A = np.empty((reps, n), dtype=np.int64)
    Y = np.empty((reps, n))
    Yidx = np.empty((reps, n), dtype=np.int64) if instance.is_finite else None
    PI = np.empty((reps, n))
    PMF = np.empty((reps, n, instance.n_actions))
    xi_cdf = np.cumsum(instance.context_pmf)
    ker_cdf = np.cumsum(instance.kernel, axis=2) if instance.is_finite else None
    state = policy.init_state(reps)
    rows = np.arange(reps)
    for i in range(n):
        x = _inverse_cdf(xi_cdf, U[:, i, 0])
        pmf = policy.batch_pmf(i, x, state)
        a = _inverse_cdf(np.cumsum(pmf, axis=1), U[:, i, 1])
        if instance.is_finite:
            yi = _inverse_cdf(ker_cdf[x, a], U[:, i, 2])
            y = instance.outcome_grid[yi]
            Yidx[:, i] = yi
        else:
            u = np.clip(U[:, i, 2], 1e-300, None)
            y = instance.gaussian_mean[x, a] + np.sqrt(instance.gaussian_var[x, a]) * ndtri(u)
        X[:, i], A[:, i], Y[:, i] = x, a, y
        PMF[:, i] = pmf
        PI[:, i] = pmf[rows, a]
        policy.advance(state, i, x, a, y)
    return Paths(X, A, Y, PI, PMF, np.full(reps, 1.0 / reps), Yidx)


def sample_trajectory(instance: ProblemInstance, policy, n: int, seed: int) -> Trajectory:
    """Draw one trajectory; identical seeds give identical trajectories."""
    return simulate_paths(instance, policy, n, 1, seed).trajectory(0)


def overlap_constant(instance: ProblemInstance, policy, g, n: int) -> float:
    """Strict-overlap constant ``B = max |g| / pi`` over reachable tuples.

    Exact over the table for history-independent policies; the certified
    bound ``max |g| / p_min`` for adaptive ones.
    """
    gt = np.abs(as_table(g))
    if policy.p_min <= 0:
        raise OverlapError("policy has no positive propensity floor")
    if not policy.history_independent:
        return float(gt.max() / policy.p_min)
    reach = instance.context_pmf > 0
    best = 0.0
    for i in range(n):
        tab = policy.round_table(i)
        if np.any(tab[reach] <= 0):
            raise OverlapError("zero propensity on a reachable context")
        best = max(best, float(np.max((gt / tab)[reach])))
    return best


# --------------------------------------------------------------------------
# configuration


def instance_from_config(cfg: dict) -> ProblemInstance:
    contexts = cfg.get("contexts")
    actions = cfg.get("actions")
    if "gaussian" in cfg:
        gs = cfg["gaussian"]
        return ProblemInstance.gaussian(cfg["context_pmf"], gs["mean"], gs["var"], L=cfg.get("L"),
                                        contexts=contexts, actions=actions)
    try:
        return ProblemInstance(
            context_pmf=cfg["context_pmf"],
            outcome_grid=cfg["outcome_grid"],
            kernel=cfg["kernel"],
            L=cfg.get("L"),
            contexts=contexts,
            actions=actions,
        )
    except KeyError as exc:
        raise ConfigurationError(f"missing instance field {exc}") from None


def functional_from_config(cfg: dict, instance: ProblemInstance) -> EvaluationFunctional:
    spec = cfg.get("g", {"kind": "ATE"})
    return make_functional(spec["kind"], instance, spec.get("table"))


def load_config(path_or_dict) -> dict:
    if isinstance(path_or_dict, dict):
        return path_or_dict
    return json.loads(Path(path_or_dict).read_text())
