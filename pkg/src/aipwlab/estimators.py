"""Perturbed IPW, oracle and AIPW estimators.

Every estimator has a batched form over :class:`~aipwlab.instance.Paths`
returning per-round terms of shape ``(N, n)``; the single-trajectory forms
wrap the batched ones so both routes share one implementation.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .learners import regret_of
from .instance import Paths, ProblemInstance, Trajectory, as_table, context_values


@dataclass(frozen=True)
class AuxiliaryCollection:
    """Per-round auxiliary functions ``f_i(x, history, a)``.

    Either ``table`` of shape ``(n, contexts, actions)`` (history free) or
    ``fn(paths, i) -> (N, actions)`` giving ``f_i`` at each path's round-``i``
    context and prefix; ``fn`` may read only columns ``<= i`` of ``X`` and
    ``PMF`` and columns ``< i`` of ``A`` and ``Y``.
    """

    table: Optional[np.ndarray] = None
    fn: Optional[Callable] = None
    orthogonal: bool = False

    def values(self, paths: Paths) -> np.ndarray:
        if self.table is not None:
            t = np.asarray(self.table, dtype=float)
            if t.shape[0] < paths.n:
                raise ValueError("auxiliary table shorter than the trajectory")
            return t[np.arange(paths.n)[None, :], paths.X]
        return np.stack([self.fn(paths, i) for i in range(paths.n)], axis=1)

    def orthogonality_residual(self, paths: Paths) -> float:
        """Largest ``|<f_i, pi_i>|`` over the rounds present in ``paths``."""
        return float(np.max(np.abs(np.sum(self.values(paths) * paths.PMF, axis=2))))

    @classmethod
    def zero(cls, n: int, n_contexts: int, n_actions: int) -> "AuxiliaryCollection":
        return cls(table=np.zeros((n, n_contexts, n_actions)), orthogonal=True)

    @classmethod
    def optimal(cls, instance: ProblemInstance, g) -> "AuxiliaryCollection":
        """``f*_i = g mu* / pi_i - <g, mu*>``, which turns IPW into the oracle estimator."""
        gm = as_table(g) * instance.mu_star
        cv = context_values(instance, g)

        def fn(paths, i):
            x = paths.X[:, i]
            return gm[x] / paths.PMF[:, i] - cv[x][:, None]

        return cls(fn=fn, orthogonal=True)

    @classmethod
    def random_orthogonal(cls, rng: np.random.Generator, n: int, n_contexts: int,
                          n_actions: int, scale: float = 1.0) -> "AuxiliaryCollection":
        """``c_i - <c_i, pi_i>`` for random tables ``c_i``."""
        c = rng.normal(scale=scale, size=(n, n_contexts, n_actions))

        def fn(paths, i):
            ci = c[i][paths.X[:, i]]
            return ci - np.sum(ci * paths.PMF[:, i], axis=1, keepdims=True)

        return cls(fn=fn, orthogonal=True)


def _gather(paths: Paths, table: np.ndarray) -> np.ndarray:
    return table[paths.X, paths.A]


def perturbed_ipw_terms(paths: Paths, g, f: AuxiliaryCollection) -> np.ndarray:
    gt = as_table(g)
    fv = f.values(paths)
    f_taken = np.take_along_axis(fv, paths.A[..., None], axis=2)[..., 0]
    return _gather(paths, gt) * paths.Y / paths.PI - f_taken + np.sum(fv * paths.PMF, axis=2)


def perturbed_ipw_paths(paths: Paths, g, f: AuxiliaryCollection) -> np.ndarray:
    return perturbed_ipw_terms(paths, g, f).mean(axis=1)


def perturbed_ipw_estimate(traj: Trajectory, g, f: AuxiliaryCollection) -> float:
    """Average of ``g y / pi - f_i(a_i) + <f_i, pi_i>`` over rounds."""
    return float(perturbed_ipw_paths(traj.as_paths(), g, f)[0])


def oracle_terms(paths: Paths, g, instance: ProblemInstance) -> np.ndarray:
    gt = as_table(g)
    cv = context_values(instance, g)
    return _gather(paths, gt) * (paths.Y - _gather(paths, instance.mu_star)) / paths.PI + cv[paths.X]


def oracle_paths(paths: Paths, g, instance: ProblemInstance) -> np.ndarray:
    return oracle_terms(paths, g, instance).mean(axis=1)


def oracle_estimate(traj: Trajectory, g, instance: ProblemInstance) -> float:
    """AIPW with the true outcome means plugged in."""
    return float(oracle_paths(traj.as_paths(), g, instance)[0])


def aipw_score(x, a, y, pi, mu_hat, g) -> float:
    """``g(x, a) (y - mu_hat(x, a)) / pi + <g(x, .), mu_hat(x, .)>``."""
    gt = as_table(g)
    mu_hat = np.asarray(mu_hat, dtype=float)
    return float(gt[x, a] * (y - mu_hat[x, a]) / pi + gt[x] @ mu_hat[x])


def aipw_scores_paths(paths: Paths, g, preds: np.ndarray) -> np.ndarray:
    """Scores from prediction rows ``preds[p, i] = mu_hat_i(x_i, .)``."""
    gt = as_table(g)
    grow = gt[paths.X]
    pa = np.take_along_axis(preds, paths.A[..., None], axis=2)[..., 0]
    return _gather(paths, gt) * (paths.Y - pa) / paths.PI + np.sum(grow * preds, axis=2)


@dataclass
class EstimateReport:
    tau_hat: float
    scores: np.ndarray
    losses: np.ndarray = field(default_factory=lambda: np.zeros(0))
    regret: Optional[float] = None
    B: Optional[float] = None
    n: int = 0
    seed: Optional[int] = None

    def to_dict(self) -> dict:
        return {
            "tau_hat": float(self.tau_hat),
            "scores": [float(s) for s in self.scores],
            "regret": None if self.regret is None else float(self.regret),
            "B": None if self.B is None else float(self.B),
            "n": int(self.n),
            "seed": self.seed,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def aipw_estimate(traj: Trajectory, learner, g, function_class=None, B: Optional[float] = None,
                  seed: Optional[int] = None) -> EstimateReport:
    """Predict, score, then update, one round at a time.

    The learner's full table is fixed before round ``i`` is shown to it, so
    no score can depend on its own round through the outcome model.
    """
    gt = as_table(g)
    scores = np.empty(traj.n)
    for i in range(traj.n):
        x, a, y, pi = int(traj.x[i]), int(traj.a[i]), float(traj.y[i]), float(traj.pi[i])
        mu_hat = learner.predict()
        scores[i] = aipw_score(x, a, y, pi, mu_hat, gt)
        learner.update(x, a, y, pi, gt[x, a])
    regret = None
    if function_class is not None and traj.n:
        regret = regret_of(learner.ledger, function_class)
    tau = float(np.mean(scores)) if traj.n else 0.0
    return EstimateReport(tau, scores, np.array(learner.ledger.losses), regret, B, traj.n, seed)
