"""Exact enumeration of trajectory laws, divergences and conditioning bounds.

The enumerated law is an ordinary weighted :class:`~aipwlab.instance.Paths`
batch, so every functional below accepts Monte Carlo batches as well; with
``weight = 1/N`` the same code yields the plug-in estimate.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np

from .instance import Paths, ProblemInstance, as_table, context_values, off_policy_value
from .policies import take_state

DEFAULT_CAP = 10 ** 6


class EnumerationCapError(ValueError):
    """Support too large to enumerate; use Monte Carlo instead."""


@dataclass
class TrajectoryDistribution(Paths):
    """Every trajectory with positive mass and its exact probability."""

    logp: Optional[np.ndarray] = None
    instance: Optional[ProblemInstance] = None
    g: Optional[np.ndarray] = None

    @property
    def prob(self) -> np.ndarray:
        return self.weight

    def summary(self) -> dict:
        return {"support": int(self.N), "n": int(self.n), "total_mass": float(np.sum(self.weight))}


def enumerate_trajectories(instance: ProblemInstance, policy, g=None, n: int = 1,
                           cap: int = DEFAULT_CAP) -> TrajectoryDistribution:
    """Expand the trajectory law round by round in the log domain.

    Adaptive policies are evaluated on every prefix through their batched
    interface.  Zero-mass branches are pruned, so the support may be much
    smaller than the ``(|X||A||Y|)^n`` bound checked against ``cap``.
    """
    if not instance.is_finite:
        raise ValueError("exact enumeration needs a finite outcome grid")
    if n < 1:
        raise ValueError("n must be positive")
    n_x, n_a, n_y = instance.n_contexts, instance.n_actions, instance.n_outcomes
    if (n_x * n_a * n_y) ** n > cap:
        raise EnumerationCapError(f"(|X||A||Y|)^n = {(n_x * n_a * n_y) ** n} exceeds cap {cap}")
    with np.errstate(divide="ignore"):
        log_xi = np.log(instance.context_pmf)
        log_ker = np.log(instance.kernel)
    X = np.zeros((1, 0), dtype=np.int64)
    A = np.zeros((1, 0), dtype=np.int64)
    Yi = np.zeros((1, 0), dtype=np.int64)
    PMF = np.zeros((1, 0, n_a))
    logp = np.zeros(1)
    state = policy.init_state(1)
    xs = np.arange(n_x)
    for i in range(n):
        N = logp.size
        pm = np.stack([policy.batch_pmf(i, np.full(N, x), state) for x in xs], axis=1)  # (N, nX, nA)
        with np.errstate(divide="ignore"):
            lp = (logp[:, None, None, None] + log_xi[None, :, None, None] + np.log(pm)[..., None]
                  + log_ker[None])
        mask = (instance.context_pmf[None, :, None, None] > 0) & (pm[..., None] > 0) & (instance.kernel[None] > 0)
        par, x, a, y = np.nonzero(mask)
        X = np.concatenate([X[par], x[:, None]], axis=1)
        A = np.concatenate([A[par], a[:, None]], axis=1)
        Yi = np.concatenate([Yi[par], y[:, None]], axis=1)
        PMF = np.concatenate([PMF[par], pm[par, x][:, None, :]], axis=1)
        logp = lp[par, x, a, y]
        state = take_state(state, par)
        policy.advance(state, i, x, a, instance.outcome_grid[y])
    prob = np.exp(logp)
    Y = instance.outcome_grid[Yi]
    PI = np.take_along_axis(PMF, A[..., None], axis=2)[..., 0]
    return TrajectoryDistribution(X, A, Y, PI, PMF, prob, Yi, logp, instance,
                                  None if g is None else as_table(g))


@dataclass
class Moments:
    mean: float
    variance: float
    mse: float

    def as_dict(self) -> dict:
        return {"mean": self.mean, "variance": self.variance, "mse": self.mse}


def _values(dist: Paths, statistic) -> np.ndarray:
    return np.asarray(statistic(dist) if callable(statistic) else statistic, dtype=float)


def exact_moments(dist: Paths, statistic: Union[Callable, np.ndarray],
                  tau_star: Optional[float] = None) -> Moments:
    """Weighted mean, variance and mean squared error against ``tau_star``.

    ``statistic`` is either per-path values or a function of the batch.
    ``tau_star`` defaults to the off-policy value of the distribution's
    instance and functional.
    """
    s = _values(dist, statistic)
    w = dist.weight
    mean = float(np.sum(w * s))
    var = float(np.sum(w * (s - mean) ** 2))
    if tau_star is None:
        tau_star = off_policy_value(dist.instance, dist.g)
    mse = float(np.sum(w * (s - tau_star) ** 2))
    return Moments(mean, var, mse)


def history_keys(dist: Paths, i: int, include_action: bool = False) -> np.ndarray:
    """Group id of each path's ``(prefix before round i, x_i[, a_i])``."""
    y_cols = dist.Yidx if dist.Yidx is not None else dist.Y
    cols = [dist.X[:, :i + 1], dist.A[:, :i + 1 if include_action else i],
            np.asarray(y_cols[:, :i], dtype=float)]
    key = np.concatenate([c.astype(float) for c in cols], axis=1)
    if key.shape[1] == 0:
        return np.zeros(dist.N, dtype=np.int64)
    _, inv = np.unique(key, axis=0, return_inverse=True)
    return inv.reshape(-1)


def conditional_expectation(dist: Paths, values, i: int, include_action: bool = False) -> np.ndarray:
    """``E[values | prefix before round i, x_i (, a_i)]`` broadcast back to paths."""
    v = np.asarray(values, dtype=float)
    grp = history_keys(dist, i, include_action)
    mass = np.bincount(grp, dist.weight)
    tot = np.bincount(grp, dist.weight * v)
    return (tot / mass)[grp]


def round_marginals(dist: Paths, k: Optional[int] = None) -> np.ndarray:
    """``P(X_i = x, A_i = a)`` for rounds ``i < k``; shape ``(k, X, A)``."""
    k = dist.n if k is None else k
    n_a = dist.PMF.shape[2]
    n_x = int(dist.X.max()) + 1 if dist.instance is None else dist.instance.n_contexts
    out = np.zeros((k, n_x, n_a))
    for i in range(k):
        np.add.at(out[i], (dist.X[:, i], dist.A[:, i]), dist.weight)
    return out


def weight_table(dist: Paths, g, k: Optional[int] = None, mode: str = "weighted") -> np.ndarray:
    """Table ``W`` with ``sum_xa W (phi)^2 = ||phi||^2_(k)`` (or its plain-loss analogue)."""
    k = dist.n if k is None else k
    gt = as_table(g)
    n_x, n_a = gt.shape
    out = np.zeros((n_x, n_a))
    for i in range(k):
        x, a = dist.X[:, i], dist.A[:, i]
        w = (gt[x, a] / dist.PI[:, i]) ** 2 if mode == "weighted" else np.ones(dist.N)
        np.add.at(out, (x, a), dist.weight * w)
    return out / k


def weighted_l2_norm_sq(dist: Paths, g, phi, k: Optional[int] = None) -> float:
    """``(1/k) sum_{i<=k} E[g^2 phi^2 / pi_i^2]`` under the batch law."""
    k = dist.n if k is None else k
    if k > dist.n:
        raise ValueError("k exceeds the horizon")
    gt = as_table(g)
    ph = np.asarray(phi, dtype=float)
    if ph.ndim == 0:
        ph = np.full(gt.shape, float(ph))
    X, A, PI = dist.X[:, :k], dist.A[:, :k], dist.PI[:, :k]
    per_path = np.sum((gt[X, A] * ph[X, A] / PI) ** 2, axis=1)
    return float(np.sum(dist.weight * per_path) / k)


def context_variance(instance: ProblemInstance, g) -> float:
    """``Var_X <g(X, .), mu*(X, .)>`` under the context pmf."""
    cv = context_values(instance, g)
    m = float(instance.context_pmf @ cv)
    return float(instance.context_pmf @ (cv - m) ** 2)


def v_star_sq(dist: Paths, instance: ProblemInstance, g, n: Optional[int] = None) -> float:
    """Context variance plus ``||sigma||^2_(n)``."""
    return context_variance(instance, g) + weighted_l2_norm_sq(dist, g, np.sqrt(instance.sigma_sq), n)


def divergence(kind: str, p, q) -> float:
    """KL, chi-square or total variation between pmfs on a shared index set."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError("pmfs must share an index set")
    if np.any(p < 0) or np.any(q < 0):
        raise ValueError("negative mass")
    if kind == "TV":
        return 0.5 * float(np.sum(np.abs(p - q)))
    sup = p > 0
    if np.any(q[sup] <= 0):
        return math.inf
    if kind == "KL":
        return float(np.sum(p[sup] * np.log(p[sup] / q[sup])))
    if kind == "chi2":
        qs = q > 0
        return float(np.sum((p[qs] - q[qs]) ** 2 / q[qs]))
    raise ValueError(f"unknown divergence {kind!r}")


def tv_conditioning_gap(mu, nu, A, B):
    """Actual ``|TV(mu|A, nu|B) - TV(mu, nu)|`` and its certificate ``2 eps``."""
    mu = np.asarray(mu, dtype=float)
    nu = np.asarray(nu, dtype=float)
    A = np.asarray(A, dtype=bool)
    B = np.asarray(B, dtype=bool)
    mA, nB = float(mu[A].sum()), float(nu[B].sum())
    eps = 1.0 - min(mA, nB)
    if eps > 0.25:
        raise ValueError(f"conditioning events too small: eps = {eps} > 1/4")
    gap = abs(divergence("TV", np.where(A, mu, 0) / mA, np.where(B, nu, 0) / nB) - divergence("TV", mu, nu))
    bound = 2.0 * eps
    assert gap <= bound + 1e-12, (gap, bound)
    return gap, bound
