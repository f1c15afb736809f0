"""Behavior policies.

Each policy exposes a scalar ``pmf(x, history)`` and a batched interface used
by the simulator and the enumerator: ``init_state(N)``, ``batch_pmf(i, x,
state)`` and ``advance(state, i, x, a, y)``.  Policy state is a dict of arrays
with leading dimension ``N`` so it can be gathered with :func:`take_state`.
The scalar form replays the batched form on the stored prefix, so recorded
propensities are reproduced bit for bit.
"""
from __future__ import annotations

from typing import Optional

import numpy as np

from .instance import PMF_ATOL, ConfigurationError, OverlapError, Trajectory


def take_state(state: dict, idx) -> dict:
    return {k: v[idx] for k, v in state.items()}


def floor_and_renormalize(p: np.ndarray, p_min: float) -> np.ndarray:
    """Project each row onto pmfs with every entry at least ``p_min``.

    Entries below the floor are pinned to it and the free mass is shared
    among the remaining entries in proportion to their original weight,
    repeating until no free entry falls below the floor.
    """
    p = np.atleast_2d(np.asarray(p, dtype=float))
    k = p.shape[-1]
    if p_min * k > 1 + PMF_ATOL:
        raise ConfigurationError(f"p_min={p_min} infeasible for {k} actions")
    p = p / p.sum(axis=-1, keepdims=True)
    out = np.empty_like(p)
    for r, row in enumerate(p.reshape(-1, k)):
        pinned = np.zeros(k, dtype=bool)
        q = row.copy()
        while True:
            free_mass = 1.0 - p_min * pinned.sum()
            w = np.where(pinned, 0.0, row)
            if w.sum() <= 0:
                w = np.where(pinned, 0.0, 1.0)
            q = np.where(pinned, p_min, free_mass * w / w.sum())
            low = (~pinned) & (q < p_min)
            if not low.any():
                break
            pinned |= low
        out.reshape(-1, k)[r] = q
    return out


class BehaviorPolicy:
    """Base class; subclasses implement the batched interface."""

    n_actions: int
    p_min: float
    history_independent: bool = False

    def init_state(self, N: int) -> dict:
        return {}

    def batch_pmf(self, i: int, x: np.ndarray, state: dict) -> np.ndarray:
        raise NotImplementedError

    def advance(self, state: dict, i: int, x: np.ndarray, a: np.ndarray, y: np.ndarray) -> None:
        pass

    def round_table(self, i: int) -> np.ndarray:
        raise TypeError(f"{type(self).__name__} is history dependent")

    def pmf(self, x: int, history: Optional[Trajectory] = None) -> np.ndarray:
        """Action pmf at context ``x`` after the observed prefix ``history``."""
        state = self.init_state(1)
        k = 0 if history is None else history.n
        for i in range(k):
            self.advance(state, i, history.x[i:i + 1], history.a[i:i + 1], history.y[i:i + 1])
        return self.batch_pmf(k, np.array([x]), state)[0]


def _validate_table(table: np.ndarray, name: str):
    if np.any(table <= 0):
        raise OverlapError(f"{name} has a non-positive propensity")
    if np.any(np.abs(table.sum(axis=-1) - 1.0) > PMF_ATOL):
        raise ConfigurationError(f"{name} rows must be pmfs")


class MarkovTable(BehaviorPolicy):
    """Fixed per-context pmf, the same at every round."""

    history_independent = True

    def __init__(self, table):
        self.table = np.array(table, dtype=float)
        self.table.setflags(write=False)
        _validate_table(self.table, "MarkovTable")
        self.n_actions = self.table.shape[1]
        self.p_min = float(self.table.min())

    def batch_pmf(self, i, x, state):
        return self.table[x]

    def round_table(self, i):
        return self.table


class ClippedSequential(BehaviorPolicy):
    """Per-round user tables floored at ``p_min`` and renormalized.

    ``tables`` is ``(T, contexts, actions)``; rounds past ``T`` reuse the last
    table.  Still history independent, but not time homogeneous.
    """

    history_independent = True

    def __init__(self, tables, p_min: float):
        t = np.asarray(tables, dtype=float)
        if t.ndim == 2:
            t = t[None]
        if p_min <= 0:
            raise OverlapError("p_min must be positive")
        self.tables = floor_and_renormalize(t, p_min).reshape(t.shape)
        self.tables.setflags(write=False)
        _validate_table(self.tables, "ClippedSequential")
        self.n_actions = t.shape[2]
        self.p_min = float(p_min)

    def round_table(self, i):
        return self.tables[min(i, len(self.tables) - 1)]

    def batch_pmf(self, i, x, state):
        return self.round_table(i)[x]


class EpsilonGreedyAdaptive(BehaviorPolicy):
    """Greedy on per-context running outcome means, mixed with uniform.

    Unvisited pairs have running mean 0; ties go to the lowest action index.
    Every action keeps probability at least ``p_min = epsilon / |A|``.
    """

    def __init__(self, n_contexts: int, n_actions: int, p_min: float = 0.1):
        if p_min <= 0:
            raise OverlapError("p_min must be positive")
        self.epsilon = p_min * n_actions
        if self.epsilon > 1 + PMF_ATOL:
            raise ConfigurationError(f"p_min={p_min} infeasible for {n_actions} actions")
        self.n_contexts = n_contexts
        self.n_actions = n_actions
        self.p_min = float(p_min)

    def init_state(self, N):
        shape = (N, self.n_contexts, self.n_actions)
        return {"sum": np.zeros(shape), "count": np.zeros(shape, dtype=np.int64)}

    def batch_pmf(self, i, x, state):
        rows = np.arange(x.size)
        s = state["sum"][rows, x]
        c = state["count"][rows, x]
        means = np.where(c > 0, s / np.maximum(c, 1), 0.0)
        best = np.argmax(means, axis=1)
        out = np.full((x.size, self.n_actions), self.p_min)
        out[rows, best] += 1.0 - self.epsilon
        return out

    def advance(self, state, i, x, a, y):
        rows = np.arange(x.size)
        state["sum"][rows, x, a] += y
        state["count"][rows, x, a] += 1


def policy_from_config(cfg: dict, n_contexts: int, n_actions: int) -> BehaviorPolicy:
    """``{type: markov|clipped_sequential|epsilon_greedy, table|p_min|epsilon}``."""
    kind = cfg.get("type", "markov")
    if kind == "markov":
        return MarkovTable(cfg["table"])
    if kind == "clipped_sequential":
        return ClippedSequential(cfg["table"], cfg.get("p_min", 0.1))
    if kind == "epsilon_greedy":
        if "epsilon" in cfg:
            return EpsilonGreedyAdaptive(n_contexts, n_actions, cfg["epsilon"] / n_actions)
        return EpsilonGreedyAdaptive(n_contexts, n_actions, cfg.get("p_min", 0.1))
    raise ConfigurationError(f"unknown policy type {kind!r}")
