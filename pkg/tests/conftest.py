from __future__ import annotations

import itertools

import numpy as np
import pytest

from aipwlab.instance import ProblemInstance, Trajectory, make_functional, random_instance
from aipwlab.policies import ClippedSequential, EpsilonGreedyAdaptive, MarkovTable


def brute_force_law(instance, policy, n):
    """Independent enumerator: nested products with the scalar policy API.

    Returns a list of ``(Trajectory, probability)`` with probabilities
    multiplied directly (no log domain, no batching).
    """
    out = []
    nx, na, ny = instance.n_contexts, instance.n_actions, instance.n_outcomes
    for combo in itertools.product(itertools.product(range(nx), range(na), range(ny)), repeat=n):
        p = 1.0
        xs, as_, ys, pis, pmfs = [], [], [], [], []
        for x, a, yi in combo:
            hist = Trajectory(xs, as_, ys, pis, np.array(pmfs).reshape(len(pmfs), na))
            pm = policy.pmf(x, hist)
            p *= instance.context_pmf[x] * pm[a] * instance.kernel[x, a, yi]
            if p == 0:
                break
            xs.append(x)
            as_.append(a)
            ys.append(float(instance.outcome_grid[yi]))
            pis.append(pm[a])
            pmfs.append(pm)
        if p > 0:
            out.append((Trajectory(xs, as_, ys, pis, np.array(pmfs)), p))
    return out


def make_policy(kind, rng, nx, na, n):
    if kind == "markov":
        return MarkovTable(rng.dirichlet(np.ones(na), size=nx) * 0.9 + 0.1 / na)
    if kind == "epsilon_greedy":
        return EpsilonGreedyAdaptive(nx, na, p_min=0.1)
    return ClippedSequential(rng.dirichlet(np.ones(na), size=(n, nx)), p_min=0.15)


def make_g(rng, instance):
    na = instance.n_actions
    if na == 2 and rng.random() < 0.5:
        return make_functional("ATE", instance)
    if rng.random() < 0.5:
        return make_functional("TargetPolicy", instance, rng.dirichlet(np.ones(na), size=instance.n_contexts))
    return make_functional("Custom", instance, rng.normal(size=(instance.n_contexts, na)))


def instance_suite(count=24, seed=2024):
    """Randomized small instances cycling through the three policy families."""
    rng = np.random.default_rng(seed)
    kinds = ("markov", "epsilon_greedy", "clipped")
    suite = []
    for k in range(count):
        nx = int(rng.integers(1, 4))
        na = int(rng.integers(2, 4))
        ny = int(rng.integers(2, 4))
        n = 4 if nx * na * ny <= 12 else 3
        inst = random_instance(rng, nx, na, ny, L=1.0)
        if na == 2:
            inst = ProblemInstance(inst.context_pmf, inst.outcome_grid, inst.kernel, actions=(0, 1))
        pol = make_policy(kinds[k % 3], rng, nx, na, n)
        suite.append((inst, pol, make_g(rng, inst), n))
    return suite


@pytest.fixture(scope="session")
def suite():
    return instance_suite()


@pytest.fixture
def small():
    """A fixed 2x2x2 instance with a Markov policy."""
    inst = ProblemInstance(
        context_pmf=[0.4, 0.6],
        outcome_grid=[-1.0, 1.0],
        kernel=[[[0.7, 0.3], [0.2, 0.8]], [[0.5, 0.5], [0.1, 0.9]]],
        actions=(0, 1),
    )
    pol = MarkovTable([[0.3, 0.7], [0.6, 0.4]])
    return inst, pol, make_functional("ATE", inst)
