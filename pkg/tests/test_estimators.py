from __future__ import annotations

import json

import numpy as np
import pytest

from aipwlab.estimators import (AuxiliaryCollection, EstimateReport, aipw_estimate, aipw_score, aipw_scores_paths,
                                oracle_estimate, oracle_paths, oracle_terms, perturbed_ipw_estimate,
                                perturbed_ipw_paths)
from aipwlab.exactmath import (conditional_expectation, context_variance, enumerate_trajectories, exact_moments,
                               v_star_sq, weighted_l2_norm_sq)
from aipwlab.instance import ProblemInstance, Trajectory, context_values, make_functional, off_policy_value, \
    sample_trajectory
from aipwlab.learners import FrozenLearner, LearnerSpec, OGDTabular, TabularBox
from aipwlab.policies import MarkovTable


def _collections(inst, g, n, rng):
    return {
        "zero": AuxiliaryCollection.zero(n, inst.n_contexts, inst.n_actions),
        "random_orthogonal": AuxiliaryCollection.random_orthogonal(rng, n, inst.n_contexts, inst.n_actions),
        "optimal": AuxiliaryCollection.optimal(inst, g),
    }


class TestPerturbedIPW:
    def test_plain_ipw_single_round(self):
        inst = ProblemInstance([1.0], [0.3], np.ones((1, 2, 1)))
        traj = Trajectory([0], [1], [0.3], [0.5], [[0.5, 0.5]])
        f = AuxiliaryCollection.zero(1, 1, 2)
        assert perturbed_ipw_estimate(traj, np.ones((1, 2)), f) == pytest.approx(0.6, abs=1e-15)

    def test_unbiased_for_every_collection(self, suite):
        rng = np.random.default_rng(0)
        for inst, pol, g, n in suite:
            dist = enumerate_trajectories(inst, pol, g, n)
            tau = off_policy_value(inst, g)
            for name, f in _collections(inst, g, n, rng).items():
                m = exact_moments(dist, perturbed_ipw_paths(dist, g, f))
                assert abs(m.mean - tau) <= 1e-10, name

    def test_orthogonality_of_collections(self, suite):
        rng = np.random.default_rng(1)
        inst, pol, g, n = suite[1]
        dist = enumerate_trajectories(inst, pol, g, n)
        for f in _collections(inst, g, n, rng).values():
            assert f.orthogonality_residual(dist) <= 1e-10

    def test_variance_decomposition(self, suite):
        rng = np.random.default_rng(2)
        for inst, pol, g, n in suite:
            dist = enumerate_trajectories(inst, pol, g, n)
            gt = g.table
            cv = context_values(inst, g)
            for f in _collections(inst, g, n, rng).values():
                lhs = n * exact_moments(dist, perturbed_ipw_paths(dist, g, f)).variance
                fv = f.values(dist)
                f_taken = np.take_along_axis(fv, dist.A[..., None], axis=2)[..., 0]
                resid = gt[dist.X, dist.A] * inst.mu_star[dist.X, dist.A] / dist.PI - cv[dist.X] - f_taken
                third = float(np.sum(dist.weight * np.mean(resid ** 2, axis=1)))
                rhs = context_variance(inst, g) + weighted_l2_norm_sq(dist, g, np.sqrt(inst.sigma_sq), n) + third
                assert lhs == pytest.approx(rhs, abs=1e-9)

    def test_short_table_rejected(self, small):
        inst, pol, g = small
        traj = sample_trajectory(inst, pol, 3, seed=0)
        with pytest.raises(ValueError):
            perturbed_ipw_estimate(traj, g, AuxiliaryCollection.zero(2, 2, 2))


class TestOracle:
    def test_noise_free_flat_instance_is_exact(self):
        ker = np.zeros((2, 2, 2))
        ker[:, 0, 0] = 1.0
        ker[:, 1, 1] = 1.0
        inst = ProblemInstance([0.3, 0.7], [0.0, 1.0], ker, actions=(0, 1))
        g = make_functional("ATE", inst)
        pol = MarkovTable([[0.4, 0.6], [0.7, 0.3]])
        for seed in range(5):
            traj = sample_trajectory(inst, pol, 6, seed=seed)
            assert oracle_estimate(traj, g, inst) == pytest.approx(1.0, abs=1e-14)

    def test_variance_is_v_star_over_n(self, suite):
        for inst, pol, g, n in suite:
            dist = enumerate_trajectories(inst, pol, g, n)
            m = exact_moments(dist, oracle_paths(dist, g, inst))
            assert m.variance == pytest.approx(v_star_sq(dist, inst, g, n) / n, abs=1e-10)

    def test_equals_optimal_perturbation(self, suite):
        inst, pol, g, n = suite[2]
        dist = enumerate_trajectories(inst, pol, g, n)
        np.testing.assert_allclose(oracle_paths(dist, g, inst),
                                   perturbed_ipw_paths(dist, g, AuxiliaryCollection.optimal(inst, g)), atol=1e-12)


class TestScores:
    def test_true_means_and_mean_outcome(self, small):
        inst, _, g = small
        s = aipw_score(1, 0, inst.mu_star[1, 0], 0.6, inst.mu_star, g)
        assert s == pytest.approx(float(g.table[1] @ inst.mu_star[1]), abs=1e-15)

    def test_zero_model_is_ipw_term(self, small):
        _, _, g = small
        assert aipw_score(0, 1, 0.7, 0.25, np.zeros((2, 2)), g) == pytest.approx(2.8, abs=1e-15)

    @pytest.mark.parametrize("learner", ["frozen", "ogd"])
    def test_lemma_identities(self, suite, learner):
        for inst, pol, g, n in suite[:12]:
            dist = enumerate_trajectories(inst, pol, g, n)
            spec = (LearnerSpec("frozen", table=np.full(inst.mu_star.shape, 0.3)) if learner == "frozen"
                    else LearnerSpec("ogd_tabular"))
            preds, _ = spec.run_paths(inst, g, dist, B=5.0)
            S = aipw_scores_paths(dist, g, preds)
            cv = context_values(inst, g)
            gt = g.table
            means = dist.weight @ S
            for i in range(n):
                cond = conditional_expectation(dist, S[:, i], i)
                np.testing.assert_allclose(cond, cv[dist.X[:, i]], atol=1e-10)
                for j in range(i + 1, n):
                    cov = dist.weight @ ((S[:, i] - means[i]) * (S[:, j] - means[j]))
                    assert abs(cov) <= 1e-10
                x, a, pi = dist.X[:, i], dist.A[:, i], dist.PI[:, i]
                var_i = dist.weight @ (S[:, i] - means[i]) ** 2
                base = context_variance(inst, g) + dist.weight @ (gt[x, a] ** 2 * inst.sigma_sq[x, a] / pi ** 2)
                dev = gt[x, a] / pi * (preds[:, i, :][np.arange(dist.N), a] - inst.mu_star[x, a])
                cvar = conditional_expectation(dist, dev ** 2, i) - conditional_expectation(dist, dev, i) ** 2
                assert var_i == pytest.approx(base + dist.weight @ cvar, abs=1e-9)
                assert var_i <= base + dist.weight @ dev ** 2 + 1e-9

    def test_mse_is_average_score_variance(self, suite):
        inst, pol, g, n = suite[4]
        dist = enumerate_trajectories(inst, pol, g, n)
        preds, _ = LearnerSpec("ogd_tabular").run_paths(inst, g, dist, B=5.0)
        S = aipw_scores_paths(dist, g, preds)
        m = exact_moments(dist, S.mean(axis=1))
        var_i = dist.weight @ (S - dist.weight @ S) ** 2
        assert m.mse == pytest.approx(var_i.sum() / n ** 2, abs=1e-10)


class TestAipwEstimate:
    def test_frozen_true_means_is_oracle(self, small):
        inst, pol, g = small
        traj = sample_trajectory(inst, pol, 10, seed=3)
        rep = aipw_estimate(traj, FrozenLearner(inst.mu_star), g)
        assert rep.tau_hat == pytest.approx(oracle_estimate(traj, g, inst), abs=1e-12)

    def test_frozen_zero_is_ipw(self, small):
        inst, pol, g = small
        traj = sample_trajectory(inst, pol, 10, seed=3)
        rep = aipw_estimate(traj, FrozenLearner(np.zeros((2, 2))), g)
        f = AuxiliaryCollection.zero(10, 2, 2)
        assert rep.tau_hat == pytest.approx(perturbed_ipw_estimate(traj, g, f), abs=1e-12)

    def test_tau_is_mean_of_scores(self, small):
        inst, pol, g = small
        traj = sample_trajectory(inst, pol, 13, seed=4)
        rep = aipw_estimate(traj, OGDTabular(2, 2, 1.0, lambda i: 0.05), g, TabularBox(2, 2, 1.0), B=3.3, seed=4)
        assert rep.tau_hat == pytest.approx(float(np.mean(rep.scores)), abs=1e-12)
        assert len(rep.losses) == 13 and rep.regret is not None

    def test_matches_batched_run(self, small):
        inst, pol, g = small
        traj = sample_trajectory(inst, pol, 9, seed=7)
        spec = LearnerSpec("ogd_tabular")
        rep = aipw_estimate(traj, spec.build(inst, 3.3, 9), g)
        preds, _ = spec.run_paths(inst, g, traj.as_paths(), 3.3)
        np.testing.assert_allclose(rep.scores, aipw_scores_paths(traj.as_paths(), g, preds)[0], atol=1e-12)

    def test_zero_functional(self, small):
        inst, pol, _ = small
        traj = sample_trajectory(inst, pol, 5, seed=1)
        rep = aipw_estimate(traj, FrozenLearner(inst.mu_star), np.zeros((2, 2)))
        assert rep.tau_hat == 0.0 and np.all(rep.scores == 0)

    def test_report_keys(self):
        rep = EstimateReport(0.5, np.array([0.25, 0.75]), regret=1.0, B=2.0, n=2, seed=9)
        assert set(json.loads(rep.to_json())) == {"tau_hat", "scores", "regret", "B", "n", "seed"}

    def test_thm1_bound_with_ogd(self, small):
        inst, pol, g = small
        dist = enumerate_trajectories(inst, pol, g, 4)
        preds, _ = LearnerSpec("ogd_tabular").run_paths(inst, g, dist, B=1 / 0.3)
        S = aipw_scores_paths(dist, g, preds)
        mse = exact_moments(dist, S.mean(axis=1)).mse
        err = preds[np.arange(dist.N)[:, None], np.arange(4)[None], dist.A] - inst.mu_star[dist.X, dist.A]
        term = dist.weight @ np.mean((g.table[dist.X, dist.A] * err / dist.PI) ** 2, axis=1)
        assert mse <= (v_star_sq(dist, inst, g, 4) + term) / 4 + 1e-9
