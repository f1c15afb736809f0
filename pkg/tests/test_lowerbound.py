from __future__ import annotations

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aipwlab.estimators import AuxiliaryCollection, aipw_scores_paths, oracle_paths, perturbed_ipw_paths
from aipwlab.exactmath import divergence, enumerate_trajectories, exact_moments
from aipwlab.instance import ProblemInstance, make_functional, random_instance, simulate_paths
from aipwlab.learners import LearnerSpec
from aipwlab.lowerbound import (DegenerateFunctionalError, PreconditionError, ReferencePolicySet, centered_h,
                                coverage_constant, floor_constant, lecam_context_certificate,
                                lecam_outcome_certificate, minimal_delta, perturbed_gaussian_instance,
                                reference_policies, sigma_norm_sq, theorem5_floor, tilt_context)
from aipwlab.policies import ClippedSequential, EpsilonGreedyAdaptive, MarkovTable


def two_context_instance():
    """Deterministic outcomes with context values (+1, -1) under ATE."""
    ker = np.zeros((2, 2, 2))
    ker[0, 0, 0] = ker[0, 1, 1] = 1.0
    ker[1, 0, 1] = ker[1, 1, 0] = 1.0
    return ProblemInstance([0.5, 0.5], [0.0, 1.0], ker, actions=(0, 1))


def noisy_instance(seed=0, nx=2):
    rng = np.random.default_rng(seed)
    inst = random_instance(rng, nx, 2, 3)
    return ProblemInstance(inst.context_pmf, inst.outcome_grid, inst.kernel, actions=(0, 1))


class TestCenteredFunctional:
    def test_degenerate(self):
        inst = ProblemInstance([0.5, 0.5], [0.5], np.ones((2, 2, 1)), actions=(0, 1))
        with pytest.raises(DegenerateFunctionalError):
            centered_h(inst, make_functional("ATE", inst))

    def test_two_equiprobable_contexts(self):
        inst = two_context_instance()
        cf = centered_h(inst, make_functional("ATE", inst))
        np.testing.assert_allclose(cf.h, [1.0, -1.0])
        assert cf.l2_norm == pytest.approx(1.0) and cf.moment_ratio == pytest.approx(1.0)
        np.testing.assert_array_equal(cf.h_tilde, cf.h)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 10 ** 6), st.integers(2, 6))
    def test_invariants(self, seed, nx):
        rng = np.random.default_rng(seed)
        inst = random_instance(rng, nx, 2, 3)
        xi = rng.dirichlet(np.full(nx, 0.3))
        xi = np.maximum(xi, 1e-3)
        inst = inst.with_context_pmf(xi / xi.sum())
        g = rng.normal(size=(nx, 2))
        try:
            cf = centered_h(inst, g)
        except DegenerateFunctionalError:
            return
        assert abs(inst.context_pmf @ cf.h) <= 1e-12 * max(1.0, np.abs(cf.h).max())
        assert cf.moment_ratio >= 1 - 1e-12
        assert np.all(np.abs(cf.h_tilde) <= np.abs(cf.h) + 1e-15)
        assert np.all(np.abs(cf.h_tilde) <= 2 * cf.moment_ratio * cf.l2_norm + 1e-15)
        assert np.all(np.sign(cf.h_tilde) == np.sign(cf.h))


class TestTilt:
    def test_identity_cases(self):
        xi = np.array([0.2, 0.3, 0.5])
        np.testing.assert_allclose(tilt_context(xi, [1.0, -2.0, 0.5], 0.0), xi, atol=1e-15)
        np.testing.assert_allclose(tilt_context(xi, np.zeros(3), 4.0), xi, atol=1e-15)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10 ** 6), st.sampled_from([64, 256, 1000]))
    def test_kl_small_at_prescribed_scale(self, seed, n):
        rng = np.random.default_rng(seed)
        inst = noisy_instance(seed % 1000, nx=3)
        g = rng.normal(size=(3, 2))
        cf = centered_h(inst, g)
        if n < cf.min_horizon:
            return
        s = 1 / (4 * cf.l2_norm * math.sqrt(n))
        xi_s = tilt_context(inst.context_pmf, cf.h_tilde, s)
        assert abs(xi_s.sum() - 1) <= 1e-12
        assert divergence("KL", xi_s, inst.context_pmf) <= 1 / (8 * n) + 1e-12


class TestContextCertificate:
    def test_precondition(self):
        inst = noisy_instance(1)
        g = make_functional("ATE", inst)
        with pytest.raises(PreconditionError):
            lecam_context_certificate(inst, MarkovTable([[0.5, 0.5]] * 2), g, 0)

    @pytest.mark.parametrize("n", [64, 256])
    def test_two_contexts(self, n):
        inst = two_context_instance()
        cert = lecam_context_certificate(inst, MarkovTable([[0.5, 0.5]] * 2), make_functional("ATE", inst), n)
        assert all(cert.checks.values()), cert.checks
        assert cert.gap >= 1 / (24 * math.sqrt(n))
        assert cert.certified <= 0.25 * cert.gap ** 2
        d = json.loads(cert.to_json())
        for key in ("s", "kl", "gap", "certified", "lemma_bound", "tv_bound"):
            assert key in d

    def test_kl_additivity_matches_product_law(self):
        inst = noisy_instance(2)
        g = make_functional("ATE", inst)
        cert = lecam_context_certificate(inst, MarkovTable([[0.5, 0.5]] * 2), g, 64)
        pol = EpsilonGreedyAdaptive(2, 2, 0.1)
        base = enumerate_trajectories(inst, pol, g, 3)
        tilt = enumerate_trajectories(inst.with_context_pmf(np.array(cert.tilted_pmf)), pol, g, 3)
        assert float(np.sum(tilt.prob * (tilt.logp - base.logp))) == pytest.approx(3 * cert.kl, abs=1e-12)


class TestReferencePolicies:
    def test_markov_is_its_own_reference(self, small):
        inst, pol, g = small
        ref = reference_policies(inst, pol, 3, g)
        assert ref.K == 1.0 and ref.stationary

    def test_coverage_scan(self):
        inst = noisy_instance(3)
        pol = EpsilonGreedyAdaptive(2, 2, 0.2)
        ref = reference_policies(inst, pol, 3)
        dist = enumerate_trajectories(inst, pol, None, 3)
        for i in range(3):
            r = ref.table(i)[dist.X[:, i]] / dist.PMF[:, i]
            assert np.all(r <= ref.K * (1 + 1e-12)) and np.all(r >= 1 / ref.K * (1 - 1e-12))
        # the floor-implied constant is never smaller than the exact scan
        assert coverage_constant(ref.tables, inst, pol, 3) >= ref.K

    def test_time_varying_markov(self):
        inst = noisy_instance(4)
        pol = ClippedSequential([[[0.5, 0.5]] * 2, [[0.2, 0.8]] * 2], p_min=0.1)
        ref = reference_policies(inst, pol, 2)
        assert ref.K > 1.0


class TestPerturbedInstance:
    def setup_method(self):
        self.inst = noisy_instance(5)
        self.pol = MarkovTable([[0.4, 0.6], [0.7, 0.3]])
        self.g = make_functional("ATE", self.inst)
        self.dist = enumerate_trajectories(self.inst, self.pol, self.g, 3)
        self.ref = reference_policies(self.inst, self.pol, 3, self.g)

    def test_zero_scale(self):
        out, shift, _ = perturbed_gaussian_instance(self.inst, self.g, self.ref, 3, 1, 0, 0.0)
        np.testing.assert_array_equal(out.gaussian_mean, self.inst.mu_star)
        assert np.all(shift == 0)

    def test_symmetric(self):
        p, _, _ = perturbed_gaussian_instance(self.inst, self.g, self.ref, 3, 1, 0, 0.3)
        m, _, _ = perturbed_gaussian_instance(self.inst, self.g, self.ref, 3, -1, 0, 0.3)
        np.testing.assert_allclose(p.gaussian_mean + m.gaussian_mean, 2 * self.inst.mu_star, atol=1e-15)

    @pytest.mark.parametrize("K", [1.0, 1.7])
    def test_shift_within_neighborhood(self, K):
        ref = ReferencePolicySet(self.ref.tables, K)
        sn = math.sqrt(sigma_norm_sq(self.dist, self.inst, self.g, 3))
        s = 1 / (2 * K * math.sqrt(3) * sn)
        delta = minimal_delta(self.inst, self.g, ref, 3, sn)
        _, shift, ok = perturbed_gaussian_instance(self.inst, self.g, ref, 3, 1, 0, s, delta)
        assert ok
        np.testing.assert_allclose(np.abs(shift) / delta, 1 / (2 * K), rtol=1e-12)
        assert np.all(np.abs(shift) <= delta / (2 * math.sqrt(K)) + 1e-15)


class TestOutcomeCertificate:
    def test_markov_kl_is_half(self, small):
        inst, pol, g = small
        cert = lecam_outcome_certificate(inst, pol, reference_policies(inst, pol, 4, g), g, 4)
        assert cert.K == 1.0
        assert cert.kl == pytest.approx(0.5, abs=1e-12)
        assert all(cert.checks.values()), cert.checks

    def test_noise_free_is_degenerate(self):
        inst = two_context_instance()
        pol = MarkovTable([[0.5, 0.5]] * 2)
        g = make_functional("ATE", inst)
        cert = lecam_outcome_certificate(inst, pol, reference_policies(inst, pol, 2, g), g, 2)
        assert cert.degenerate and cert.certified == 0.0 and cert.lemma_bound == 0.0

    def test_adaptive_checks(self):
        inst = noisy_instance(6)
        pol = EpsilonGreedyAdaptive(2, 2, 0.15)
        g = make_functional("ATE", inst)
        cert = lecam_outcome_certificate(inst, pol, reference_policies(inst, pol, 3, g), g, 3)
        assert cert.K > 1
        assert all(cert.checks.values()), cert.checks

    def test_kl_matches_monte_carlo_log_likelihood_ratio(self, small):
        inst, pol, g = small
        n = 4
        ref = reference_policies(inst, pol, n, g)
        cert = lecam_outcome_certificate(inst, pol, ref, g, n)
        plus, _, _ = perturbed_gaussian_instance(inst, g, ref, n, 1, 0, cert.s)
        minus, _, _ = perturbed_gaussian_instance(inst, g, ref, n, -1, 0, cert.s)
        paths = simulate_paths(plus, pol, n, 40_000, seed=17)
        mp, mm, v = plus.gaussian_mean, minus.gaussian_mean, inst.sigma_sq
        llr = np.sum(((paths.Y - mm[paths.X, paths.A]) ** 2 - (paths.Y - mp[paths.X, paths.A]) ** 2)
                     / (2 * v[paths.X, paths.A]), axis=1)
        assert abs(llr.mean() - cert.kl) <= 3 * llr.std(ddof=1) / math.sqrt(llr.size)


class TestFloor:
    def test_degenerate(self):
        inst = ProblemInstance([0.5, 0.5], [0.5], np.ones((2, 2, 1)), actions=(0, 1))
        pol = MarkovTable([[0.5, 0.5]] * 2)
        g = make_functional("ATE", inst)
        rep = theorem5_floor(inst, pol, reference_policies(inst, pol, 2, g), g, 2)
        assert rep.floor == 0.0 and rep.degenerate

    def test_monotone_in_K(self, small):
        inst, pol, g = small
        ref = reference_policies(inst, pol, 3, g)
        floors = [theorem5_floor(inst, pol, ReferencePolicySet(ref.tables, K), g, 3).floor for K in (1, 1.5, 2, 4)]
        assert all(b <= a for a, b in zip(floors, floors[1:]))
        assert all(floor_constant(b) <= floor_constant(a) for a, b in zip((1, 2, 3), (2, 3, 4)))

    def test_below_exact_mse_of_every_estimator(self, suite):
        for inst, pol, g, n in suite[:12]:
            dist = enumerate_trajectories(inst, pol, g, n)
            rep = theorem5_floor(inst, pol, reference_policies(inst, pol, n, g, dist), g, n, dist)
            preds, _ = LearnerSpec("ogd_tabular").run_paths(inst, g, dist, B=10.0)
            stats = [oracle_paths(dist, g, inst), aipw_scores_paths(dist, g, preds).mean(axis=1),
                     perturbed_ipw_paths(dist, g, AuxiliaryCollection.zero(n, inst.n_contexts, inst.n_actions))]
            for st_ in stats:
                assert rep.floor <= exact_moments(dist, st_).mse + 1e-12
            if rep.implied_floor_valid:
                assert rep.implied_floor <= rep.floor + 1e-15
