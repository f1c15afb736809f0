"""Two-point lower-bound constructions and their certificates.

Two perturbations of the base instance are certified:

* a tilt of the context pmf along a truncated centered functional, and
* a Gaussian shift of the outcome means proportional to ``g sigma^2 / pi_ref``.

Each certificate reports every intermediate quantity so the chain of
inequalities can be audited from the JSON alone.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .exactmath import (context_variance, divergence, enumerate_trajectories, round_marginals,
                        weighted_l2_norm_sq)
from .instance import Paths, ProblemInstance, as_table, context_values, off_policy_value

SLACK = 1e-12
LEMMA_CONTEXT_CONST = (1.0 - 1.0 / math.sqrt(2.0)) / 2304.0


class DegenerateFunctionalError(ValueError):
    """The centered functional has zero variance."""


class PreconditionError(ValueError):
    """Horizon too short for the context construction."""


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=float)


@dataclass
class CenteredFunctional:
    h: np.ndarray
    l2_norm: float
    moment_ratio: float
    h_tilde: np.ndarray
    context_pmf: np.ndarray

    @property
    def min_horizon(self) -> float:
        return 16.0 * self.moment_ratio ** 2


def centered_h(instance: ProblemInstance, g) -> CenteredFunctional:
    """Centered context value, its moment ratio and the truncated version."""
    xi = instance.context_pmf
    h = context_values(instance, g) - off_policy_value(instance, g)
    m2 = float(xi @ h ** 2)
    if m2 <= 1e-24:
        raise DegenerateFunctionalError("context value is constant; moment ratio undefined")
    norm = math.sqrt(m2)
    ratio = math.sqrt(float(xi @ h ** 4)) / m2
    h_tilde = np.where(np.abs(h) <= 2.0 * ratio * norm, h, np.sign(h) * norm)
    return CenteredFunctional(h, norm, ratio, h_tilde, xi)


def tilt_context(xi_star, h_tilde, s: float) -> np.ndarray:
    """``xi* exp(s h~) / Z(s)``."""
    if s < 0:
        raise ValueError("tilt must be nonnegative")
    xi = np.asarray(xi_star, dtype=float)
    e = s * np.asarray(h_tilde, dtype=float)
    w = xi * np.exp(e - np.max(e[xi > 0]) if np.any(xi > 0) else e)
    return w / w.sum()


@dataclass
class ContextCertificate:
    n: int
    s: float
    l2_norm: float
    moment_ratio: float
    min_horizon: float
    s_times_sup_h_tilde: float
    kl: float
    chi2: float
    chi2_bound: float
    kl_neighborhood_ok: bool
    tv_bound: float
    gap: float
    gap_bound: float
    certified: float
    lemma_bound: float
    tilted_pmf: list = field(default_factory=list)

    @property
    def checks(self) -> dict:
        return {
            "tilt_sup": self.s_times_sup_h_tilde <= 0.125 + SLACK,
            "kl_le_chi2": self.kl <= self.chi2 + SLACK,
            "chi2_bound": self.chi2 <= self.chi2_bound + SLACK,
            "kl_le_1_over_8n": self.kl <= 1.0 / (8.0 * self.n) + SLACK,
            "neighborhood": self.kl_neighborhood_ok,
            "gap": self.gap >= self.gap_bound - SLACK,
            "certified_ge_lemma": self.certified >= self.lemma_bound - SLACK,
            "certified_le_quarter_gap_sq": self.certified <= 0.25 * self.gap ** 2 + SLACK,
        }

    def to_dict(self) -> dict:
        d = asdict(self)
        d["checks"] = self.checks
        return d

    def to_json(self) -> str:
        return _json(self.to_dict())


def lecam_context_certificate(instance: ProblemInstance, policy, g, n: int) -> ContextCertificate:
    """Certificate for the tilted-context two-point pair at ``s = 1/(4 ||h|| sqrt(n))``.

    The product-law KL equals ``n KL(xi_s || xi*)`` under any behavior policy,
    so the total-variation bound is Pinsker's ``sqrt(n KL / 2)``.
    """
    cf = centered_h(instance, g)
    if n < cf.min_horizon:
        raise PreconditionError(f"n = {n} < 16 H^2 = {cf.min_horizon}")
    s = 1.0 / (4.0 * cf.l2_norm * math.sqrt(n))
    xi_s = tilt_context(instance.context_pmf, cf.h_tilde, s)
    kl = divergence("KL", xi_s, instance.context_pmf)
    chi2 = divergence("chi2", xi_s, instance.context_pmf)
    tv = min(1.0, math.sqrt(n * kl / 2.0))
    gap = off_policy_value(instance.with_context_pmf(xi_s), g) - off_policy_value(instance, g)
    return ContextCertificate(
        n=n,
        s=s,
        l2_norm=cf.l2_norm,
        moment_ratio=cf.moment_ratio,
        min_horizon=cf.min_horizon,
        s_times_sup_h_tilde=s * float(np.max(np.abs(cf.h_tilde))),
        kl=kl,
        chi2=chi2,
        chi2_bound=2.0 * s * s * cf.l2_norm ** 2,
        kl_neighborhood_ok=kl <= 1.0 / n + SLACK,
        tv_bound=tv,
        gap=gap,
        gap_bound=cf.l2_norm / (24.0 * math.sqrt(n)),
        certified=0.25 * (1.0 - tv) * gap ** 2,
        lemma_bound=LEMMA_CONTEXT_CONST * context_variance(instance, g) / n,
        tilted_pmf=xi_s.tolist(),
    )


# --------------------------------------------------------------------------
# reference policies and the Gaussian outcome construction


@dataclass
class ReferencePolicySet:
    """History-free reference pmfs (one per round, or one shared) and ``K``."""

    tables: np.ndarray
    K: float

    def table(self, i: int) -> np.ndarray:
        return self.tables[min(i, len(self.tables) - 1)]

    @property
    def stationary(self) -> bool:
        return len(self.tables) == 1 or bool(np.all(self.tables == self.tables[0]))


def _base_law(instance, policy, g, n, dist):
    return dist if dist is not None else enumerate_trajectories(instance, policy, g, n)


def coverage_constant(tables: np.ndarray, instance: ProblemInstance, policy, n: int,
                      dist: Optional[Paths] = None) -> float:
    """Smallest ``K`` with ``1/K <= pi_ref / pi <= K`` on every reachable tuple.

    Exact scan for history-free behavior, exact over the enumerated support
    when ``dist`` is given, else the bound implied by the propensity floor.
    """
    tables = np.asarray(tables, dtype=float)
    if tables.ndim == 2:
        tables = tables[None]
    ref = lambda i: tables[min(i, len(tables) - 1)]  # noqa: E731
    reach = instance.context_pmf > 0
    K = 1.0
    if policy.history_independent:
        for i in range(n):
            r = (ref(i) / policy.round_table(i))[reach]
            K = max(K, float(np.max(r)), float(np.max(1.0 / r)))
        return K
    if dist is not None:
        for i in range(n):
            r = ref(i)[dist.X[:, i]] / dist.PMF[:, i]
            K = max(K, float(np.max(r)), float(np.max(1.0 / r)))
        return K
    p_hi = 1.0 - (policy.n_actions - 1) * policy.p_min
    for i in range(n):
        t = ref(i)[reach]
        K = max(K, float(np.max(t / policy.p_min)), float(np.max(p_hi / t)))
    return K


def reference_policies(instance: ProblemInstance, policy, n: int, g=None,
                       dist: Optional[Paths] = None, tables=None) -> ReferencePolicySet:
    """Reference set with its coverage constant.

    Default: the behavior table itself when the behavior is history free and
    time homogeneous (``K = 1``); otherwise the round-averaged conditional
    action pmf ``sum_i P(X_i = x, A_i = a) / sum_i P(X_i = x)``, shared by all
    rounds.
    """
    if tables is None:
        if policy.history_independent and all(
                np.array_equal(policy.round_table(i), policy.round_table(0)) for i in range(n)):
            tables = np.asarray(policy.round_table(0))[None]
        else:
            dist = _base_law(instance, policy, g, n, dist)
            joint = round_marginals(dist).sum(axis=0)
            cx = joint.sum(axis=1, keepdims=True)
            uniform = np.full_like(joint, 1.0 / joint.shape[1])
            tables = np.where(cx > 0, joint / np.where(cx > 0, cx, 1.0), uniform)[None]
    tables = np.asarray(tables, dtype=float)
    if tables.ndim == 2:
        tables = tables[None]
    if np.any(tables <= 0) or np.any(np.abs(tables.sum(axis=2) - 1.0) > 1e-12):
        raise ValueError("reference tables must be strictly positive pmfs")
    need_dist = not policy.history_independent and dist is None
    if need_dist and instance.is_finite:
        dist = _base_law(instance, policy, g, n, dist)
    return ReferencePolicySet(tables, coverage_constant(tables, instance, policy, n, dist))


def sigma_norm_sq(dist: Paths, instance: ProblemInstance, g, n: Optional[int] = None) -> float:
    return weighted_l2_norm_sq(dist, g, np.sqrt(instance.sigma_sq), n)


def outcome_scale(sigma_norm: float, n: int, K: float) -> float:
    """``s = 1 / (2 K sqrt(n) ||sigma||_(n))``."""
    if sigma_norm <= 0:
        raise DegenerateFunctionalError("zero noise norm; outcome construction unavailable")
    return 1.0 / (2.0 * K * math.sqrt(n) * sigma_norm)


def minimal_delta(instance: ProblemInstance, g, ref: ReferencePolicySet, n: int, sigma_norm: float) -> np.ndarray:
    """Smallest admissible sup-norm radius ``max_i |g| sigma^2 / (sqrt(n) pi_ref_i ||sigma||)``."""
    gt = np.abs(as_table(g))
    per = [gt * instance.sigma_sq / (math.sqrt(n) * ref.table(i) * sigma_norm) for i in range(n)]
    return np.max(per, axis=0)


def perturbed_gaussian_instance(instance: ProblemInstance, g, ref: ReferencePolicySet, n: int, z: int,
                                i: int, s: float, delta: Optional[np.ndarray] = None):
    """Gaussian instance with means ``mu* + z s g sigma^2 / pi_ref_i``.

    Returns ``(instance, shift, within_neighborhood)``; the last entry is
    ``None`` when ``delta`` is not supplied.
    """
    if z not in (-1, 1):
        raise ValueError("z must be +1 or -1")
    gt = as_table(g)
    shift = z * s * gt * instance.sigma_sq / ref.table(i)
    inst = ProblemInstance.gaussian(instance.context_pmf, instance.mu_star + shift, instance.sigma_sq,
                                    contexts=instance.contexts, actions=instance.actions)
    ok = None if delta is None else bool(np.all(np.abs(shift) <= delta + SLACK))
    return inst, shift, ok


@dataclass
class OutcomeCertificate:
    n: int
    K: float
    degenerate: bool
    sigma_norm_sq: float
    s: float
    kl: float
    kl_closed_form: float
    kl_upper: float
    tv_bound: float
    gap: float
    gap_closed_form: float
    certified: float
    lemma_bound: float
    per_round_bound_sum: float
    cauchy_schwarz_slack: float
    max_shift_ratio: float
    neighborhood_ok: bool
    stationary_reference: bool
    markov_behavior: bool

    @property
    def checks(self) -> dict:
        if self.degenerate:
            return {"degenerate_zero": self.certified == 0.0 and self.lemma_bound == 0.0}
        return {
            "kl_routes_agree": abs(self.kl - self.kl_closed_form) <= 1e-10,
            "kl_le_half": self.kl <= 0.5 + SLACK,
            "kl_le_upper": self.kl <= self.kl_upper + SLACK,
            "gap_routes_agree": abs(self.gap - self.gap_closed_form) <= 1e-10 * max(1.0, abs(self.gap)),
            "neighborhood": self.neighborhood_ok,
            "certified_ge_lemma": self.certified >= self.lemma_bound - SLACK,
            "cauchy_schwarz_slack": self.cauchy_schwarz_slack >= -SLACK,
        }

    def to_dict(self) -> dict:
        d = asdict(self)
        d["checks"] = self.checks
        return d

    def to_json(self) -> str:
        return _json(self.to_dict())


def lecam_outcome_certificate(instance: ProblemInstance, policy, ref: ReferencePolicySet, g, n: int,
                              dist: Optional[Paths] = None, i: int = 0) -> OutcomeCertificate:
    """Certificate for the Gaussian mean-shift pair built from reference round ``i``.

    The perturbed kernel is used in every round, so the KL is a sum over
    rounds ``j`` of ``(shift+ - shift-)^2 / (2 sigma^2)`` averaged over the
    round-``j`` marginal of ``(x, a)``; this is computed directly and
    compared with the closed form ``2 s^2 sum_j E[g^2 sigma^2 / pi_ref^2]``.
    Round marginals come from the base law, which is exact when the
    behavior does not react to outcomes.
    """
    dist = _base_law(instance, policy, g, n, dist)
    gt = as_table(g)
    sn2 = sigma_norm_sq(dist, instance, g, n)
    markov = bool(policy.history_independent)
    if sn2 <= 0:
        return OutcomeCertificate(n, ref.K, True, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0,
                                  0.0, True, ref.stationary, markov)
    sn = math.sqrt(sn2)
    s = outcome_scale(sn, n, ref.K)
    delta = minimal_delta(instance, g, ref, n, sn)
    plus, shift_p, ok_p = perturbed_gaussian_instance(instance, g, ref, n, +1, i, s, delta)
    minus, shift_m, ok_m = perturbed_gaussian_instance(instance, g, ref, n, -1, i, s, delta)
    marg = round_marginals(dist, n)  # (n, X, A)
    var = instance.sigma_sq
    with np.errstate(divide="ignore", invalid="ignore"):
        cell_kl = np.where(var > 0, (plus.gaussian_mean - minus.gaussian_mean) ** 2 / (2.0 * np.where(var > 0, var, 1.0)), 0.0)
    kl = float(np.sum(marg * cell_kl[None]))
    kl_cf = 2.0 * s * s * float(np.sum(marg * (gt ** 2 * var / ref.table(i) ** 2)[None]))
    tv = min(1.0, math.sqrt(kl / 2.0))
    gap = off_policy_value(plus, g) - off_policy_value(minus, g)
    gap_cf = 2.0 * s * float(instance.context_pmf @ np.sum(gt ** 2 * var / ref.table(i), axis=1))
    # per-round terms E[g^2 sigma^2 / pi_j^2] under the behavior policy
    e = np.array([weighted_l2_norm_sq(_round_view(dist, j), g, np.sqrt(var), 1) for j in range(n)])
    K4 = ref.K ** 4
    per_round_sum = float(np.sum(e ** 2) / (8.0 * K4 * n * n * sn2))
    lemma = sn2 / (8.0 * K4 * n)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(delta > 0, np.abs(shift_p) / np.where(delta > 0, delta, 1.0), 0.0)
    return OutcomeCertificate(
        n=n,
        K=ref.K,
        degenerate=False,
        sigma_norm_sq=sn2,
        s=s,
        kl=kl,
        kl_closed_form=kl_cf,
        kl_upper=2.0 * ref.K ** 2 * s * s * n * sn2,
        tv_bound=tv,
        gap=gap,
        gap_closed_form=gap_cf,
        certified=0.25 * (1.0 - tv) * gap ** 2,
        lemma_bound=lemma,
        per_round_bound_sum=per_round_sum,
        cauchy_schwarz_slack=per_round_sum - lemma,
        max_shift_ratio=float(np.max(ratio)),
        neighborhood_ok=bool(ok_p and ok_m),
        stationary_reference=ref.stationary,
        markov_behavior=markov,
    )


def _round_view(dist: Paths, j: int) -> Paths:
    sl = slice(j, j + 1)
    return Paths(dist.X[:, sl], dist.A[:, sl], dist.Y[:, sl], dist.PI[:, sl], dist.PMF[:, sl], dist.weight)


@dataclass
class FloorReport:
    n: int
    K: float
    floor: float
    degenerate: bool
    context_bound: float
    context_applicable: bool
    outcome_bound: float
    v_star_sq: float
    constant: float
    implied_floor: float
    implied_floor_valid: bool
    estimator_mse: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return _json(self.to_dict())


def floor_constant(K: float) -> float:
    """``min{(1 - 1/sqrt 2)/2304, 1/(8 K^4)} / 2``."""
    return min(LEMMA_CONTEXT_CONST, 1.0 / (8.0 * K ** 4)) / 2.0


def theorem5_floor(instance: ProblemInstance, policy, ref: ReferencePolicySet, g, n: int,
                   dist: Optional[Paths] = None) -> FloorReport:
    """Larger of the two lemma bounds, with the implied constant times ``v*^2 / n``.

    The context bound counts only when ``n >= 16 H^2`` and the centered
    functional is non-degenerate.  The implied floor is valid (at most the
    returned floor) when the context bound is applicable or the context
    variance is zero.
    """
    dist = _base_law(instance, policy, g, n, dist)
    cvar = context_variance(instance, g)
    sn2 = sigma_norm_sq(dist, instance, g, n)
    try:
        cf = centered_h(instance, g)
        applicable = n >= cf.min_horizon
    except DegenerateFunctionalError:
        applicable = False
    ctx = LEMMA_CONTEXT_CONST * cvar / n if applicable else 0.0
    out = sn2 / (8.0 * ref.K ** 4 * n)
    floor = max(ctx, out)
    degenerate = floor <= 0.0
    vs = cvar + sn2
    c = floor_constant(ref.K)
    return FloorReport(n, ref.K, floor, degenerate, ctx, applicable, out, vs, c, c * vs / n,
                       applicable or cvar <= 1e-24)
