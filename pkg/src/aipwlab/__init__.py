"""Simulation, estimation and certification tools for AIPW off-policy evaluation
on adaptively collected contextual-bandit data."""
from __future__ import annotations

from .estimators import (AuxiliaryCollection, EstimateReport, aipw_estimate, aipw_score, oracle_estimate,
                         perturbed_ipw_estimate)
from .exactmath import (TrajectoryDistribution, divergence, enumerate_trajectories, exact_moments,
                        tv_conditioning_gap, v_star_sq, weighted_l2_norm_sq)
from .harness import ExperimentConfig, ExperimentReport, mc_mse, run_experiment
from .instance import (EvaluationFunctional, ProblemInstance, Trajectory, make_functional, off_policy_value,
                       overlap_constant, sample_trajectory)
from .policies import BehaviorPolicy, ClippedSequential, EpsilonGreedyAdaptive, MarkovTable

__version__ = "0.1.0"

__all__ = [
    "AuxiliaryCollection", "BehaviorPolicy", "ClippedSequential", "EpsilonGreedyAdaptive", "EstimateReport",
    "EvaluationFunctional", "ExperimentConfig", "ExperimentReport", "MarkovTable", "ProblemInstance",
    "Trajectory", "TrajectoryDistribution", "aipw_estimate", "aipw_score", "divergence",
    "enumerate_trajectories", "exact_moments", "make_functional", "mc_mse", "off_policy_value",
    "oracle_estimate", "overlap_constant", "perturbed_ipw_estimate", "run_experiment", "sample_trajectory",
    "tv_conditioning_gap", "v_star_sq", "weighted_l2_norm_sq",
]
