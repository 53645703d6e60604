"""Equilibria of the strategic bidding game."""

from .best_response import BestResponse, GridConfig, apply_best_response, best_response
from .gauss_seidel import best_response_gaps, gauss_seidel_run, profile_distance, tau_schedule
from .potential import PenaltySchedule, penalized_merit, potential_solve
from .profile import (EquilibriumReport, StrategyProfile, TraceEntry, TrackingTerms,
                      equivalence_hypothesis_holds, initial_profile, penalized_objective,
                      potential_value, residual_instance, split_marginal_ladder,
                      tracking_terms, vgne_gap)

__all__ = [
    "BestResponse", "EquilibriumReport", "GridConfig", "PenaltySchedule", "StrategyProfile",
    "TraceEntry", "TrackingTerms", "apply_best_response", "best_response",
    "best_response_gaps", "equivalence_hypothesis_holds", "gauss_seidel_run",
    "initial_profile", "penalized_merit", "penalized_objective", "potential_solve",
    "potential_value", "profile_distance", "residual_instance", "split_marginal_ladder",
    "tau_schedule", "tracking_terms", "vgne_gap",
]
