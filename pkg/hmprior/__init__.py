"""
Prior elicitation by history matching.

Hyperparameters of a prior are chosen so that hypothetical data summaries
supplied by an expert are plausible (or implausible) under the prior
predictive distribution.
"""
__version__ = "0.1.0"

from hmprior.core import (ConstraintSet, HyperBox, HyperPoint, ImplausibilityResult, Kind,
                          PValueEstimate, SummaryConstraint, SummaryVector, implausibility, satisfies)
from hmprior.engine import (MatchReport, WaveConfig, grid_pvalue_map, run_history_match,
                            validate_lambda)
from hmprior.models import build_model
from hmprior.simbank import SimulationBank, augment_bank, build_bank

__all__ = [
    "ConstraintSet", "HyperBox", "HyperPoint", "ImplausibilityResult", "Kind", "MatchReport",
    "PValueEstimate", "SimulationBank", "SummaryConstraint", "SummaryVector", "WaveConfig",
    "augment_bank", "build_bank", "build_model", "grid_pvalue_map", "implausibility",
    "run_history_match", "satisfies", "validate_lambda",
]
