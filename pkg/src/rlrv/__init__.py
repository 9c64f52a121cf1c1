"""Runtime verification monitors for the learning phase of tabular RL agents."""

from .estimation import (EstimatedModel, InstrumentationFault, MissingDataError, NotApplicable, Trace,
                         TransitionRecord, ValueUncertainty, estimate_bias_cov, estimate_value)
from .mdp import Mdp, PolicyTable, policy_iteration, value_of_policy
from .optimality import SplitConfig, check_optimality, optimality_bounds
from .quality import QualityThresholds, check_quality
from .timeliness import Scenario, TimelinessInputs, check_timeliness, compute_m_t, compute_m_u
from .verdict import Status, Verdict

__all__ = [
    "EstimatedModel", "InstrumentationFault", "MissingDataError", "NotApplicable", "Trace",
    "TransitionRecord", "ValueUncertainty", "estimate_bias_cov", "estimate_value",
    "Mdp", "PolicyTable", "policy_iteration", "value_of_policy",
    "SplitConfig", "check_optimality", "optimality_bounds",
    "QualityThresholds", "check_quality",
    "Scenario", "TimelinessInputs", "check_timeliness", "compute_m_t", "compute_m_u",
    "Status", "Verdict",
]
