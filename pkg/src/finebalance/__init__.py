"""Optimal variable-ratio matching with exact fine balance as one min-cost flow."""

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # pragma: no cover - running from a source tree
    __version__ = "0.1.0"

from .balance import BalanceReport, balance_report, set_structure, smd, tv_distance
from .cohort import (Cohort, CohortError, MatchConfig, build_cohort, discard_quotas, kappa_max,
                     matched_quotas, read_cohort_csv)
from .distances import (fit_propensity, entire_number, entire_numbers, mahalanobis_matrix,
                        robust_mahalanobis_matrix)
from .flow import FlowNetwork, InfeasibleFlow, solve, verify_flow
from .network import (InfeasibleDesign, MatchResult, build_network, check_feasibility,
                      one_shot_match, validate_match)
from .twostep import stratify, two_step_match

__all__ = [
    "BalanceReport", "balance_report", "set_structure", "smd", "tv_distance",
    "Cohort", "CohortError", "MatchConfig", "build_cohort", "discard_quotas", "kappa_max",
    "matched_quotas", "read_cohort_csv",
    "fit_propensity", "entire_number", "entire_numbers", "mahalanobis_matrix",
    "robust_mahalanobis_matrix",
    "FlowNetwork", "InfeasibleFlow", "solve", "verify_flow",
    "InfeasibleDesign", "MatchResult", "build_network", "check_feasibility", "one_shot_match",
    "validate_match", "stratify", "two_step_match",
]
