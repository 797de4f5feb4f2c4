"""Estimation of individual and spillover treatment effects on networks.

Units interfere through the share (or count) of treated neighbors. The
package estimates the joint dose-response surface mu(z, g) by combining
subclassification on the individual propensity score with a generalized
(neighborhood) propensity score, derives main/spillover/total effects,
quantifies the bias of interference-naive estimators analytically, and
ships a simulation engine plus bootstrap inference and a CLI.
"""

from .data import StudyData, admissible_mask, build_study_data, successes_from_exposure
from .errors import (
    ConfigError,
    EstimationError,
    EstimationWarning,
    InferenceError,
    InputError,
    RankDeficientError,
)
from .estimators import (
    DoseResponseSurface,
    EffectReport,
    default_g_grid,
    derive_effects,
    estimate_conditional_main,
    estimate_conditional_spillover,
    estimate_gps_only,
    estimate_naive,
    estimate_subclass_gps,
    report_to_dict,
    surface_to_dict,
    write_dose_response,
    write_json,
)
from .graph import (
    CovariateFrame,
    ExposureSpec,
    Network,
    designated_neighbors,
    exposure,
    exposure_trials,
    load_network,
    neighborhood_covariates,
    read_covariates,
    read_edges,
    read_ranked_friends,
    write_covariates,
    write_edges,
    write_ranked_friends,
)
from .propensity import (
    IndividualPS,
    JointPS,
    NeighborhoodPS,
    SubclassPartition,
    balance_table,
    fit_individual_ps,
    fit_neighborhood_ps,
    joint_ps,
    max_pairwise_std_diff,
    standardized_difference,
    stratified_max_std_diff,
    subclassify,
    write_balance_table,
)

__version__ = "0.1.0"

__all__ = [
    "CovariateFrame",
    "ConfigError",
    "DoseResponseSurface",
    "EffectReport",
    "EstimationError",
    "EstimationWarning",
    "ExposureSpec",
    "IndividualPS",
    "InferenceError",
    "InputError",
    "JointPS",
    "Network",
    "NeighborhoodPS",
    "RankDeficientError",
    "StudyData",
    "SubclassPartition",
    "admissible_mask",
    "balance_table",
    "build_study_data",
    "default_g_grid",
    "derive_effects",
    "designated_neighbors",
    "estimate_conditional_main",
    "estimate_conditional_spillover",
    "estimate_gps_only",
    "estimate_naive",
    "estimate_subclass_gps",
    "exposure",
    "exposure_trials",
    "fit_individual_ps",
    "fit_neighborhood_ps",
    "joint_ps",
    "load_network",
    "max_pairwise_std_diff",
    "neighborhood_covariates",
    "read_covariates",
    "read_edges",
    "read_ranked_friends",
    "report_to_dict",
    "standardized_difference",
    "stratified_max_std_diff",
    "subclassify",
    "successes_from_exposure",
    "surface_to_dict",
    "write_balance_table",
    "write_covariates",
    "write_dose_response",
    "write_edges",
    "write_json",
    "write_ranked_friends",
]
