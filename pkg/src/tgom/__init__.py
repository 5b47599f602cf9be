"""Trajectory grade of membership models for longitudinal binary panels."""

__version__ = "0.1.0"

from .analysis import (
    age_quantile,
    cohort_xi_table,
    detect_label_switching,
    onset_age_table,
    profile_summary,
    relabel_profiles,
    trajectory_curve_table,
)
from .chain import PosteriorChain, read_chain, write_chain
from .config import CVSettings, FitConfig, load_config
from .data import GeneratorSpec, assign_cohorts, from_days, generate_dataset, parse_panel, to_days, write_panel
from .model import (
    CohortDirichletParams,
    CohortPartition,
    DirichletParams,
    PanelDataset,
    Priors,
    TrajectoryParams,
    brute_force_marginal,
    individual_log_likelihood,
)
from .prediction import baseline_independent_logistic, cross_validate, kfold_split, phi_quantities
from .sampler import SamplerConfig, run_chain

__all__ = [
    "age_quantile", "assign_cohorts", "baseline_independent_logistic", "brute_force_marginal",
    "CohortDirichletParams", "CohortPartition", "cohort_xi_table", "cross_validate", "CVSettings",
    "detect_label_switching", "DirichletParams", "FitConfig", "from_days", "generate_dataset", "GeneratorSpec", "individual_log_likelihood",
    "kfold_split", "load_config", "onset_age_table", "PanelDataset", "parse_panel", "phi_quantities", "PosteriorChain",
    "Priors", "profile_summary", "read_chain", "relabel_profiles", "run_chain", "SamplerConfig",
    "to_days", "TrajectoryParams", "trajectory_curve_table", "write_chain", "write_panel",
]
