"""Mixed Hawkes processes for binned event counts with missing intervals."""
__version__ = "0.1.0"

from .diagnostics import (
    FitMetrics,
    SummaryRow,
    fit_metrics,
    hpd_interval,
    posterior_predictive,
    rhat,
    summarize,
)
from .gibbs import FitConfig, PosteriorDraws, run_chain, run_fit
from .io import ingest
from .model import (
    Dataset,
    LatentState,
    ModelParams,
    ModelStructure,
    Priors,
    SubjectData,
    branching_ratio,
    conditional_intensity,
    expected_cluster_size,
    loglik_branching,
    loglik_conditional,
    total_compensator,
)
from .simulate import SimConfig, TrackingConfig, simulate_events, simulate_study, study_scenario

__all__ = [
    "Dataset", "FitConfig", "FitMetrics", "LatentState", "ModelParams", "ModelStructure",
    "PosteriorDraws", "Priors", "SimConfig", "SubjectData", "SummaryRow", "TrackingConfig",
    "branching_ratio", "conditional_intensity", "expected_cluster_size", "fit_metrics",
    "hpd_interval", "ingest", "loglik_branching", "loglik_conditional",
    "posterior_predictive", "rhat", "run_chain", "run_fit", "simulate_events",
    "simulate_study", "study_scenario", "summarize", "total_compensator",
]
