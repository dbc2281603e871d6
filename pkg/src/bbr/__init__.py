"""Inconclusive-aware analysis of forensic black box studies."""

__version__ = "0.1.0"

from .error_rates import (  # noqa: E402
    ContingencyTable,
    RateOption,
    RateSet,
    build_contingency,
    failure_rate,
    failure_rate_from_counts,
    rates,
    summarize_conclusive,
)
from .latent_model import (  # noqa: E402
    ModelConfig,
    Parameters,
    log_likelihood,
    log_prior,
    prob_conclusive,
    simulate_responses,
    skew_normal_logpdf,
    skew_normal_moments,
)
from .posterior_analysis import (  # noqa: E402
    RatioBasis,
    adjusted_failure_rates,
    model_ratio,
    predictive_ratio_interval,
)
from .sampler import PosteriorDraws, SamplerConfig, diagnostics, fit, summarize  # noqa: E402
from .study_data import (  # noqa: E402
    AnalysisPolicy,
    Conclusion,
    GroundTruth,
    StudyDataset,
    apply_policy,
    deduplicate_first_response,
    group_examiners,
    ingest_csv,
    load_mapping,
)
from .variance_decomp import decompose, decompose_by_group, variance_ratio  # noqa: E402

__all__ = [
    "AnalysisPolicy",
    "Conclusion",
    "ContingencyTable",
    "GroundTruth",
    "ModelConfig",
    "Parameters",
    "PosteriorDraws",
    "RateOption",
    "RateSet",
    "RatioBasis",
    "SamplerConfig",
    "StudyDataset",
    "adjusted_failure_rates",
    "apply_policy",
    "build_contingency",
    "decompose",
    "decompose_by_group",
    "deduplicate_first_response",
    "diagnostics",
    "failure_rate",
    "failure_rate_from_counts",
    "fit",
    "group_examiners",
    "ingest_csv",
    "load_mapping",
    "log_likelihood",
    "log_prior",
    "model_ratio",
    "predictive_ratio_interval",
    "prob_conclusive",
    "rates",
    "simulate_responses",
    "skew_normal_logpdf",
    "skew_normal_moments",
    "summarize",
    "summarize_conclusive",
    "variance_ratio",
]
