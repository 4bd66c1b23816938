"""Dual-fidelity Bayesian optimization with LLM-fidelity predictions.

A Kennedy-O'Hagan joint GP fuses cheap model predictions with expensive
measurements; a discrepancy-dominance gate routes each candidate to the
fidelity that can actually reduce uncertainty there.
"""

from .acquisition import (
    AcquisitionConfig,
    ConstantBeta,
    LogSchedule,
    beta,
    lhs_sample,
    maximize_acquisition,
    select_batch,
    ucb_score,
)
from .engine import (
    DiagnosticsReport,
    IterationRecord,
    LoopConfig,
    Mode,
    compute_diagnostics,
    run_campaign,
    warm_start,
)
from .gp import GpModel, KernelParams, PriorGp, fit, fit_hyperparams, kernel_eval, posterior
from .koh import (
    GateRecord,
    KohSurrogate,
    build_surrogate,
    composite_posterior,
    estimate_rho,
    gating_ratio,
    should_query_real,
)
from .oracle import (
    Biased,
    LlmClientConfig,
    LlmOracle,
    Noisy,
    RandomUniform,
    RealObjectiveOracle,
    Scaled,
    SyntheticLowFidelity,
    build_prompt,
    parse_llm_response,
)
from .space import (
    DesignSpace,
    Dimension,
    FidelityDataset,
    Fidelity,
    Normalizer,
    Observation,
    Origin,
    denormalize_point,
    insert_observation,
    normalize_point,
    paired_values,
)

__version__ = "0.1.0"

__all__ = [
    "AcquisitionConfig",
    "Biased",
    "ConstantBeta",
    "DesignSpace",
    "DiagnosticsReport",
    "Dimension",
    "Fidelity",
    "FidelityDataset",
    "GateRecord",
    "GpModel",
    "IterationRecord",
    "KernelParams",
    "KohSurrogate",
    "LlmClientConfig",
    "LlmOracle",
    "LogSchedule",
    "LoopConfig",
    "Mode",
    "Noisy",
    "Normalizer",
    "Observation",
    "Origin",
    "PriorGp",
    "RandomUniform",
    "RealObjectiveOracle",
    "Scaled",
    "SyntheticLowFidelity",
    "beta",
    "build_prompt",
    "build_surrogate",
    "composite_posterior",
    "compute_diagnostics",
    "denormalize_point",
    "estimate_rho",
    "fit",
    "fit_hyperparams",
    "gating_ratio",
    "insert_observation",
    "kernel_eval",
    "lhs_sample",
    "maximize_acquisition",
    "normalize_point",
    "paired_values",
    "parse_llm_response",
    "posterior",
    "run_campaign",
    "select_batch",
    "should_query_real",
    "ucb_score",
    "warm_start",
]
