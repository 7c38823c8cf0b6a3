"""proxsaf: sparse-aware proportionate subband adaptive filtering.

Subband adaptive filters built from a proportionate forward step and a
soft-thresholding proximal step, together with the statistical model of
their transient and steady-state behavior and a Monte-Carlo experiment
harness.  The per-frame update loop runs through a compiled extension
when available (see :func:`backend_name`).
"""

from ._backend import backend_name
from .adaptive import (
    DivergenceError,
    FilterState,
    IdentityRule,
    PnlmsRule,
    SimplifiedRule,
    iterate,
)
from .filterbank import (
    AnalysisBank,
    NeedMoreInput,
    PrototypeFilter,
    SubbandFrame,
    SubbandPipeline,
    SubbandStatistics,
    design_prototype,
    estimate_subband_statistics,
    modulate_cosine,
)
from .experiments import (
    AlgorithmConfig,
    ChannelModel,
    ChannelSpec,
    ExperimentConfig,
    InputSpec,
    MetricSeries,
    algorithm_config,
    gen_type1_channel,
    monte_carlo,
    run_trial,
)
from .theory import (
    StabilityError,
    TheoryState,
    run_transient,
    stability_bounds,
    steady_state_msd,
    transient_step,
)

__version__ = "0.1.0"

__all__ = [
    "AnalysisBank",
    "AlgorithmConfig",
    "ChannelModel",
    "ChannelSpec",
    "DivergenceError",
    "ExperimentConfig",
    "FilterState",
    "IdentityRule",
    "InputSpec",
    "MetricSeries",
    "NeedMoreInput",
    "PnlmsRule",
    "PrototypeFilter",
    "SimplifiedRule",
    "StabilityError",
    "SubbandFrame",
    "SubbandPipeline",
    "SubbandStatistics",
    "TheoryState",
    "algorithm_config",
    "backend_name",
    "design_prototype",
    "estimate_subband_statistics",
    "gen_type1_channel",
    "iterate",
    "modulate_cosine",
    "monte_carlo",
    "run_trial",
    "run_transient",
    "stability_bounds",
    "steady_state_msd",
    "transient_step",
    "__version__",
]
