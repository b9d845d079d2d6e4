"""Decentralized selfish controller synthesis for heterogeneous agent ensembles."""

__version__ = "0.1.0"

from .config import (
    DominanceProfile,
    ExperimentConfig,
    GridSettings,
    SynthesisSettings,
    load_config,
)
from .lti import FirMatrix, StateSpaceSystem
from .norms import CostReport, FrequencyGrid, hinf_norm, h2_norm_scaled, individual_cost, social_cost
from .youla import GeneralizedPlant, YoulaFactors, build_agent_plant, factorize_agent

__all__ = [
    "__version__",
    "DominanceProfile",
    "ExperimentConfig",
    "GridSettings",
    "SynthesisSettings",
    "load_config",
    "FirMatrix",
    "StateSpaceSystem",
    "CostReport",
    "FrequencyGrid",
    "hinf_norm",
    "h2_norm_scaled",
    "individual_cost",
    "social_cost",
    "GeneralizedPlant",
    "YoulaFactors",
    "build_agent_plant",
    "factorize_agent",
]
