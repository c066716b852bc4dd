"""Heat-kernel and Green-function estimates for stable processes with supercritical killing.

Closed-form envelopes, Monte Carlo Feynman-Kac estimation and a
deterministic one-dimensional Duhamel oracle, plus a harness that fits
the comparison constants between them.
"""
from .core_model import (ConfigError, Constants, DomainError, KillingPotential, ModelSpec, ScalingFunction,
                         constants_for, load_model, model_from_dict)

__version__ = "0.1.0"

__all__ = ["ConfigError", "Constants", "DomainError", "KillingPotential", "ModelSpec", "ScalingFunction",
           "constants_for", "load_model", "model_from_dict", "__version__"]
