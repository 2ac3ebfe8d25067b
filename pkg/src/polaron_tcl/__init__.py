"""Polaron-frame time-convolutionless master equation for exciton networks."""

from .model import (
    KAPPA,
    BathSpec,
    ContinuumTerm,
    FullyCorrelated,
    Independent,
    LorentzianMode,
    PropagatingModes,
    SiteNetwork,
    SpectralDensity,
    fmo4_fast_bath,
    fmo4_preset,
)

__version__ = "0.1.0"

__all__ = [
    "KAPPA",
    "BathSpec",
    "ContinuumTerm",
    "FullyCorrelated",
    "Independent",
    "LorentzianMode",
    "PropagatingModes",
    "SiteNetwork",
    "SpectralDensity",
    "fmo4_fast_bath",
    "fmo4_preset",
]
