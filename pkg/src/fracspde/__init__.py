"""Pseudo-spectral laboratory for stochastic fractional PDEs with multiplicative noise."""

from .spectral import Grid, SpectralField, sobolev_norm
from .models import ModelSpec, NoiseSpec, coercivity_profile, kappa_threshold, nonlinearity
from .integrators import SimConfig, run_path
from .ensemble import EnsembleConfig, exit_probability_mc, run_ensemble

__version__ = "0.1.0"

__all__ = [
    "Grid",
    "SpectralField",
    "sobolev_norm",
    "ModelSpec",
    "NoiseSpec",
    "coercivity_profile",
    "kappa_threshold",
    "nonlinearity",
    "SimConfig",
    "run_path",
    "EnsembleConfig",
    "run_ensemble",
    "exit_probability_mc",
    "__version__",
]
