"""Diffusion plus contagion model for daily event counts.

A non-homogeneous Poisson diffusion process convolved with a self-exciting
negative-binomial contagion process, fitted by data-augmentation MCMC.
"""

__version__ = "0.1.0"

from .basis import BasisSpec, DesignMatrix, build_basis, rw1_penalty
from .distributions import DecayKernel, NegBinomMeanScale
from .model import EventSeries, ModelParams
from .sampler import ChainConfig, PosteriorDraws, run_chain
from .simulate import SimConfig, simulate_branching, simulate_hierarchical

__all__ = [
    "BasisSpec",
    "DesignMatrix",
    "build_basis",
    "rw1_penalty",
    "DecayKernel",
    "NegBinomMeanScale",
    "EventSeries",
    "ModelParams",
    "ChainConfig",
    "PosteriorDraws",
    "run_chain",
    "SimConfig",
    "simulate_branching",
    "simulate_hierarchical",
]
