"""Particle MCMC on an extended space: SMC, backward MCMC rejuvenation,
conditional SMC, and the samplers built from them."""

from .backward import ExtendedState, extract_trajectory, run_backward_pass
from .csmc import RetainedTrajectory, run_csmc
from .model import GibbsBlock, ParamBlocks, RandomWalkBlock, StateSpaceModel, log_joint, simulate
from .models import get_model
from .proposals import ProposalSpec
from .samplers import SamplerConfig, run_chain
from .smc import ParticleSystem, run_smc

__version__ = "0.1.0"

__all__ = [
    "ExtendedState",
    "GibbsBlock",
    "ParamBlocks",
    "ParticleSystem",
    "ProposalSpec",
    "RandomWalkBlock",
    "RetainedTrajectory",
    "SamplerConfig",
    "StateSpaceModel",
    "extract_trajectory",
    "get_model",
    "log_joint",
    "run_backward_pass",
    "run_chain",
    "run_csmc",
    "run_smc",
    "simulate",
]
