"""Spatially coupled sparse regression codes over memoryless channels.

Channel calculus, coupled code design, a GAMP decoder with its state
evolution and decoding-wave analysis, a linear-model extension with
separable priors, and a reproducible Monte Carlo harness.
"""

__version__ = "0.1.0"

from .channels import AWGNChannel, BECChannel, BSCChannel, CustomChannel, channel_from_config, make_channel
from .codec import encode, g_in, gamp_decode, hard_decision, section_error_rate
from .design import SparcParams, build_base_matrix, effective_rate, sample_design_matrix, seed_sections
from .estimators import CoupledGampRegressor, SparcCodec
from .exceptions import (
    DivergenceError,
    ExperimentError,
    NumericalError,
    ParameterError,
    ResourceError,
    ScSparcError,
    UndecodableError,
)
from .numerics import RngStream, gauss_expect, gauss_hermite, mc_expect
from .state_evolution import regime_classify, run_se

__all__ = [
    "__version__",
    "AWGNChannel",
    "BECChannel",
    "BSCChannel",
    "CustomChannel",
    "channel_from_config",
    "make_channel",
    "encode",
    "g_in",
    "gamp_decode",
    "hard_decision",
    "section_error_rate",
    "SparcParams",
    "build_base_matrix",
    "effective_rate",
    "sample_design_matrix",
    "seed_sections",
    "SparcCodec",
    "CoupledGampRegressor",
    "ScSparcError",
    "ParameterError",
    "NumericalError",
    "DivergenceError",
    "UndecodableError",
    "ResourceError",
    "ExperimentError",
    "RngStream",
    "gauss_expect",
    "gauss_hermite",
    "mc_expect",
    "regime_classify",
    "run_se",
]
