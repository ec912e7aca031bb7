"""Numeric engine: seeded RNG, autodiff tape, parameter store, optimizer."""

import numpy as np

from .checks import FiniteDiffReport, finite_diff_check
from .params import ParamStore, adam_step, clip_global_norm, glorot_uniform
from .rng import Rng
from .tape import Tape, Var

__all__ = [
    "FiniteDiffReport",
    "finite_diff_check",
    "ParamStore",
    "adam_step",
    "clip_global_norm",
    "glorot_uniform",
    "Rng",
    "Tape",
    "Var",
    "sample_standard_normal",
]


def sample_standard_normal(rng: Rng, shape) -> np.ndarray:
    """I.i.d. standard normal draws on the seeded stream."""
    return rng.normal(shape)
