"""Minimal dense numeric core: tape-based reverse-mode autodiff over a
fixed primitive set, labeled counter-based RNG streams, and an adaptive
first/second-moment optimizer."""

from .rng import RngHub
from .tape import Tape, Tensor
from .optim import Adam

__all__ = ["RngHub", "Tape", "Tensor", "Adam"]
