"""Discrete VAE with categorical latents, trained by stochastic gradient ascent
on the evidence lower bound, plus an exact enumeration oracle for verification.

All numerics are 64-bit floats on row-major numpy arrays. Randomness flows
through the in-repo SplitMix64 generator (`dvae.distributions.Rng`) so that a
seed fully determines every result, across platforms.
"""

from dvae.model import DiscreteVae, ElboBreakdown
from dvae.trainer import TrainConfig, train, evaluate

__all__ = ["DiscreteVae", "ElboBreakdown", "TrainConfig", "train", "evaluate"]
