"""Nested polar code construction by reinforcement learning."""

from .codec import Construction, encode, polar_transform, scl_decode
from .construction import (NestedSequence, code_from_sequence, dega_construct,
                           dega_reliability)
from .evaluator import Decoder, RewardCache, RewardSpec, estimate_bler, reward

__version__ = "0.1.0"

__all__ = [
    "Construction", "encode", "polar_transform", "scl_decode", "NestedSequence",
    "code_from_sequence", "dega_construct", "dega_reliability", "Decoder", "RewardCache",
    "RewardSpec", "estimate_bler", "reward",
]
