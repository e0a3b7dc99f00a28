"""BPSK over AWGN with reproducible, splittable random streams."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ChannelSpec:
    esn0_db: float
    seed: int = 0

    def __post_init__(self):
        if not math.isfinite(self.esn0_db):
            raise ValueError("esn0_db must be finite")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in 64 unsigned bits")

    @property
    def sigma2(self) -> float:
        """Noise variance per real dimension for unit symbol energy."""
        return noise_variance(self.esn0_db)


def noise_variance(esn0_db: float) -> float:
    return 10.0 ** (-esn0_db / 10.0) / 2.0


def stream_id(*parts) -> int:
    """Stable 64-bit id for an arbitrary tuple of ints, strings and bytes."""
    h = hashlib.blake2b(digest_size=8)
    for part in parts:
        if isinstance(part, np.ndarray):
            part = part.tobytes()
        elif isinstance(part, str):
            part = part.encode()
        elif isinstance(part, (int, np.integer)):
            part = int(part).to_bytes(16, "little", signed=True)
        h.update(len(part).to_bytes(4, "little"))
        h.update(part)
    return int.from_bytes(h.digest(), "little")


def rng_stream(seed: int, *ids: int) -> np.random.Generator:
    """Philox generator for substream ``ids`` of ``seed``.

    Philox is counter based, and distinct spawn keys give statistically
    independent streams, so workers can draw from their own substreams.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(i) for i in ids))
    return np.random.Generator(np.random.Philox(ss))


def bpsk_awgn_llr(codeword, spec: ChannelSpec, rng: np.random.Generator) -> np.ndarray:
    """Send bits as symbols ``1 - 2b`` through AWGN and return channel LLRs.

    Works on a single word or a batch along the leading axes.
    """
    x = np.asarray(codeword)
    if x.shape[-1] < 1:
        raise ValueError("empty codeword")
    sigma2 = spec.sigma2
    y = 1.0 - 2.0 * x + math.sqrt(sigma2) * rng.standard_normal(x.shape)
    return 2.0 * y / sigma2
