"""DE/GA baseline construction and nested-sequence operations."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

from .codec import Construction, _check_pow2

# Two-segment approximation of the Gaussian-approximation phi function.
_PHI_BREAK = 10.0
_A, _B, _C = -0.4527, 0.86, 0.0218


def log_phi(x: float) -> float:
    """log of phi(x), the mean-to-error map of a symmetric Gaussian LLR."""
    if x <= 0:
        return 0.0
    if x < _PHI_BREAK:
        return _A * x**_B + _C
    return 0.5 * math.log(math.pi / x) - x / 4.0 + math.log1p(-10.0 / (7.0 * x))


def phi(x: float) -> float:
    return math.exp(log_phi(x))


def inv_log_phi(log_y: float) -> float:
    """Inverse of :func:`log_phi` for ``log_y <= 0``."""
    if log_y >= 0:
        return 0.0
    if log_y >= log_phi(_PHI_BREAK - 1e-12):
        return ((_C - log_y) / -_A) ** (1.0 / _B)
    # phi jumps up slightly at the breakpoint, so anything below the
    # first segment's floor is solved on the second segment.
    hi = _PHI_BREAK * 2
    while log_phi(hi) > log_y:
        hi *= 2
    return brentq(lambda x: log_phi(x) - log_y, _PHI_BREAK, hi, xtol=1e-12, rtol=1e-14)


def check_node_mean(m: float) -> float:
    """Mean LLR after a check-node combine of two channels with mean ``m``."""
    lp = log_phi(m)
    # 1 - (1 - phi)^2 = phi (2 - phi), kept in the log domain for large m.
    return inv_log_phi(lp + math.log(2.0 - math.exp(lp)))


@dataclass(frozen=True)
class Reliability:
    values: np.ndarray

    def order(self) -> np.ndarray:
        """Indices from least to most reliable; ties put the lower index first."""
        return np.lexsort((np.arange(self.values.size), self.values))


@lru_cache(maxsize=64)
def _dega_tuple(n_bits: int, design_snr_db: float) -> tuple:
    n = _check_pow2(n_bits)
    sigma2 = 10.0 ** (-design_snr_db / 10.0) / 2.0
    z = np.array([2.0 / sigma2])
    for _ in range(n):
        worse = np.array([check_node_mean(m) for m in z])
        z = np.stack([worse, 2.0 * z], axis=1).ravel()
    return tuple(z.tolist())


def dega_reliability(n_bits: int, design_snr_db: float) -> Reliability:
    """Per-subchannel mean LLR under the Gaussian approximation.

    Index ``i`` is read MSB first: a 0 bit is a check-node (worse) step and
    a 1 bit a variable-node (better) step, matching natural-order encoding.
    """
    return Reliability(np.array(_dega_tuple(int(n_bits), float(design_snr_db))))


def dega_construct(n_bits: int, k: int, design_snr_db: float) -> Construction:
    if not 0 <= k <= n_bits:
        raise ValueError(f"K={k} outside [0, {n_bits}]")
    order = dega_reliability(n_bits, design_snr_db).order()
    mask = np.zeros(n_bits, dtype=np.uint8)
    mask[order[: n_bits - k]] = 1
    return Construction(mask)


@dataclass(frozen=True)
class NestedSequence:
    """All subchannels in freezing order: ``order[0]`` is frozen first."""

    order: tuple

    def __post_init__(self):
        order = tuple(int(i) for i in self.order)
        if sorted(order) != list(range(len(order))):
            raise ValueError("sequence is not a permutation of 0..N-1")
        object.__setattr__(self, "order", order)

    @property
    def n_bits(self) -> int:
        return len(self.order)

    def __len__(self):
        return len(self.order)


def extract_subsequence(seq: NestedSequence, n_bits: int) -> NestedSequence:
    """Keep the indices below ``n_bits`` in their original order."""
    if n_bits > seq.n_bits:
        raise ValueError("target length exceeds the sequence length")
    _check_pow2(n_bits)
    return NestedSequence(tuple(i for i in seq.order if i < n_bits))


def code_from_sequence(seq: NestedSequence, k: int) -> Construction:
    """The last ``k`` entries carry information; the rest are frozen."""
    if not 0 <= k <= seq.n_bits:
        raise ValueError(f"K={k} outside [0, {seq.n_bits}]")
    mask = np.zeros(seq.n_bits, dtype=np.uint8)
    mask[list(seq.order[: seq.n_bits - k])] = 1
    return Construction(mask)


def sequence_from_trajectory(actions) -> NestedSequence:
    actions = [int(a) for a in actions]
    if len(set(actions)) != len(actions):
        raise ValueError("duplicate action in trajectory")
    return NestedSequence(tuple(actions))


def sequence_from_reliability(rel: Reliability) -> NestedSequence:
    return NestedSequence(tuple(rel.order().tolist()))


def write_sequence(path, seq: NestedSequence) -> None:
    Path(path).write_text(f"N={seq.n_bits}\n" + " ".join(map(str, seq.order)) + "\n")


def read_sequence(path) -> NestedSequence:
    lines = Path(path).read_text().split("\n")
    if len(lines) < 2 or not lines[0].startswith("N="):
        raise ValueError(f"{path}: first line must be 'N=<int>'")
    n_bits = int(lines[0][2:])
    seq = NestedSequence(tuple(int(t) for t in lines[1].split()))
    if seq.n_bits != n_bits:
        raise ValueError(f"{path}: header says N={n_bits}, found {seq.n_bits} indices")
    return seq


def write_reliability_csv(path, rel: Reliability) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "mean_llr"])
        for i, v in enumerate(rel.values):
            w.writerow([i, repr(float(v))])
