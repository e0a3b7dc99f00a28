"""Polar transform, encoding and successive-cancellation list decoding.

Natural (non bit-reversed) indexing is used throughout: the codeword is
``x = u F^{(x)n}`` with ``F = [[1, 0], [1, 1]]`` and bit ``u_i`` rides
subchannel ``i``.  Frozen bits are always zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numba
import numpy as np


def _check_pow2(n: int) -> int:
    if n < 1 or n & (n - 1):
        raise ValueError(f"length {n} is not a power of two")
    return n.bit_length() - 1


@dataclass(frozen=True)
class Construction:
    """An (N, K) polar code described by its frozen mask (1 = frozen)."""

    mask: np.ndarray = field(repr=False)

    def __post_init__(self):
        mask = np.asarray(self.mask)
        if mask.ndim != 1:
            raise ValueError("mask must be one-dimensional")
        _check_pow2(mask.size)
        if not np.isin(mask, (0, 1)).all():
            raise ValueError("mask entries must be 0 or 1")
        mask = mask.astype(np.uint8)
        mask.setflags(write=False)
        object.__setattr__(self, "mask", mask)

    @classmethod
    def from_frozen(cls, n_bits: int, frozen) -> "Construction":
        mask = np.zeros(n_bits, dtype=np.uint8)
        mask[list(frozen)] = 1
        return cls(mask)

    @property
    def n_bits(self) -> int:
        return int(self.mask.size)

    @property
    def n_frozen(self) -> int:
        return int(self.mask.sum())

    @property
    def k(self) -> int:
        return self.n_bits - self.n_frozen

    @property
    def frozen_set(self) -> frozenset:
        return frozenset(np.flatnonzero(self.mask).tolist())

    @property
    def info_positions(self) -> np.ndarray:
        return np.flatnonzero(self.mask == 0)

    def key(self) -> bytes:
        return np.packbits(self.mask).tobytes() + self.n_bits.to_bytes(4, "little")

    def __eq__(self, other):
        if not isinstance(other, Construction):
            return NotImplemented
        return np.array_equal(self.mask, other.mask)

    def __hash__(self):
        return hash(self.key())

    def __repr__(self):
        return f"Construction(N={self.n_bits}, K={self.k})"


@dataclass
class CandidateList:
    """Surviving SCL paths, ascending by path metric.

    ``info_words`` has shape ``(size, K)``; ``metrics`` shape ``(size,)``.
    """

    info_words: np.ndarray
    metrics: np.ndarray

    def __post_init__(self):
        self.info_words = np.asarray(self.info_words, dtype=np.uint8)
        self.metrics = np.asarray(self.metrics, dtype=float)
        if self.info_words.ndim != 2 or len(self.info_words) != len(self.metrics):
            raise ValueError("info_words and metrics disagree in size")

    def __len__(self):
        return len(self.metrics)

    def __getitem__(self, i):
        return self.info_words[i], float(self.metrics[i])


def polar_transform(u) -> np.ndarray:
    """Return ``u F^{(x)n}`` over GF(2); operates along the last axis."""
    x = np.array(u, dtype=np.uint8, copy=True)
    n_bits = x.shape[-1]
    _check_pow2(n_bits)
    lead = x.shape[:-1]
    step = 1
    while step < n_bits:
        v = x.reshape(*lead, n_bits // (2 * step), 2, step)
        v[..., 0, :] ^= v[..., 1, :]
        step *= 2
    return x


def encode(info_bits, c: Construction) -> np.ndarray:
    """Place ``info_bits`` on the unfrozen positions (ascending) and transform.

    Accepts a single word of shape ``(K,)`` or a batch ``(B, K)``.
    """
    info = np.asarray(info_bits, dtype=np.uint8)
    if info.shape[-1] != c.k:
        raise ValueError(f"expected {c.k} information bits, got {info.shape[-1]}")
    u = np.zeros(info.shape[:-1] + (c.n_bits,), dtype=np.uint8)
    u[..., c.info_positions] = info
    return polar_transform(u)


def _minsum(a, b):
    return np.copysign(np.minimum(np.abs(a), np.abs(b)), a * b)


# Stage hook signature: (leaf index, decided bits so far (B, L, i+1), metrics (B, L)).
StageHook = Callable[[int, np.ndarray, np.ndarray], None]


def scl_decode_batch(llr, c: Construction, list_size: int,
                     stage_hook: Optional[StageHook] = None):
    """Decode a batch of LLR words with an SC list decoder.

    Returns ``(u_hat, metrics)`` where ``u_hat`` has shape ``(B, L, N)`` and
    ``metrics`` shape ``(B, L)``, each row sorted ascending.  Slots that never
    became live paths (fewer than ``L`` distinct words exist) carry metric
    ``inf``.  Path penalties use the hard approximation: ``|llr|`` whenever
    the decided bit disagrees with the LLR sign.

    Candidate ordering for ties is by (parent slot, bit), so a stable sort
    resolves equal metrics toward older paths and toward bit 0.

    This is the vectorised reference; :func:`scl_decode_fast` is the
    compiled equivalent used for Monte-Carlo work.
    """
    if list_size < 1:
        raise ValueError("list size must be >= 1")
    llr = np.asarray(llr, dtype=float)
    if llr.ndim == 1:
        llr = llr[None, :]
    n_frames, n_bits = llr.shape
    if n_bits != c.n_bits:
        raise ValueError(f"LLR length {n_bits} != code length {c.n_bits}")
    n = _check_pow2(n_bits)
    L = list_size
    frozen = c.mask.astype(bool)

    # alpha[d]: LLRs of the active node at depth d; beta[d]: left-sibling
    # partial sums.  alpha[0] is the channel word, shared by all paths.
    alpha = [llr[:, None, :]]
    alpha += [np.zeros((n_frames, L, n_bits >> d)) for d in range(1, n + 1)]
    beta = [None] + [np.zeros((n_frames, L, n_bits >> d), dtype=np.uint8)
                     for d in range(1, n + 1)]
    u_hat = np.zeros((n_frames, L, n_bits), dtype=np.uint8)
    pm = np.full((n_frames, L), np.inf)
    pm[:, 0] = 0.0
    rows = np.arange(n_frames)[:, None]

    for i in range(n_bits):
        start = 1 if i == 0 else n - ((i ^ (i - 1)).bit_length() - 1)
        for d in range(start, n + 1):
            half = n_bits >> d
            parent = alpha[d - 1]
            a, b = parent[..., :half], parent[..., half:]
            if d == start and i > 0:
                alpha[d] = b + (1.0 - 2.0 * beta[d]) * a
            else:
                alpha[d] = np.broadcast_to(_minsum(a, b), (n_frames, L, half))
        lam = alpha[n][..., 0]
        penalty = np.abs(lam)
        if frozen[i]:
            bit = np.zeros((n_frames, L), dtype=np.uint8)
            pm = pm + np.where(lam < 0, penalty, 0.0)
        else:
            cand = np.empty((n_frames, L, 2))
            cand[..., 0] = pm + np.where(lam < 0, penalty, 0.0)
            cand[..., 1] = pm + np.where(lam >= 0, penalty, 0.0)
            cand = cand.reshape(n_frames, 2 * L)
            order = np.argsort(cand, axis=1, kind="stable")[:, :L]
            pm = np.take_along_axis(cand, order, axis=1)
            bit = (order % 2).astype(np.uint8)
            if L > 1:
                src = order // 2
                alpha = alpha[:1] + [a_[rows, src] for a_ in alpha[1:]]
                beta = beta[:1] + [b_[rows, src] for b_ in beta[1:]]
                u_hat = u_hat[rows, src]
        u_hat[..., i] = bit
        if stage_hook is not None:
            stage_hook(i, u_hat[..., : i + 1], pm)

        # Propagate the decided bit up through completed right children.
        x = bit[..., None]
        d, j = n, i
        while j & 1:
            x = np.concatenate([beta[d] ^ x, x], axis=-1)
            d -= 1
            j >>= 1
        if d > 0:
            beta[d] = x

    order = np.argsort(pm, axis=1, kind="stable")
    return u_hat[rows, order], np.take_along_axis(pm, order, axis=1)


@numba.njit(cache=True, nogil=True)
def _scl_kernel(llr, frozen, L, u_out, pm_out):
    n_frames, n_bits = llr.shape
    n = 0
    while (1 << n) < n_bits:
        n += 1
    # Each path row holds the node of size s at [s, 2s); the channel word is
    # shared and read from `ch`.  beta uses the same layout for partial sums.
    width = max(n_bits, 2)
    alpha = np.zeros((L, width))
    beta = np.zeros((L, width), dtype=np.uint8)
    u = np.zeros((L, n_bits), dtype=np.uint8)
    alpha2 = np.zeros_like(alpha)
    beta2 = np.zeros_like(beta)
    u2 = np.zeros_like(u)
    scratch = np.zeros(width, dtype=np.uint8)
    pm = np.empty(L)
    pm2 = np.empty(L)
    cand = np.empty(2 * L)
    for fr in range(n_frames):
        ch = llr[fr]
        if n == 0:
            alpha[0, 1] = ch[0]
        pm[0] = 0.0
        active = 1
        for i in range(n_bits):
            if i == 0:
                start = 1
            else:
                t = 0
                while not (i >> t) & 1:
                    t += 1
                start = n - t
            for d in range(start, n + 1):
                s = n_bits >> d
                for p in range(active):
                    for k in range(s):
                        if d == 1:
                            a = ch[k]
                            b = ch[s + k]
                        else:
                            a = alpha[p, 2 * s + k]
                            b = alpha[p, 3 * s + k]
                        if d == start and i > 0:
                            if beta[p, s + k]:
                                alpha[p, s + k] = b - a
                            else:
                                alpha[p, s + k] = b + a
                        else:
                            m = min(abs(a), abs(b))
                            if (a < 0) != (b < 0):
                                m = -m
                            alpha[p, s + k] = m
            if frozen[i]:
                for p in range(active):
                    lam = alpha[p, 1]
                    if lam < 0:
                        pm[p] -= lam
                    u[p, i] = 0
            else:
                for p in range(active):
                    lam = alpha[p, 1]
                    cand[2 * p] = pm[p] + (-lam if lam < 0 else 0.0)
                    cand[2 * p + 1] = pm[p] + (lam if lam >= 0 else 0.0)
                n_new = min(L, 2 * active)
                if active == 1 and L == 1:
                    pick = 0 if cand[0] <= cand[1] else 1
                    pm[0] = cand[pick]
                    u[0, i] = pick
                else:
                    order = np.argsort(cand[: 2 * active], kind="mergesort")
                    for q in range(n_new):
                        src = order[q] // 2
                        for k in range(1, n_bits):
                            alpha2[q, k] = alpha[src, k]
                            beta2[q, k] = beta[src, k]
                        for k in range(i):
                            u2[q, k] = u[src, k]
                        u2[q, i] = order[q] % 2
                        pm2[q] = cand[order[q]]
                    pm, pm2 = pm2, pm
                    alpha, alpha2 = alpha2, alpha
                    beta, beta2 = beta2, beta
                    u, u2 = u2, u
                    active = n_new
            # Propagate the decided bit up through completed right children.
            for p in range(active):
                d = n
                j = i
                s = 1
                scratch[0] = u[p, i]
                while j & 1:
                    for k in range(s):
                        scratch[s + k] = scratch[k]
                        scratch[k] = beta[p, s + k] ^ scratch[k]
                    s *= 2
                    d -= 1
                    j >>= 1
                if d > 0:
                    for k in range(s):
                        beta[p, s + k] = scratch[k]
        order = np.argsort(pm[:active], kind="mergesort")
        for q in range(L):
            if q < active:
                pm_out[fr, q] = pm[order[q]]
                for k in range(n_bits):
                    u_out[fr, q, k] = u[order[q], k]
            else:
                pm_out[fr, q] = np.inf
                for k in range(n_bits):
                    u_out[fr, q, k] = 0


def scl_decode_fast(llr, c: Construction, list_size: int):
    """Compiled SCL decoder; same contract and output as :func:`scl_decode_batch`."""
    if list_size < 1:
        raise ValueError("list size must be >= 1")
    llr = np.ascontiguousarray(np.atleast_2d(np.asarray(llr, dtype=float)))
    if llr.shape[1] != c.n_bits:
        raise ValueError(f"LLR length {llr.shape[1]} != code length {c.n_bits}")
    u_out = np.empty((llr.shape[0], list_size, c.n_bits), dtype=np.uint8)
    pm_out = np.empty((llr.shape[0], list_size))
    _scl_kernel(llr, c.mask.astype(np.bool_), list_size, u_out, pm_out)
    return u_out, pm_out


def scl_decode(llr, c: Construction, list_size: int,
               stage_hook: Optional[StageHook] = None) -> CandidateList:
    """Decode one LLR word; returns the live paths as a :class:`CandidateList`."""
    llr = np.asarray(llr, dtype=float)
    if llr.ndim != 1:
        raise ValueError("scl_decode takes a single LLR word; use scl_decode_batch")
    if not np.isfinite(llr).all():
        raise ValueError("LLRs must be finite")
    u_hat, metrics = scl_decode_batch(llr, c, list_size, stage_hook)
    live = np.isfinite(metrics[0])
    words = u_hat[0][live][:, c.info_positions]
    return CandidateList(words, metrics[0][live])


def sc_decode(llr, c: Construction) -> np.ndarray:
    """Plain successive-cancellation decoding, recursive formulation.

    Kept independent of :func:`scl_decode_batch` so the two can cross-check.
    Accepts ``(N,)`` or ``(B, N)`` LLRs and returns the information bits.
    """
    llr = np.asarray(llr, dtype=float)
    single = llr.ndim == 1
    llr = np.atleast_2d(llr)
    frozen = c.mask.astype(bool)
    u = np.zeros(llr.shape, dtype=np.uint8)

    def rec(lv, lo):
        size = lv.shape[-1]
        if size == 1:
            if frozen[lo]:
                bit = np.zeros(lv.shape[0], dtype=np.uint8)
            else:
                bit = (lv[:, 0] < 0).astype(np.uint8)
            u[:, lo] = bit
            return bit[:, None]
        h = size // 2
        a, b = lv[:, :h], lv[:, h:]
        x1 = rec(_minsum(a, b), lo)
        x2 = rec(b + (1.0 - 2.0 * x1) * a, lo + h)
        return np.concatenate([x1 ^ x2, x2], axis=1)

    rec(llr, 0)
    info = u[:, c.info_positions]
    return info[0] if single else info


def select_pm(candidates: CandidateList) -> np.ndarray:
    """Info word of the smallest-metric entry (first one on ties)."""
    if len(candidates) == 0:
        raise ValueError("empty candidate list")
    return candidates.info_words[int(np.argmin(candidates.metrics))]


def genie_success(candidates: CandidateList, true_info) -> bool:
    """True if ``true_info`` is any of the surviving words."""
    truth = np.asarray(true_info, dtype=np.uint8)
    if len(candidates) == 0:
        return False
    if candidates.info_words.shape[1] != truth.size:
        raise ValueError("candidate words and truth differ in length")
    return bool((candidates.info_words == truth).all(axis=1).any())
