"""Monte-Carlo BLER estimation, rewards, reward caching and EsN0 bisection."""

from __future__ import annotations

import csv
import enum
import hashlib
import logging
import math
import threading
from concurrent.futures import Future
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Optional

import numpy as np

from .channel import ChannelSpec, bpsk_awgn_llr, rng_stream, stream_id
from .codec import Construction, encode, scl_decode_fast

log = logging.getLogger(__name__)


class Decoder(str, enum.Enum):
    SCL_PM = "SCL_PM"
    SCL_GENIE = "SCL_GENIE"


@dataclass(frozen=True)
class RewardSpec:
    decoder: Decoder
    list_size: int
    channel: ChannelSpec
    target_error_events: int = 1000
    max_trials: int = 1_000_000
    bler_floor: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "decoder", Decoder(self.decoder))
        if self.list_size < 1:
            raise ValueError("list_size must be >= 1")
        if self.target_error_events < 1:
            raise ValueError("target_error_events must be >= 1")
        if self.max_trials < self.target_error_events:
            raise ValueError("max_trials must be >= target_error_events")
        if self.bler_floor is None:
            object.__setattr__(self, "bler_floor", 1.0 / self.max_trials)
        if not 0 < self.bler_floor < 1:
            raise ValueError("bler_floor must lie in (0, 1)")

    def with_esn0(self, esn0_db: float) -> "RewardSpec":
        return replace(self, channel=replace(self.channel, esn0_db=float(esn0_db)))

    def fingerprint(self) -> str:
        text = "|".join([
            self.decoder.value, str(self.list_size), repr(float(self.channel.esn0_db)),
            str(self.channel.seed), str(self.target_error_events), str(self.max_trials),
            repr(float(self.bler_floor)), "per-state-seed",
        ])
        return hashlib.sha256(text.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class BlerEstimate:
    bler: float
    trials: int
    error_events: int
    floored: bool = False


def state_rng(c: Construction, spec: RewardSpec) -> np.random.Generator:
    """Substream fixed by (global seed, construction): rewards become a
    deterministic function of the state."""
    return rng_stream(spec.channel.seed, stream_id(c.key()))


def frame_errors(u_hat, metrics, truth_u, info_positions, decoder: Decoder) -> np.ndarray:
    """Per-frame error flags for a decoded batch under the given output rule."""
    words = u_hat[..., info_positions]
    truth = truth_u[:, None, :]
    if decoder is Decoder.SCL_PM:
        return (words[:, 0] != truth[:, 0]).any(axis=1)
    hit = (words == truth).all(axis=2) & np.isfinite(metrics)
    return ~hit.any(axis=1)


def _chunks(max_trials: int):
    size, done = 64, 0
    while done < max_trials:
        take = min(size, max_trials - done)
        yield take
        done += take
        size = min(size * 2, 4096)


def estimate_bler(c: Construction, spec: RewardSpec,
                  rng: Optional[np.random.Generator] = None) -> BlerEstimate:
    """Simulate until ``target_error_events`` errors or ``max_trials`` frames.

    Frames are drawn in a fixed chunk schedule, and the count stops at the
    exact frame carrying the target-th error, so the outcome is a pure
    function of the random stream.
    """
    k = c.k
    if k == 0:
        raise ValueError("K=0 code carries no information")
    if rng is None:
        rng = state_rng(c, spec)
    info_pos = c.info_positions
    trials = errors = 0
    for size in _chunks(spec.max_trials):
        info = rng.integers(0, 2, size=(size, k), dtype=np.uint8)
        llr = bpsk_awgn_llr(encode(info, c), spec.channel, rng)
        u_hat, metrics = scl_decode_fast(llr, c, spec.list_size)
        err = frame_errors(u_hat, metrics, info, info_pos, spec.decoder)
        need = spec.target_error_events - errors
        hits = np.flatnonzero(err)
        if hits.size >= need:
            trials += int(hits[need - 1]) + 1
            errors += need
            break
        trials += size
        errors += int(hits.size)
    if errors == 0:
        return BlerEstimate(spec.bler_floor, trials, 0, floored=True)
    return BlerEstimate(errors / trials, trials, errors)


class RewardCache:
    """Thread-safe memo of rewards keyed by (mask, spec fingerprint).

    Concurrent requests for the same key compute it exactly once; the
    others wait on the first computation.
    """

    def __init__(self):
        self._values: dict = {}
        self._pending: dict = {}
        self._lock = threading.Lock()
        self.simulations = 0
        self.trials = 0

    def __len__(self):
        return len(self._values)

    def __contains__(self, key):
        return key in self._values

    def get(self, key, default=None):
        return self._values.get(key, default)

    def put(self, key, value: float) -> None:
        with self._lock:
            self._values[key] = value

    def get_or_compute(self, key, compute: Callable[[], float]) -> float:
        with self._lock:
            if key in self._values:
                return self._values[key]
            fut = self._pending.get(key)
            owner = fut is None
            if owner:
                fut = self._pending[key] = Future()
        if not owner:
            return fut.result()
        try:
            value = compute()
        except BaseException as exc:
            with self._lock:
                del self._pending[key]
            fut.set_exception(exc)
            raise
        with self._lock:
            self._values[key] = value
            del self._pending[key]
        fut.set_result(value)
        return value

    def record(self, est: BlerEstimate) -> None:
        with self._lock:
            self.simulations += 1
            self.trials += est.trials


def reward_skipped(c: Construction, spec: RewardSpec) -> bool:
    """True where the reward is 0 by rule and no simulation is needed."""
    if c.k == 0:
        return True
    # A genie list of size L always holds the truth when 2^K <= L.
    return spec.decoder is Decoder.SCL_GENIE and 2 ** c.k <= spec.list_size


def reward(c: Construction, spec: RewardSpec, cache: Optional[RewardCache] = None,
           rng: Optional[np.random.Generator] = None) -> float:
    """``-log10(BLER)`` of the code, memoised in ``cache`` when given."""
    if reward_skipped(c, spec):
        return 0.0

    def compute():
        est = estimate_bler(c, spec, rng)
        if cache is not None:
            cache.record(est)
        return -math.log10(est.bler)

    if cache is None:
        return compute()
    return cache.get_or_compute((c.key(), spec.fingerprint()), compute)


@dataclass
class ScheduledReward:
    """Reward callable used by the environment.

    ``schedule`` lists the information lengths that are simulated (``None``
    means all); every other K scores 0.  ``esn0_by_k`` optionally overrides
    the channel EsN0 per information length.
    """

    spec: RewardSpec
    cache: RewardCache = field(default_factory=RewardCache)
    schedule: Optional[frozenset] = None
    esn0_by_k: Optional[dict] = None

    def spec_for(self, k: int) -> RewardSpec:
        if self.esn0_by_k and k in self.esn0_by_k:
            return self.spec.with_esn0(self.esn0_by_k[k])
        return self.spec

    def scheduled(self, k: int) -> bool:
        return self.schedule is None or k in self.schedule

    def __call__(self, c: Construction) -> float:
        if not self.scheduled(c.k):
            return 0.0
        return reward(c, self.spec_for(c.k), self.cache)


class BracketError(RuntimeError):
    """The target BLER could not be bracketed within the widening limit."""


def find_esn0_at_bler(c: Construction, spec: RewardSpec, target_bler: float,
                      bracket=(-2.0, 8.0), tol_db: float = 0.05,
                      widen_step_db: float = 2.0, max_widen: int = 6,
                      probe_log: Optional[list] = None) -> float:
    """Bisect EsN0 until the bracket is at most ``tol_db`` wide; return its midpoint.

    Every probe reuses the same per-state random stream (common random
    numbers), which keeps the measured curve close to monotone.
    """
    if not 0 < target_bler < 1:
        raise ValueError("target_bler must lie in (0, 1)")

    def bler(x):
        est = estimate_bler(c, spec.with_esn0(x))
        if probe_log is not None:
            probe_log.append((float(x), est))
        return est.bler

    lo, hi = map(float, bracket)
    b_lo = bler(lo)
    if b_lo == target_bler:
        return lo
    for _ in range(max_widen):
        if b_lo > target_bler:
            break
        lo -= widen_step_db
        b_lo = bler(lo)
    else:
        if b_lo <= target_bler:
            raise BracketError(f"BLER {b_lo:.3g} at {lo} dB already below target")
    b_hi = bler(hi)
    for _ in range(max_widen):
        if b_hi <= target_bler:
            break
        hi += widen_step_db
        b_hi = bler(hi)
    else:
        if b_hi > target_bler:
            raise BracketError(f"BLER {b_hi:.3g} at {hi} dB still above target")
    while hi - lo > tol_db:
        mid = 0.5 * (lo + hi)
        if bler(mid) > target_bler:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


SWEEP_COLUMNS = ("N", "K", "decoder", "L", "esn0_db", "trials", "errors", "bler")


def bler_sweep(c: Construction, spec: RewardSpec, esn0_grid: Iterable[float]) -> list:
    rows = []
    for x in esn0_grid:
        est = estimate_bler(c, spec.with_esn0(x))
        rows.append({"N": c.n_bits, "K": c.k, "decoder": spec.decoder.value,
                     "L": spec.list_size, "esn0_db": float(x), "trials": est.trials,
                     "errors": est.error_events, "bler": est.bler})
    return rows


def write_sweep_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow({**r, "esn0_db": repr(float(r["esn0_db"])), "bler": repr(float(r["bler"]))})
