import csv
import math
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import fields, replace

import numpy as np
import pytest

import nestpolar.evaluator as ev
from nestpolar.channel import ChannelSpec, bpsk_awgn_llr, rng_stream
from nestpolar.codec import Construction, encode, scl_decode_fast
from nestpolar.construction import dega_construct
from nestpolar.evaluator import (BlerEstimate, BracketError, Decoder, RewardCache, RewardSpec,
                                 ScheduledReward, bler_sweep, estimate_bler, find_esn0_at_bler,
                                 frame_errors, reward, state_rng, write_sweep_csv)
from oracles import straight_line_sc_bler


def spec(decoder="SCL_PM", L=8, esn0=2.0, seed=0, events=100, trials=100_000, **kw):
    return RewardSpec(decoder, L, ChannelSpec(esn0, seed), events, trials, **kw)


def test_reward_spec_validation():
    with pytest.raises(ValueError):
        spec(events=0)
    with pytest.raises(ValueError):
        spec(events=10, trials=5)
    with pytest.raises(ValueError):
        spec(bler_floor=1.5)
    with pytest.raises(ValueError):
        spec(L=0)
    assert spec(trials=1000).bler_floor == 1e-3


def test_noiseless_channel_hits_floor():
    est = estimate_bler(dega_construct(16, 8, 0.0), spec(esn0=60.0, trials=2000))
    assert est.floored and est.bler == spec(trials=2000).bler_floor
    assert est.error_events == 0 and est.trials == 2000


def test_genie_with_full_list_never_fails():
    c = Construction(np.zeros(8, dtype=np.uint8))
    est = estimate_bler(c, spec("SCL_GENIE", L=256, esn0=0.0, trials=2000))
    assert est.floored and est.error_events == 0


def test_rejects_zero_information_length():
    with pytest.raises(ValueError):
        estimate_bler(Construction(np.ones(8, dtype=np.uint8)), spec())


def test_stops_exactly_at_target_error():
    s = spec(esn0=-2.0, events=37)
    est = estimate_bler(dega_construct(16, 8, 0.0), s)
    assert est.error_events == 37
    assert est.bler == 37 / est.trials
    # Re-simulating exactly that many frames from the same stream gives the
    # same count, and the last frame is an error.
    c = dega_construct(16, 8, 0.0)
    rng = state_rng(c, s)
    flags = []
    for size in ev._chunks(s.max_trials):
        if sum(map(len, flags)) >= est.trials:
            break
        info = rng.integers(0, 2, size=(size, c.k), dtype=np.uint8)
        llr = bpsk_awgn_llr(encode(info, c), s.channel, rng)
        u_hat, pm = scl_decode_fast(llr, c, s.list_size)
        flags.append(frame_errors(u_hat, pm, info, c.info_positions, s.decoder))
    flags = np.concatenate(flags)[:est.trials]
    assert flags.sum() == 37 and flags[-1]


def test_estimate_is_deterministic_per_state():
    c = dega_construct(16, 8, 1.0)
    s = spec(esn0=1.0)
    assert estimate_bler(c, s) == estimate_bler(c, s)
    assert estimate_bler(c, s) != estimate_bler(c, replace(s, channel=ChannelSpec(1.0, 1)))


def test_sc_estimate_agrees_with_straight_line_oracle():
    c = dega_construct(8, 4, 3.0)
    s = RewardSpec("SCL_PM", 1, ChannelSpec(3.0, 4), 10_000, 50_000_000)
    est = estimate_bler(c, s)
    n = est.trials
    errors = straight_line_sc_bler(c.mask, 3.0, n, np.random.default_rng(77))
    p1, p2 = est.bler, errors / n
    sd = math.sqrt(p1 * (1 - p1) / est.trials + p2 * (1 - p2) / n)
    assert abs(p1 - p2) <= 3 * sd


def test_genie_errors_never_exceed_pm_errors_per_batch():
    c = dega_construct(32, 16, 2.0)
    rng = rng_stream(3, 1)
    ch = ChannelSpec(2.0)
    for _ in range(10):
        info = rng.integers(0, 2, (1000, c.k), dtype=np.uint8)
        llr = bpsk_awgn_llr(encode(info, c), ch, rng)
        u_hat, pm = scl_decode_fast(llr, c, 8)
        pm_err = frame_errors(u_hat, pm, info, c.info_positions, Decoder.SCL_PM)
        genie_err = frame_errors(u_hat, pm, info, c.info_positions, Decoder.SCL_GENIE)
        assert not np.any(genie_err & ~pm_err)
        assert genie_err.sum() <= pm_err.sum()


def test_reward_formula(monkeypatch):
    monkeypatch.setattr(ev, "estimate_bler", lambda c, s, rng=None: BlerEstimate(0.01, 10_000, 100))
    assert reward(dega_construct(8, 4, 0.0), spec()) == pytest.approx(2.0)


def test_footnote_rule_skips_simulation():
    cache = RewardCache()
    s = spec("SCL_GENIE", L=8)
    for k in range(0, 4):
        assert reward(dega_construct(16, k, 0.0), s, cache) == 0.0
    assert cache.trials == 0 and cache.simulations == 0 and len(cache) == 0
    assert reward(Construction(np.ones(8, dtype=np.uint8)), spec()) == 0.0


def test_cache_hit_runs_no_second_simulation():
    cache = RewardCache()
    c, s = dega_construct(16, 8, 0.0), spec(esn0=0.0)
    r1 = reward(c, s, cache)
    trials = cache.trials
    assert cache.simulations == 1 and trials > 0
    assert reward(c, s, cache) == r1
    assert cache.simulations == 1 and cache.trials == trials


def test_cache_is_transparent():
    s = spec(esn0=0.5)
    cache = RewardCache()
    rng = np.random.default_rng(0)
    for _ in range(8):
        mask = np.ones(16, dtype=np.uint8)
        mask[rng.choice(16, 8, replace=False)] = 0
        c = Construction(mask)
        assert reward(c, s, cache) == reward(c, s)


def test_fingerprint_covers_every_field():
    base = spec()
    variants = [replace(base, decoder=Decoder.SCL_GENIE), replace(base, list_size=4),
                replace(base, channel=ChannelSpec(2.5, 0)),
                replace(base, channel=ChannelSpec(2.0, 1)),
                replace(base, target_error_events=99),
                replace(base, max_trials=100_001, bler_floor=None),
                replace(base, bler_floor=1e-3)]
    assert len(variants) >= len(fields(RewardSpec))
    prints = {v.fingerprint() for v in variants} | {base.fingerprint()}
    assert len(prints) == len(variants) + 1


def test_cache_computes_each_key_once_under_concurrency():
    cache = RewardCache()
    calls = []
    gate = threading.Event()

    def compute():
        calls.append(1)
        gate.wait(1.0)
        return 3.5

    with ThreadPoolExecutor(8) as pool:
        futs = [pool.submit(cache.get_or_compute, "k", compute) for _ in range(8)]
        time.sleep(0.05)
        gate.set()
        assert [f.result() for f in futs] == [3.5] * 8
    assert len(calls) == 1


def test_cache_failure_is_not_stored():
    cache = RewardCache()

    def boom():
        raise RuntimeError("x")

    with pytest.raises(RuntimeError):
        cache.get_or_compute("k", boom)
    assert cache.get_or_compute("k", lambda: 1.0) == 1.0


def test_reward_decreases_with_bler():
    s = spec(esn0=1.0, events=200)
    good, bad = dega_construct(16, 8, 1.0), Construction.from_frozen(16, range(8, 16))
    eg, eb = estimate_bler(good, s), estimate_bler(bad, s)
    assert eb.bler > 2 * eg.bler
    assert reward(bad, s) < reward(good, s)


def test_scheduled_reward():
    s = spec("SCL_GENIE", L=2, esn0=1.0)
    fn = ScheduledReward(s, schedule=frozenset({4}), esn0_by_k={4: 3.0})
    assert fn(dega_construct(16, 5, 1.0)) == 0.0
    c = dega_construct(16, 4, 1.0)
    assert fn(c) == reward(c, s.with_esn0(3.0))
    assert fn.cache.simulations == 1


def test_bisection_left_endpoint(monkeypatch):
    monkeypatch.setattr(ev, "estimate_bler",
                        lambda c, s, rng=None: BlerEstimate(0.01 if s.channel.esn0_db == -1 else 0.5, 100, 1))
    assert find_esn0_at_bler(dega_construct(8, 4, 0), spec(), 0.01, bracket=(-1, 5)) == -1


def test_bisection_bracket_failure(monkeypatch):
    monkeypatch.setattr(ev, "estimate_bler", lambda c, s, rng=None: BlerEstimate(0.5, 100, 50))
    with pytest.raises(BracketError):
        find_esn0_at_bler(dega_construct(8, 4, 0), spec(), 0.01, bracket=(0, 1), max_widen=2)


def test_bisection_widens_bracket():
    c = dega_construct(16, 8, 2.0)
    log = []
    x = find_esn0_at_bler(c, spec(esn0=0.0), 0.1, bracket=(4.0, 6.0), probe_log=log)
    assert min(p for p, _ in log) < 4.0
    assert x < 4.0


def test_bisection_monotone_in_target():
    c = dega_construct(16, 8, 2.0)
    s = spec(esn0=0.0)
    assert find_esn0_at_bler(c, s, 1e-2) >= find_esn0_at_bler(c, s, 1e-1)


def test_bisection_matches_grid_sweep():
    c = dega_construct(32, 16, 2.0)
    s = spec(esn0=0.0, events=100, trials=200_000)
    x = find_esn0_at_bler(c, s, 1e-2, bracket=(-2.0, 6.0))
    grid = np.round(np.arange(x - 1.0, x + 1.0001, 0.1), 6)
    blers = np.array([estimate_bler(c, s.with_esn0(g)).bler for g in grid])
    # First grid point at or below the target, interpolated in log BLER.
    j = int(np.flatnonzero(blers <= 1e-2)[0])
    lo, hi = np.log10(blers[j - 1]), np.log10(blers[j])
    grid_x = grid[j - 1] + 0.1 * (lo + 2) / (lo - hi)
    assert abs(x - grid_x) <= 0.1


def test_sweep_csv(tmp_path):
    c = dega_construct(16, 8, 1.0)
    rows = bler_sweep(c, spec(events=20, esn0=0.0), [0.0, 1.0, 2.0, 3.0, 4.0])
    assert len(rows) == 5
    blers = [r["bler"] for r in rows]
    assert all(b2 <= b1 * 1.5 for b1, b2 in zip(blers, blers[1:]))
    path = tmp_path / "s.csv"
    write_sweep_csv(path, rows)
    with open(path) as fh:
        out = list(csv.reader(fh))
    assert out[0] == ["N", "K", "decoder", "L", "esn0_db", "trials", "errors", "bler"]
    assert len(out) == 6
    assert bler_sweep(c, spec(events=20), [2.0]) == bler_sweep(c, spec(events=20), [2.0])
