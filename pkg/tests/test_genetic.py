import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nestpolar.codec import Construction
from nestpolar.construction import dega_construct
from nestpolar.evaluator import ChannelSpec, RewardCache, RewardSpec, estimate_bler, reward
from nestpolar.genetic import (GaConfig, GaPopulation, crossover, ga_evolve, hex_to_mask,
                               mask_to_hex, mutate, random_construction, read_population_archive,
                               repair_mask, write_population_archive)
from nestpolar.mdp import TargetSetEnv


def overlap_fitness(target):
    t = np.zeros(16, bool)
    t[target] = True
    return lambda c: float(np.count_nonzero(c.mask.astype(bool) & t))


def test_config_validation():
    for bad in ({"population_size": 1}, {"elitism_count": 32}, {"crossover_rate": 1.5},
                {"generations": -1}):
        with pytest.raises(ValueError):
            GaConfig(**bad)


def test_repair_examples():
    rng = np.random.default_rng(0)
    mask = np.array([1, 0, 1, 0, 0, 1, 0, 0], np.uint8)
    assert repair_mask(mask, 5, rng).mask.tolist() == mask.tolist()
    assert repair_mask(np.ones(8, np.uint8), 8, rng).mask.tolist() == [0] * 8


@settings(max_examples=300)
@given(seed=st.integers(0, 2**32 - 1), n_bits=st.sampled_from([2, 4, 8, 16, 32]), data=st.data())
def test_repair_always_valid_and_keeps_agreed_bits(seed, n_bits, data):
    rng = np.random.default_rng(seed)
    k = data.draw(st.integers(0, n_bits))
    a, b = rng.integers(0, 2, n_bits), rng.integers(0, 2, n_bits)
    child = np.where(rng.random(n_bits) < 0.5, a, b)
    agreed = a == b
    out = repair_mask(child, k, rng, agreed)
    assert out.k == k
    flipped = out.mask != child
    need = abs(int(child.sum()) - (n_bits - k))
    # Agreed positions are only touched once every other candidate is used.
    if flipped[agreed].any():
        value = child[flipped][0]
        assert np.all(flipped[~agreed & (child == value)])
    assert flipped.sum() == need


def test_mutate_and_crossover_preserve_k():
    rng = np.random.default_rng(1)
    for _ in range(200):
        a, b = random_construction(16, 6, rng), random_construction(16, 6, rng)
        assert mutate(a, 3, rng).k == 6
        assert crossover(a, b, 6, rng).k == 6
    c = random_construction(16, 6, rng)
    assert mutate(c, 0, rng) == c


def test_zero_generations_returns_evaluated_initial_population():
    calls = []
    fit = overlap_fitness(range(8))
    pop = ga_evolve(16, 8, GaConfig(8, 0), np.random.default_rng(0),
                    lambda c: calls.append(c) or fit(c))
    assert pop.generation == 0 and len(pop.members) == 8 and len(calls) == 8
    assert [f for _, f in pop.members] == sorted((f for _, f in pop.members), reverse=True)


def test_best_fitness_never_decreases_and_members_valid():
    env = TargetSetEnv(16, range(8))
    pop = ga_evolve(16, 8, GaConfig(16, 25), np.random.default_rng(2), env.fitness)
    assert np.all(np.diff(pop.best_history) >= 0)
    assert all(c.k == 8 for c, _ in pop.members)
    assert len({c for c, _ in pop.members}) == 16
    assert pop.best[1] == 8.0


def test_no_variation_keeps_population():
    fit = overlap_fitness([0, 2, 4, 6, 8, 10, 12, 14])
    cfg = GaConfig(10, 5, mutation_swaps=0, crossover_rate=0.0)
    first = ga_evolve(16, 8, GaConfig(10, 0), np.random.default_rng(3), fit)
    last = ga_evolve(16, 8, cfg, np.random.default_rng(3), fit)
    assert sorted(f for _, f in first.members) == sorted(f for _, f in last.members)
    assert {c for c, _ in first.members} == {c for c, _ in last.members}


def test_seeds_enter_population():
    seed = Construction.from_frozen(16, range(8))
    pop = ga_evolve(16, 8, GaConfig(4, 0), np.random.default_rng(4), lambda c: 0.0, seeds=[seed])
    assert seed in pop.constructions()
    with pytest.raises(ValueError):
        ga_evolve(16, 8, GaConfig(4, 0), np.random.default_rng(4), lambda c: 0.0,
                  seeds=[Construction.from_frozen(16, range(7))])
    with pytest.raises(ValueError):
        ga_evolve(16, 0, GaConfig(4, 0), np.random.default_rng(4), lambda c: 0.0)


def test_small_space_is_covered():
    pop = ga_evolve(4, 1, GaConfig(8, 3), np.random.default_rng(5), lambda c: float(c.mask[0]))
    assert len(pop.members) == math.comb(4, 1)


def test_simulations_bounded_by_distinct_constructions():
    spec = RewardSpec("SCL_PM", 1, ChannelSpec(2.0, 0), 20, 5000)
    cache = RewardCache()
    created = set()

    def fitness(c):
        created.add(c)
        return reward(c, spec, cache)

    ga_evolve(16, 8, GaConfig(12, 6), np.random.default_rng(6), fitness)
    assert cache.simulations <= len(created)


def test_ga_matches_dega_under_sc():
    spec = RewardSpec("SCL_PM", 1, ChannelSpec(3.0, 0), 200, 1_000_000)
    cache = RewardCache()
    seed_free = ga_evolve(16, 8, GaConfig(32, 30), np.random.default_rng(7),
                          lambda c: reward(c, spec, cache))
    best = seed_free.best[0]
    eval_spec = RewardSpec("SCL_PM", 1, ChannelSpec(3.0, 99), 1000, 10_000_000)
    b_ga, b_de = estimate_bler(best, eval_spec), estimate_bler(dega_construct(16, 8, 3.0), eval_spec)
    sd = b_de.bler / math.sqrt(b_de.error_events) + b_ga.bler / math.sqrt(b_ga.error_events)
    assert b_ga.bler <= 1.1 * b_de.bler + 2 * sd


def test_hex_round_trip():
    mask = np.array([1, 0, 0, 0, 0, 0, 0, 0, 0, 1], np.uint8)
    assert mask_to_hex(mask) == "201"
    np.testing.assert_array_equal(hex_to_mask("201", 10), mask)
    with pytest.raises(ValueError):
        hex_to_mask("fff", 4)


def test_archive_round_trip(tmp_path):
    rng = np.random.default_rng(8)
    pops = {k: GaPopulation([(random_construction(16, k, rng), float(f)) for f in (3.5, 1.25)])
            for k in (4, 9)}
    path = tmp_path / "pop.txt"
    write_population_archive(path, pops)
    lines = path.read_text().splitlines()
    assert lines[0] == "N=16" and lines[1].startswith("K=4 fitness=3.5 mask=")
    back = read_population_archive(path)
    assert sorted(back) == [4, 9]
    for k in pops:
        assert back[k].members == pops[k].members
    path.write_text("N=16\nK=3 fitness=1.0 mask=0001\n")
    with pytest.raises(ValueError):
        read_population_archive(path)
