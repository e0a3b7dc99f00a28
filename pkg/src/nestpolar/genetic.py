"""Genetic search over frozen sets of a fixed (N, K)."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .codec import Construction

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GaConfig:
    population_size: int = 32
    generations: int = 50
    mutation_swaps: int = 1
    crossover_rate: float = 0.9
    elitism_count: int = 2
    tournament_size: int = 2

    def __post_init__(self):
        if self.population_size < 2:
            raise ValueError("population_size must be >= 2")
        if not 0 <= self.elitism_count < self.population_size:
            raise ValueError("elitism_count must lie in [0, population_size)")
        if not 0.0 <= self.crossover_rate <= 1.0:
            raise ValueError("crossover_rate must lie in [0, 1]")
        if self.generations < 0 or self.mutation_swaps < 0:
            raise ValueError("generations and mutation_swaps must be >= 0")


@dataclass
class GaPopulation:
    """Members as ``(Construction, fitness)``, best first."""

    members: list
    generation: int = 0
    best_history: list = field(default_factory=list)

    @property
    def best(self):
        return self.members[0]

    def constructions(self) -> list:
        return [c for c, _ in self.members]


def repair_mask(mask, k: int, rng: np.random.Generator, agreed=None) -> Construction:
    """Flip entries until exactly ``N - k`` are frozen.

    Positions flagged in ``agreed`` (both parents had the same bit) are only
    touched once the other candidates run out.
    """
    mask = np.array(mask, dtype=np.uint8)
    n_bits = mask.size
    agreed = np.zeros(n_bits, dtype=bool) if agreed is None else np.asarray(agreed, dtype=bool)
    excess = int(mask.sum()) - (n_bits - k)
    if excess != 0:
        value = 1 if excess > 0 else 0
        pool = np.flatnonzero(mask == value)
        free, fixed = pool[~agreed[pool]], pool[agreed[pool]]
        order = np.concatenate([rng.permutation(free), rng.permutation(fixed)])
        mask[order[:abs(excess)]] = 1 - value
    return Construction(mask)


def random_construction(n_bits: int, k: int, rng: np.random.Generator) -> Construction:
    mask = np.zeros(n_bits, dtype=np.uint8)
    mask[rng.choice(n_bits, n_bits - k, replace=False)] = 1
    return Construction(mask)


def mutate(c: Construction, swaps: int, rng: np.random.Generator) -> Construction:
    """Swap a frozen and an unfrozen index ``swaps`` times."""
    mask = c.mask.copy()
    for _ in range(swaps):
        ones, zeros = np.flatnonzero(mask), np.flatnonzero(mask == 0)
        if ones.size == 0 or zeros.size == 0:
            break
        mask[rng.choice(ones)] = 0
        mask[rng.choice(zeros)] = 1
    return Construction(mask)


def crossover(a: Construction, b: Construction, k: int, rng: np.random.Generator) -> Construction:
    """Uniform crossover of frozen masks, repaired to the right frozen count."""
    pick = rng.random(a.n_bits) < 0.5
    child = np.where(pick, a.mask, b.mask)
    return repair_mask(child, k, rng, agreed=a.mask == b.mask)


def _tournament(fitness: np.ndarray, size: int, rng: np.random.Generator) -> int:
    picks = rng.integers(0, len(fitness), size)
    return int(picks[np.argmax(fitness[picks])])


def _rank(members: list) -> list:
    # Stable: equal fitness keeps earlier (older) members first.
    return sorted(members, key=lambda m: -m[1])


def ga_evolve(n_bits: int, k: int, cfg: GaConfig, rng: np.random.Generator,
              fitness: Callable[[Construction], float],
              seeds: Sequence[Construction] = (),
              evaluate_many: Optional[Callable] = None) -> GaPopulation:
    """Evolve a population of (N, K) constructions maximising ``fitness``.

    Each generation keeps the ``elitism_count`` best members and fills the
    remaining slots with distinct offspring (tournament selection, uniform
    crossover, swap mutation).  If too few new offspring can be produced,
    the remaining slots go to the best surviving parents.
    ``evaluate_many`` may evaluate a list of constructions in parallel.
    """
    if not 1 <= k <= n_bits - 1:
        raise ValueError(f"K={k} outside [1, {n_bits - 1}]")
    evaluate_many = evaluate_many or (lambda cs: [fitness(c) for c in cs])
    P = cfg.population_size
    space = math.comb(n_bits, k)

    init, seen = [], set()
    for c in seeds:
        if c.k != k:
            raise ValueError("seed construction has the wrong K")
        if c not in seen and len(init) < P:
            init.append(c)
            seen.add(c)
    attempts = 0
    while len(init) < min(P, space) and attempts < 50 * P:
        c = random_construction(n_bits, k, rng)
        attempts += 1
        if c not in seen:
            init.append(c)
            seen.add(c)
    pop = GaPopulation(_rank(list(zip(init, map(float, evaluate_many(init))))))
    pop.best_history.append(pop.best[1])

    for gen in range(1, cfg.generations + 1):
        current = pop.members
        fit = np.array([f for _, f in current])
        elite = current[:cfg.elitism_count]
        taken = {c for c, _ in elite}
        offspring = []
        n_needed = len(current) - len(elite)
        attempts = 0
        while len(offspring) < n_needed and attempts < 20 * P:
            attempts += 1
            a = current[_tournament(fit, cfg.tournament_size, rng)][0]
            if rng.random() < cfg.crossover_rate:
                b = current[_tournament(fit, cfg.tournament_size, rng)][0]
                child = crossover(a, b, k, rng)
            else:
                child = a
            if cfg.mutation_swaps:
                child = mutate(child, cfg.mutation_swaps, rng)
            if child in taken or any(child == c for c, _ in current):
                continue
            taken.add(child)
            offspring.append(child)
        scored = list(zip(offspring, map(float, evaluate_many(offspring))))
        if len(scored) < n_needed:
            fill = [m for m in current[cfg.elitism_count:] if m[0] not in taken]
            scored += fill[: n_needed - len(scored)]
        pop = GaPopulation(elite + _rank(scored), gen, pop.best_history)
        pop.members = _rank(pop.members)
        pop.best_history.append(pop.best[1])
        log.debug("K=%d gen %d best %.4f", k, gen, pop.best[1])
    return pop


def mask_to_hex(mask) -> str:
    mask = np.asarray(mask, dtype=np.uint8)
    value = sum(int(b) << i for i, b in enumerate(mask))
    return f"{value:0{max(1, (mask.size + 3) // 4)}x}"


def hex_to_mask(text: str, n_bits: int) -> np.ndarray:
    value = int(text, 16)
    if value >> n_bits:
        raise ValueError(f"mask {text} has bits beyond N={n_bits}")
    return np.array([(value >> i) & 1 for i in range(n_bits)], dtype=np.uint8)


def write_population_archive(path, populations) -> None:
    """One line per member: ``K=<int> fitness=<real> mask=<hex>``, plus an N header."""
    lines = []
    n_bits = None
    for k in sorted(populations):
        for c, f in populations[k].members:
            n_bits = c.n_bits
            lines.append(f"K={c.k} fitness={float(f)!r} mask={mask_to_hex(c.mask)}")
    with open(path, "w") as fh:
        fh.write(f"N={n_bits or 0}\n")
        fh.write("\n".join(lines) + ("\n" if lines else ""))


def read_population_archive(path) -> dict:
    """Inverse of :func:`write_population_archive`; maps K to a GaPopulation."""
    with open(path) as fh:
        header = fh.readline().strip()
        if not header.startswith("N="):
            raise ValueError(f"{path}: missing 'N=<int>' header")
        n_bits = int(header[2:])
        pops: dict = {}
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            try:
                fields = dict(tok.split("=", 1) for tok in line.split())
                k = int(fields["K"])
                c = Construction(hex_to_mask(fields["mask"], n_bits))
                f = float(fields["fitness"])
            except (KeyError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: bad archive line: {exc}") from None
            if c.k != k:
                raise ValueError(f"{path}:{lineno}: mask has K={c.k}, line says K={k}")
            pops.setdefault(k, GaPopulation([])).members.append((c, f))
    for pop in pops.values():
        pop.members = _rank(pop.members)
    return pops
