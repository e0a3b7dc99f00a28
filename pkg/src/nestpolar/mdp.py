"""Nested-construction MDP: freeze one more subchannel per step.

The state is the frozen mask.  ``step`` attaches to the incoming transition
the reward of the code it just formed.  After the last step every
subchannel is frozen (K = 0); the polar reward scores that code 0.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .codec import Construction, _check_pow2

RewardFn = Callable[[Construction], float]


@dataclass(frozen=True)
class EnvState:
    construction: Construction
    step_index: int

    def __post_init__(self):
        if self.construction.n_frozen != self.step_index:
            raise ValueError("step index must equal the number of frozen bits")

    @property
    def mask(self) -> np.ndarray:
        return self.construction.mask

    @property
    def n_bits(self) -> int:
        return self.construction.n_bits

    @property
    def done(self) -> bool:
        return self.step_index == self.n_bits


@dataclass(frozen=True)
class Transition:
    state: EnvState
    action: int
    reward: float
    next_state: EnvState
    done: bool


def reset(n_bits: int) -> EnvState:
    _check_pow2(n_bits)
    return EnvState(Construction(np.zeros(n_bits, dtype=np.uint8)), 0)


def legal_actions(s: EnvState) -> np.ndarray:
    return np.flatnonzero(s.mask == 0)


def step(s: EnvState, a: int, reward_fn: RewardFn) -> Transition:
    a = int(a)
    if not 0 <= a < s.n_bits or s.mask[a]:
        raise ValueError(f"illegal action {a}")
    mask = s.mask.copy()
    mask[a] = 1
    nxt = EnvState(Construction(mask), s.step_index + 1)
    r = float(reward_fn(nxt.construction))
    return Transition(s, a, r, nxt, nxt.done)


class NestedPolarEnv:
    """Stateful wrapper around :func:`reset`/:func:`step` for rollouts."""

    def __init__(self, n_bits: int, reward_fn: RewardFn):
        self.n_bits = n_bits
        self.reward_fn = reward_fn
        self.state = reset(n_bits)

    def reset(self) -> np.ndarray:
        self.state = reset(self.n_bits)
        return self.observation()

    def observation(self) -> np.ndarray:
        return self.state.mask.astype(float)

    def legal_mask(self) -> np.ndarray:
        return self.state.mask == 0

    def step(self, a: int):
        tr = step(self.state, a, self.reward_fn)
        self.state = tr.next_state
        return self.observation(), tr.reward, tr.done


class TargetSetEnv(NestedPolarEnv):
    """Synthetic task with a known optimum.

    A hidden set of ``N/2`` indices should be frozen first.  Each of the
    first ``N/2`` actions earns 1 if it hits the set, so the episode return
    is the overlap of the first ``N/2`` frozen indices with the target and
    the optimum is ``N/2``.
    """

    def __init__(self, n_bits: int, target):
        super().__init__(n_bits, reward_fn=lambda c: 0.0)
        self.target = np.zeros(n_bits, dtype=bool)
        self.target[list(target)] = True
        if self.target.sum() != n_bits // 2:
            raise ValueError("target must hold exactly N/2 indices")

    @property
    def optimum(self) -> float:
        return float(self.n_bits // 2)

    def fitness(self, c: Construction) -> float:
        """Overlap of a frozen set with the target, the GA analogue of return."""
        return float(np.count_nonzero(c.mask.astype(bool) & self.target))

    def step(self, a: int):
        first_half = self.state.step_index < self.n_bits // 2
        tr = step(self.state, a, lambda c: 0.0)
        self.state = tr.next_state
        r = float(first_half and self.target[int(a)])
        return self.observation(), r, tr.done


def write_trajectory_csv(path, rows) -> None:
    """``rows`` of (episode, step, action, reward)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["episode", "step", "action", "reward"])
        for ep, st, a, r in rows:
            w.writerow([int(ep), int(st), int(a), repr(float(r))])
