"""PPO training, supervised pretraining and the integrated pipeline."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Optional

import numpy as np

from .codec import Construction
from .construction import NestedSequence, sequence_from_trajectory
from .neural import (Adam, PPOLoss, PolicyValueNet, PretrainLoss, _forward,
                     gradients)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PpoConfig:
    gamma: float = 0.2
    lam: float = 0.95
    clip_epsilon: float = 0.2
    beta_c: float = 0.5
    beta_e: float = 0.0
    lr: float = 3e-4
    batch_size: int = 64
    rollout_steps: int = 256
    update_epochs: int = 4
    total_timesteps: int = 100_000
    normalize_advantages: bool = True

    def __post_init__(self):
        if not 0 <= self.gamma < 1:
            raise ValueError("gamma must lie in [0, 1)")
        if not 0 <= self.lam <= 1:
            raise ValueError("lam must lie in [0, 1]")
        if not self.clip_epsilon > 0:
            raise ValueError("clip_epsilon must be positive")
        if self.batch_size < 1 or self.rollout_steps < 1 or self.update_epochs < 1:
            raise ValueError("batch_size, rollout_steps and update_epochs must be >= 1")
        if self.total_timesteps < 0:
            raise ValueError("total_timesteps must be >= 0")


@dataclass
class RolloutBatch:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    logp_old: np.ndarray
    values_old: np.ndarray
    dones: np.ndarray
    last_value: float
    # (global timestep, episode return) for episodes finished in this batch
    episodes: list = field(default_factory=list)

    def __len__(self):
        return len(self.actions)


@dataclass
class EpisodeTracker:
    timestep: int = 0
    episode_return: float = 0.0
    episode_index: int = 0


@dataclass(frozen=True)
class PretrainExample:
    state: np.ndarray
    action_label: int


def sample_action(pmf: np.ndarray, rng: np.random.Generator) -> int:
    """Inverse-CDF draw; zero-probability entries can never be returned."""
    cdf = np.cumsum(pmf)
    return int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))


def collect_rollout(env, net: PolicyValueNet, n_steps: int, rng: np.random.Generator,
                    tracker: Optional[EpisodeTracker] = None) -> RolloutBatch:
    """Run the current policy for ``n_steps`` steps, resetting at episode ends.

    The environment keeps its state between calls, so consecutive rollouts
    continue the same episode stream.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    tracker = EpisodeTracker() if tracker is None else tracker
    n = env.n_bits
    states = np.empty((n_steps, n))
    actions = np.empty(n_steps, dtype=int)
    rewards = np.empty(n_steps)
    logp = np.empty(n_steps)
    values = np.empty(n_steps)
    dones = np.zeros(n_steps, dtype=bool)
    episodes = []
    obs = env.observation()
    for t in range(n_steps):
        fw = _forward(net, obs)
        a = sample_action(fw.pmf[0], rng)
        states[t] = obs
        actions[t] = a
        logp[t] = fw.logp[0, a]
        values[t] = fw.value[0]
        obs, r, done = env.step(a)
        rewards[t] = r
        dones[t] = done
        tracker.timestep += 1
        tracker.episode_return += r
        if done:
            episodes.append((tracker.timestep, tracker.episode_return))
            tracker.episode_index += 1
            tracker.episode_return = 0.0
            obs = env.reset()
    last_value = 0.0 if dones[-1] else float(_forward(net, obs).value[0])
    return RolloutBatch(states, actions, rewards, logp, values, dones, last_value, episodes)


def gae(batch: RolloutBatch, gamma: float, lam: float):
    """Generalized advantage estimates and the matching return targets."""
    T = len(batch)
    adv = np.zeros(T)
    running = 0.0
    for t in range(T - 1, -1, -1):
        nonterminal = 0.0 if batch.dones[t] else 1.0
        next_value = batch.last_value if t == T - 1 else batch.values_old[t + 1]
        delta = batch.rewards[t] + gamma * next_value * nonterminal - batch.values_old[t]
        running = delta + gamma * lam * nonterminal * running
        adv[t] = running
    return adv, adv + batch.values_old


def ppo_update(net: PolicyValueNet, opt: Adam, batch: RolloutBatch, advantages, returns,
               cfg: PpoConfig, rng: np.random.Generator) -> dict:
    """Several epochs of clipped-surrogate minibatch updates on one rollout."""
    adv = np.asarray(advantages, dtype=float)
    if cfg.normalize_advantages and len(adv) > 1:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    loss_spec = PPOLoss(cfg.clip_epsilon, cfg.beta_c, cfg.beta_e)
    T = len(batch)
    history = []
    first_ratio = None
    for _ in range(cfg.update_epochs):
        perm = rng.permutation(T)
        for lo in range(0, T, cfg.batch_size):
            idx = perm[lo:lo + cfg.batch_size]
            mb = {"states": batch.states[idx], "actions": batch.actions[idx],
                  "logp_old": batch.logp_old[idx], "advantages": adv[idx],
                  "returns": returns[idx]}
            loss, grads, info = gradients(net, mb, loss_spec)
            if not math.isfinite(loss) or not all(np.isfinite(g).all() for g in grads.values()):
                raise FloatingPointError(
                    f"non-finite PPO loss {loss!r} (policy={info['policy_loss']!r}, "
                    f"value={info['value_loss']!r}, entropy={info['entropy']!r})")
            if first_ratio is None:
                first_ratio = info["ratio"]
            opt.step(net, grads, cfg.lr)
            history.append((loss, info["policy_loss"], info["value_loss"], info["entropy"],
                            info["clip_fraction"], info["approx_kl"]))
    h = np.array(history)
    return {"loss": h[:, 0].mean(), "policy_loss": h[:, 1].mean(), "value_loss": h[:, 2].mean(),
            "entropy": h[:, 3].mean(), "clip_fraction": h[:, 4].mean(),
            "approx_kl": h[:, 5].mean(), "first_ratio": first_ratio, "updates": len(history)}


@dataclass
class LearningCurve:
    timesteps: list = field(default_factory=list)
    episode_rewards: list = field(default_factory=list)
    wall_times: list = field(default_factory=list)

    def __len__(self):
        return len(self.timesteps)

    def add(self, timestep: int, reward: float, wall: float) -> None:
        self.timesteps.append(int(timestep))
        self.episode_rewards.append(float(reward))
        self.wall_times.append(float(wall))

    def area(self, horizon: Optional[int] = None) -> float:
        """Mean episode reward over the episodes finished by ``horizon``."""
        r = [rw for t, rw in zip(self.timesteps, self.episode_rewards)
             if horizon is None or t <= horizon]
        return float(np.mean(r)) if r else 0.0

    def final(self, last: int = 10) -> float:
        return float(np.mean(self.episode_rewards[-last:])) if self.episode_rewards else 0.0

    def write_csv(self, path) -> None:
        """Deterministic columns only; wall clock goes to :meth:`write_timing_csv`."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["timestep", "episode_index", "episode_reward"])
            for i, (t, r) in enumerate(zip(self.timesteps, self.episode_rewards)):
                w.writerow([t, i, repr(r)])

    def write_timing_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["wall_time_s", "timestep", "episode_index", "episode_reward"])
            for i, (t, r, s) in enumerate(zip(self.timesteps, self.episode_rewards,
                                              self.wall_times)):
                w.writerow([f"{s:.3f}", t, i, repr(r)])


def train_rl(env, net: PolicyValueNet, cfg: PpoConfig, rng: np.random.Generator,
             opt: Optional[Adam] = None, callback: Optional[Callable] = None):
    """Alternate rollouts and PPO updates until ``cfg.total_timesteps``.

    Returns ``(net, learning_curve, opt)``.  ``callback(update_index,
    metrics, curve)`` runs after every update.
    """
    curve = LearningCurve()
    opt = Adam(net, cfg.lr) if opt is None else opt
    tracker = EpisodeTracker()
    env.reset()
    t0 = time.perf_counter()
    update = 0
    while tracker.timestep < cfg.total_timesteps:
        n_steps = min(cfg.rollout_steps, cfg.total_timesteps - tracker.timestep)
        batch = collect_rollout(env, net, n_steps, rng, tracker)
        for ts, ret in batch.episodes:
            curve.add(ts, ret, time.perf_counter() - t0)
        adv, ret = gae(batch, cfg.gamma, cfg.lam)
        metrics = ppo_update(net, opt, batch, adv, ret, cfg, rng)
        update += 1
        if callback is not None:
            callback(update, metrics, curve)
        log.debug("update %d t=%d loss=%.4f ent=%.3f", update, tracker.timestep,
                  metrics["loss"], metrics["entropy"])
    return net, curve, opt


def greedy_sequence(net: PolicyValueNet) -> NestedSequence:
    """Freeze the argmax-probability subchannel at every step."""
    mask = np.zeros(net.n_bits)
    actions = []
    for _ in range(net.n_bits):
        pmf = _forward(net, mask).pmf[0]
        a = int(np.argmax(pmf))
        actions.append(a)
        mask[a] = 1.0
    return sequence_from_trajectory(actions)


def generate_examples(populations) -> list:
    """State-action pairs from good constructions.

    Every good state yields, for each frozen index, the state without it
    labelled with that index.  Every ordered pair of good states whose
    frozen counts differ by one yields the smaller state labelled with each
    index the larger one adds.  Duplicates are kept.

    ``populations`` maps any key to a GA population or an iterable of
    :class:`Construction` (or ``(Construction, fitness)`` pairs); keys are
    ignored.
    """
    pool = []
    for members in (populations.values() if isinstance(populations, dict) else populations):
        for m in getattr(members, "members", members):
            c = m[0] if isinstance(m, tuple) else getattr(m, "construction", m)
            pool.append(c.mask.astype(np.uint8))
    examples = []
    for state in pool:
        for n in np.flatnonzero(state):
            data = state.copy()
            data[n] = 0
            examples.append(PretrainExample(data, int(n)))
    by_count: dict = {}
    for state in pool:
        by_count.setdefault(int(state.sum()), []).append(state)
    for state_s in pool:
        for state_d in by_count.get(int(state_s.sum()) + 1, []):
            for n in np.flatnonzero((state_d == 1) & (state_s == 0)):
                examples.append(PretrainExample(state_s.copy(), int(n)))
    return examples


def pretrain(net: PolicyValueNet, examples, epochs: int = 20, beta_epre: float = 1.0,
             rng: Optional[np.random.Generator] = None, lr: float = 3e-4,
             batch_size: int = 64, callback: Optional[Callable] = None) -> PolicyValueNet:
    """Fit the policy head to example labels by minibatch Adam."""
    if len(examples) == 0:
        raise ValueError("no pretraining examples")
    rng = np.random.default_rng(0) if rng is None else rng
    states = np.array([e.state for e in examples], dtype=float)
    labels = np.array([e.action_label for e in examples], dtype=int)
    opt = Adam(net, lr)
    spec = PretrainLoss(beta_epre)
    for epoch in range(epochs):
        perm = rng.permutation(len(labels))
        losses = []
        for lo in range(0, len(labels), batch_size):
            idx = perm[lo:lo + batch_size]
            loss, grads, info = gradients(net, {"states": states[idx], "actions": labels[idx]}, spec)
            opt.step(net, grads)
            losses.append(loss)
        if callback is not None:
            callback(epoch, float(np.mean(losses)))
    return net


@dataclass(frozen=True)
class PretrainConfig:
    epochs: int = 20
    beta_epre: float = 1.0
    lr: float = 3e-4
    batch_size: int = 64
    # Examples come from the best ``top_members`` of each population; 0 keeps all.
    top_members: int = 0


def best_members(populations, top: int) -> dict:
    """The ``top`` fittest members of each GA population (all when ``top`` is 0)."""
    out = {}
    for key, pop in populations.items():
        members = list(getattr(pop, "members", pop))
        out[key] = members[:top] if top else members
    return out


def train_integrated(env, net: PolicyValueNet, cfg: PpoConfig, rng: np.random.Generator,
                     populations=None, pre_cfg: PretrainConfig = PretrainConfig(),
                     pretrain_rng: Optional[np.random.Generator] = None,
                     on_pretrained: Optional[Callable] = None,
                     callback: Optional[Callable] = None):
    """GA populations -> examples -> policy pretraining -> PPO.

    With no populations the call is exactly :func:`train_rl`.  Pretraining
    draws only from ``pretrain_rng`` so the RL stage sees the same ``rng``
    either way.  Returns ``(net, curve, opt)``.
    """
    examples = generate_examples(best_members(populations, pre_cfg.top_members)) \
        if populations else []
    if examples:
        pretrain_rng = np.random.default_rng(1) if pretrain_rng is None else pretrain_rng
        pretrain(net, examples, pre_cfg.epochs, pre_cfg.beta_epre, pretrain_rng,
                 pre_cfg.lr, pre_cfg.batch_size)
        net.reset_value_head(pretrain_rng)
        if on_pretrained is not None:
            on_pretrained(net, examples)
    return train_rl(env, net, cfg, rng, callback=callback)
