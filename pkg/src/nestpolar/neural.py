"""Policy/value network with hand-written backpropagation.

Two tanh layers are shared by a masked-softmax policy head (one logit per
subchannel) and a scalar value head.  Already-frozen subchannels have
``MASK_PENALTY`` subtracted from their logits before the softmax.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

MASK_PENALTY = 1e9
PARAM_NAMES = ("W1", "b1", "W2", "b2", "Wp", "bp", "Wv", "bv")
CHECKPOINT_VERSION = 1


class PolicyValueNet:
    def __init__(self, n_bits: int, hidden: Optional[int] = None,
                 rng: Optional[np.random.Generator] = None, head_scale: float = 0.01):
        if hidden is None:
            hidden = 1024 if n_bits == 256 else 2 * n_bits
        rng = np.random.default_rng(0) if rng is None else rng
        self.n_bits = n_bits
        self.hidden = hidden
        self.params = {
            "W1": rng.standard_normal((n_bits, hidden)) / np.sqrt(n_bits),
            "b1": np.zeros(hidden),
            "W2": rng.standard_normal((hidden, hidden)) / np.sqrt(hidden),
            "b2": np.zeros(hidden),
            "Wp": head_scale * rng.standard_normal((hidden, n_bits)) / np.sqrt(hidden),
            "bp": np.zeros(n_bits),
            "Wv": head_scale * rng.standard_normal((hidden, 1)) / np.sqrt(hidden),
            "bv": np.zeros(1),
        }

    def reset_value_head(self, rng: np.random.Generator, head_scale: float = 0.01) -> None:
        self.params["Wv"] = head_scale * rng.standard_normal((self.hidden, 1)) / np.sqrt(self.hidden)
        self.params["bv"] = np.zeros(1)

    def copy(self) -> "PolicyValueNet":
        other = object.__new__(PolicyValueNet)
        other.n_bits, other.hidden = self.n_bits, self.hidden
        other.params = {k: v.copy() for k, v in self.params.items()}
        return other

    def n_params(self) -> int:
        return sum(v.size for v in self.params.values())


@dataclass
class Forward:
    states: np.ndarray
    h1: np.ndarray
    h2: np.ndarray
    logp: np.ndarray
    pmf: np.ndarray
    value: np.ndarray


def _forward(net: PolicyValueNet, states) -> Forward:
    p = net.params
    s = np.atleast_2d(np.asarray(states, dtype=float))
    h1 = np.tanh(s @ p["W1"] + p["b1"])
    h2 = np.tanh(h1 @ p["W2"] + p["b2"])
    z = h2 @ p["Wp"] + p["bp"] - MASK_PENALTY * s
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    pmf = np.exp(logp)
    value = (h2 @ p["Wv"] + p["bv"])[:, 0]
    return Forward(s, h1, h2, logp, pmf, value)


def forward(net: PolicyValueNet, states):
    """Return ``(pmf, value)``; batched input gives batched output."""
    out = _forward(net, states)
    if np.asarray(states).ndim == 1:
        return out.pmf[0], float(out.value[0])
    return out.pmf, out.value


def entropy(pmf, logp) -> np.ndarray:
    return -np.where(pmf > 0, pmf * logp, 0.0).sum(axis=1)


@dataclass(frozen=True)
class PPOLoss:
    """Clipped surrogate + weighted value error - weighted entropy."""

    clip_epsilon: float = 0.2
    beta_c: float = 0.5
    beta_e: float = 0.0


@dataclass(frozen=True)
class PretrainLoss:
    """Cross entropy to the action label - weighted entropy."""

    beta_e: float = 1.0


def gradients(net: PolicyValueNet, batch: dict, loss_spec):
    """Mean loss over ``batch`` and its gradient for every parameter.

    ``batch`` needs ``states`` and ``actions``; the PPO loss also needs
    ``logp_old``, ``advantages`` and ``returns``.  Returns
    ``(loss, grads, info)``.
    """
    fw = _forward(net, batch["states"])
    actions = np.asarray(batch["actions"], dtype=int)
    B = len(actions)
    rows = np.arange(B)
    logp_a = fw.logp[rows, actions]
    ent = entropy(fw.pmf, fw.logp)
    # d(-H)/dz = pmf * (logp + H); masked entries have pmf == 0.
    d_negent = np.where(fw.pmf > 0, fw.pmf * (fw.logp + ent[:, None]), 0.0)
    onehot = np.zeros_like(fw.pmf)
    onehot[rows, actions] = 1.0
    d_value = np.zeros(B)

    if isinstance(loss_spec, PPOLoss):
        adv = np.asarray(batch["advantages"], dtype=float)
        ret = np.asarray(batch["returns"], dtype=float)
        ratio = np.exp(logp_a - np.asarray(batch["logp_old"], dtype=float))
        eps = loss_spec.clip_epsilon
        clipped = np.clip(ratio, 1.0 - eps, 1.0 + eps)
        surr = np.minimum(ratio * adv, clipped * adv)
        unclipped_active = ratio * adv <= clipped * adv
        policy_loss = -surr.mean()
        value_err = ret - fw.value
        value_loss = (value_err**2).mean()
        loss = policy_loss + loss_spec.beta_c * value_loss - loss_spec.beta_e * ent.mean()
        d_logp_a = -adv * ratio * unclipped_active / B
        dz = d_logp_a[:, None] * (onehot - fw.pmf) + loss_spec.beta_e * d_negent / B
        d_value = -2.0 * loss_spec.beta_c * value_err / B
        info = {
            "policy_loss": policy_loss, "value_loss": value_loss, "entropy": ent.mean(),
            "clip_fraction": float(np.mean(np.abs(ratio - 1.0) > eps)),
            "approx_kl": float(np.mean(np.asarray(batch["logp_old"]) - logp_a)),
            "ratio": ratio,
        }
    elif isinstance(loss_spec, PretrainLoss):
        ce = -logp_a.mean()
        loss = ce - loss_spec.beta_e * ent.mean()
        dz = (fw.pmf - onehot) / B + loss_spec.beta_e * d_negent / B
        info = {"cross_entropy": ce, "entropy": ent.mean(),
                "accuracy": float(np.mean(fw.pmf.argmax(axis=1) == actions))}
    else:
        raise TypeError(f"unknown loss spec {loss_spec!r}")

    p = net.params
    g = {
        "Wp": fw.h2.T @ dz,
        "bp": dz.sum(axis=0),
        "Wv": fw.h2.T @ d_value[:, None],
        "bv": np.array([d_value.sum()]),
    }
    dh2 = dz @ p["Wp"].T + d_value[:, None] @ p["Wv"].T
    da2 = dh2 * (1.0 - fw.h2**2)
    g["W2"] = fw.h1.T @ da2
    g["b2"] = da2.sum(axis=0)
    da1 = (da2 @ p["W2"].T) * (1.0 - fw.h1**2)
    g["W1"] = fw.states.T @ da1
    g["b1"] = da1.sum(axis=0)
    return float(loss), g, info


class Adam:
    """Bias-corrected Adam holding first/second moments per parameter."""

    def __init__(self, net: PolicyValueNet, lr: float = 3e-4,
                 betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in net.params.items()}
        self.v = {k: np.zeros_like(v) for k, v in net.params.items()}

    def step(self, net: PolicyValueNet, grads: dict, lr: Optional[float] = None) -> None:
        lr = self.lr if lr is None else lr
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for k in PARAM_NAMES:
            g = grads[k]
            self.m[k] = self.b1 * self.m[k] + (1.0 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1.0 - self.b2) * g * g
            net.params[k] = net.params[k] - lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def adam_step(net: PolicyValueNet, grads: dict, lr: float, opt: Adam) -> PolicyValueNet:
    opt.step(net, grads, lr)
    return net


def save_checkpoint(path, net: PolicyValueNet, opt: Optional[Adam] = None, extra=None) -> None:
    meta = {"version": CHECKPOINT_VERSION, "n_bits": net.n_bits, "hidden": net.hidden,
            "has_optimizer": opt is not None, "extra": extra or {}}
    arrays = {f"param/{k}": v for k, v in net.params.items()}
    if opt is not None:
        meta["adam"] = {"lr": opt.lr, "b1": opt.b1, "b2": opt.b2, "eps": opt.eps, "t": opt.t}
        arrays.update({f"m/{k}": v for k, v in opt.m.items()})
        arrays.update({f"v/{k}": v for k, v in opt.v.items()})
    arrays["meta"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path):
    """Return ``(net, opt_or_None, extra)``."""
    with np.load(Path(path)) as data:
        meta = json.loads(data["meta"].tobytes().decode())
        if meta["version"] != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta['version']}")
        net = object.__new__(PolicyValueNet)
        net.n_bits, net.hidden = meta["n_bits"], meta["hidden"]
        net.params = {k: data[f"param/{k}"].copy() for k in PARAM_NAMES}
        opt = None
        if meta["has_optimizer"]:
            a = meta["adam"]
            opt = Adam(net, a["lr"], (a["b1"], a["b2"]), a["eps"])
            opt.t = a["t"]
            opt.m = {k: data[f"m/{k}"].copy() for k in PARAM_NAMES}
            opt.v = {k: data[f"v/{k}"].copy() for k in PARAM_NAMES}
    return net, opt, meta.get("extra", {})
