import numpy as np
import pytest

from nestpolar.neural import (MASK_PENALTY, PARAM_NAMES, Adam, PolicyValueNet, PPOLoss,
                              PretrainLoss, _forward, adam_step, entropy, forward, gradients,
                              load_checkpoint, save_checkpoint)


def random_states(rng, n_states, n_bits, full_ok=False):
    s = (rng.random((n_states, n_bits)) < rng.random((n_states, 1))).astype(float)
    if not full_ok:
        for row in s:
            if row.all():
                row[rng.integers(n_bits)] = 0.0
    return s


def legal_actions_for(rng, states):
    return np.array([rng.choice(np.flatnonzero(s == 0)) for s in states])


def ppo_batch(rng, net, n=12):
    states = random_states(rng, n, net.n_bits)
    actions = legal_actions_for(rng, states)
    old = net.copy()
    for k in old.params:
        old.params[k] = old.params[k] + 0.05 * rng.standard_normal(old.params[k].shape)
    logp_old = _forward(old, states).logp[np.arange(n), actions]
    return {"states": states, "actions": actions, "logp_old": logp_old,
            "advantages": rng.standard_normal(n), "returns": rng.standard_normal(n)}


def numeric_grad(net, batch, spec, name, idx, h=1e-5):
    p = net.params[name]
    keep = p[idx]
    p[idx] = keep + h
    up = gradients(net, batch, spec)[0]
    p[idx] = keep - h
    down = gradients(net, batch, spec)[0]
    p[idx] = keep
    return (up - down) / (2 * h)


@pytest.mark.parametrize("spec", [PPOLoss(0.2, 0.5, 0.01), PretrainLoss(1.0), PretrainLoss(0.0)])
def test_gradients_match_finite_differences(spec):
    rng = np.random.default_rng(0)
    net = PolicyValueNet(8, 16, rng=rng, head_scale=1.0)
    batch = ppo_batch(rng, net)
    _, grads, _ = gradients(net, batch, spec)
    worst = 0.0
    for name in PARAM_NAMES:
        for idx in np.ndindex(net.params[name].shape):
            num = numeric_grad(net, batch, spec, name, idx)
            ana = grads[name][idx]
            worst = max(worst, abs(ana - num) / max(abs(ana), abs(num), 1e-3))
    assert worst < 1e-4


def test_uniform_when_heads_are_zero():
    net = PolicyValueNet(8, rng=np.random.default_rng(1))
    net.params["Wp"][:] = 0.0
    net.params["bp"][:] = 0.0
    s = np.array([1, 0, 0, 1, 0, 0, 0, 0], dtype=float)
    pmf, _ = forward(net, s)
    np.testing.assert_allclose(pmf[s == 0], 1 / 6, rtol=1e-12)
    assert pmf[s == 1].sum() == 0.0


def test_single_legal_action_gets_all_mass():
    net = PolicyValueNet(8, rng=np.random.default_rng(2), head_scale=5.0)
    s = np.ones(8)
    s[3] = 0
    pmf, _ = forward(net, s)
    assert pmf[3] >= 1 - 1e-6


def test_softmax_properties_on_random_states():
    rng = np.random.default_rng(3)
    net = PolicyValueNet(16, rng=rng, head_scale=3.0)
    states = random_states(rng, 1000, 16)
    pmf, value = forward(net, states)
    assert np.all(pmf >= 0)
    np.testing.assert_allclose(pmf.sum(axis=1), 1.0, atol=1e-9)
    assert np.all((pmf * states).sum(axis=1) <= 1e-6)
    assert np.all(states[np.arange(1000), pmf.argmax(axis=1)] == 0)
    assert value.shape == (1000,)


def test_entropy_of_uniform_policy():
    pmf = np.zeros((1, 8))
    pmf[0, :5] = 0.2
    logp = np.where(pmf > 0, np.log(np.where(pmf > 0, pmf, 1)), -MASK_PENALTY)
    assert abs(entropy(pmf, logp)[0] - np.log(5)) < 1e-9


def test_zero_advantage_gives_zero_policy_gradient():
    rng = np.random.default_rng(4)
    net = PolicyValueNet(8, 16, rng=rng, head_scale=1.0)
    batch = ppo_batch(rng, net)
    batch["advantages"] = np.zeros(len(batch["actions"]))
    _, grads, _ = gradients(net, batch, PPOLoss(0.2, 0.0, 0.0))
    for g in grads.values():
        assert np.all(g == 0.0)


@pytest.mark.parametrize("spec", [PPOLoss(), PretrainLoss()])
def test_duplicated_rows_leave_gradient_unchanged(spec):
    rng = np.random.default_rng(5)
    net = PolicyValueNet(8, 16, rng=rng, head_scale=1.0)
    batch = ppo_batch(rng, net, n=6)
    doubled = {k: np.concatenate([v, v]) for k, v in batch.items()}
    l1, g1, _ = gradients(net, batch, spec)
    l2, g2, _ = gradients(net, doubled, spec)
    assert l1 == pytest.approx(l2, rel=1e-12)
    for k in PARAM_NAMES:
        np.testing.assert_allclose(g1[k], g2[k], rtol=1e-10, atol=1e-15)


def test_adam_zero_gradient_is_noop():
    net = PolicyValueNet(8, rng=np.random.default_rng(6))
    before = {k: v.copy() for k, v in net.params.items()}
    opt = Adam(net, 1e-3)
    adam_step(net, {k: np.zeros_like(v) for k, v in net.params.items()}, 1e-3, opt)
    for k in PARAM_NAMES:
        np.testing.assert_array_equal(net.params[k], before[k])


def test_adam_first_step_moves_by_lr():
    net = PolicyValueNet(8, rng=np.random.default_rng(7))
    before = {k: v.copy() for k, v in net.params.items()}
    opt = Adam(net, 1e-3)
    opt.step(net, {k: np.full_like(v, 0.37) for k, v in net.params.items()})
    for k in PARAM_NAMES:
        np.testing.assert_allclose(before[k] - net.params[k], 1e-3, rtol=1e-6)


def test_adam_is_deterministic():
    rng = np.random.default_rng(8)
    grads = {k: rng.standard_normal(v.shape)
             for k, v in PolicyValueNet(8, rng=np.random.default_rng(0)).params.items()}
    nets = [PolicyValueNet(8, rng=np.random.default_rng(0)) for _ in range(2)]
    for net in nets:
        opt = Adam(net)
        for _ in range(3):
            opt.step(net, grads)
    for k in PARAM_NAMES:
        np.testing.assert_array_equal(nets[0].params[k], nets[1].params[k])


def test_default_hidden_width():
    assert PolicyValueNet(16).hidden == 32
    assert PolicyValueNet(256, rng=np.random.default_rng(0)).hidden == 1024


def test_checkpoint_round_trip_then_identical_update(tmp_path):
    rng = np.random.default_rng(9)
    net = PolicyValueNet(8, 16, rng=rng, head_scale=1.0)
    opt = Adam(net, 1e-3)
    batch = ppo_batch(rng, net)
    opt.step(net, gradients(net, batch, PPOLoss())[1])
    save_checkpoint(tmp_path / "c.npz", net, opt, extra={"note": "x"})
    net2, opt2, extra = load_checkpoint(tmp_path / "c.npz")
    assert extra == {"note": "x"} and opt2.t == opt.t
    for n, o in ((net, opt), (net2, opt2)):
        o.step(n, gradients(n, batch, PPOLoss())[1])
    for k in PARAM_NAMES:
        np.testing.assert_array_equal(net.params[k], net2.params[k])


def test_checkpoint_without_optimizer(tmp_path):
    net = PolicyValueNet(4, rng=np.random.default_rng(0))
    save_checkpoint(tmp_path / "c.npz", net)
    net2, opt, extra = load_checkpoint(tmp_path / "c.npz")
    assert opt is None and extra == {} and net2.hidden == net.hidden
