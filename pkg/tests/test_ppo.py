import math

import numpy as np
import pytest

from pgg_act import kernels
from pgg_act.game import cumulative_payoffs
from pgg_act.lattice import build_lattice
from pgg_act.nn import (NonFiniteError, forward, init_opt, init_params,
                        ppo_objective_and_grad)
from pgg_act.ppo import (RolloutBuffer, collect_rollout, compute_gae, encode_states,
                         normalize_advantages, ppo_update, sample_actions)
from pgg_act.verify import gae_double_sum


def zero_params(hidden=4):
    p = init_params(3, hidden, np.random.default_rng(0))
    return p.map(np.zeros_like)


def test_encode_uniform_fields():
    lat = build_lattice(5)
    for value, expected in ((0, 0.0), (1, 1.0)):
        s = np.full(25, value, np.int8)
        obs = encode_states(s, cumulative_payoffs(s, lat, 4.0), lat, 4.0)
        np.testing.assert_array_equal(obs, np.full((25, 3), expected))


def test_encode_lone_cooperator():
    lat = build_lattice(5)
    s = np.zeros(25, np.int8)
    s[12] = 1
    obs = encode_states(s, cumulative_payoffs(s, lat, 5.0), lat, 5.0)
    np.testing.assert_array_equal(obs[12], [1.0, 0.0, 0.0])
    np.testing.assert_array_equal(obs[7], [0.0, 0.25, 2.0 / 20.0])
    # At r=4 the lone cooperator earns -1, i.e. -1/15 after scaling.
    obs4 = encode_states(s, cumulative_payoffs(s, lat, 4.0), lat, 4.0)
    assert obs4[12, 2] == pytest.approx(-1.0 / 15.0)


def test_encode_bounded():
    lat = build_lattice(8)
    rng = np.random.default_rng(0)
    for r in (1.5, 3.0, 6.0):
        s = rng.integers(0, 2, 64).astype(np.int8)
        obs = encode_states(s, cumulative_payoffs(s, lat, r), lat, r)
        assert obs.shape == (64, 3) and np.abs(obs).max() <= 1.0


def test_gae_lambda_zero_is_td_error():
    rew, val = np.array([1.0, 2.0, 3.0]), np.array([0.5, 0.1, -0.2])
    adv, tgt = compute_gae(rew, val, 0.7, 0.9, 0.0)
    np.testing.assert_array_equal(adv, rew + 0.9 * np.array([0.1, -0.2, 0.7]) - val)
    np.testing.assert_array_equal(tgt, adv + val)


def test_gae_single_step():
    adv, tgt = compute_gae([1.0], [0.25], 0.0, 0.96, 0.95)
    assert adv[0] == 0.75 and tgt[0] == 1.0


@pytest.mark.parametrize("gamma", [0.0, 0.5, 0.95, 0.99])
@pytest.mark.parametrize("lam", [0.0, 0.5, 0.95, 0.99])
def test_gae_matches_double_sum(gamma, lam):
    rng = np.random.default_rng(int(gamma * 100) * 7 + int(lam * 100))
    for _ in range(25):
        T = int(rng.integers(1, 9))
        rew, val, boot = rng.normal(size=T), rng.normal(size=T), float(rng.normal())
        adv, _ = compute_gae(rew, val, boot, gamma, lam)
        np.testing.assert_allclose(adv, gae_double_sum(rew, val, boot, gamma, lam), rtol=0, atol=1e-12)


def test_gae_population_layout_and_backends():
    rng = np.random.default_rng(0)
    rew, val, boot = rng.normal(size=(6, 40)), rng.normal(size=(6, 40)), rng.normal(size=40)
    adv, _ = compute_gae(rew, val, boot, 0.96, 0.95)
    for j in (0, 17, 39):
        np.testing.assert_allclose(adv[:, j], gae_double_sum(rew[:, j], val[:, j], boot[j], 0.96, 0.95),
                                   atol=1e-12)
    ref = kernels.gae_numpy(rew, val, boot, 0.96, 0.95)
    if kernels.gae_numba is not None:
        for a, b in zip(ref, kernels.gae_numba(rew, val, boot, 0.96, 0.95)):
            assert np.array_equal(a, b)


def test_gae_rejects_bad_input():
    with pytest.raises(ValueError):
        compute_gae([1.0, 2.0], [0.0], 0.0, 0.9, 0.9)
    with pytest.raises(ValueError):
        compute_gae([1.0], [0.0], 0.0, 1.0, 0.9)


def test_normalize_advantages():
    adv = normalize_advantages(np.random.default_rng(0).normal(3.0, 2.0, 1000))
    assert abs(adv.mean()) < 1e-12 and abs(adv.std() - 1.0) < 1e-6


def test_saturated_policy_always_cooperates():
    lat = build_lattice(6)
    p = zero_params()
    p.b_actor[:] = [-50.0, 50.0]
    _, s, _, fractions = collect_rollout(np.zeros(36, np.int8), lat, p, 4.0, 5, np.random.default_rng(0))
    np.testing.assert_array_equal(fractions, 1.0)
    assert (s == 1).all()


def test_uniform_policy_first_step():
    lat = build_lattice(50)
    s0 = np.zeros(lat.N, np.int8)
    _, _, _, fractions = collect_rollout(s0, lat, zero_params(), 4.0, 1, np.random.default_rng(3))
    assert abs(fractions[0] - 0.5) < 3 * math.sqrt(0.25 / lat.N)


def test_rollout_deterministic():
    lat = build_lattice(8)
    p = init_params(3, 16, np.random.default_rng(0))
    s0 = np.random.default_rng(1).integers(0, 2, 64).astype(np.int8)
    a = collect_rollout(s0, lat, p, 4.0, 4, np.random.default_rng(5))[0]
    b = collect_rollout(s0, lat, p, 4.0, 4, np.random.default_rng(5))[0]
    for name in ("states", "actions", "logp", "values", "rewards"):
        assert np.array_equal(getattr(a, name), getattr(b, name))
    assert a.states.shape == (4, 64, 3)


def test_one_uniform_per_agent():
    p = init_params(3, 4, np.random.default_rng(0))
    rng = np.random.default_rng(9)
    sample_actions(p, np.zeros((10, 3)), rng)
    ref = np.random.default_rng(9)
    ref.random(10)
    assert rng.random() == ref.random()


def _buffer(p, lat, seed=0, horizon=3):
    rng = np.random.default_rng(seed)
    s0 = rng.integers(0, 2, lat.N).astype(np.int8)
    buf, s, pay, _ = collect_rollout(s0, lat, p, 4.0, horizon, rng)
    _, _, boot = forward(p, encode_states(s, pay, lat, 4.0))
    buf.advantages, buf.targets = compute_gae(buf.rewards, buf.values, boot, 0.96, 0.95)
    return buf


def test_first_pass_ratio_is_one():
    lat = build_lattice(10)
    p = init_params(3, 16, np.random.default_rng(0))
    data = _buffer(p, lat).flat()
    _, rep = ppo_objective_and_grad(p, data["states"], data["actions"], data["old_logp"],
                                    data["advantages"], data["targets"], 0.2, 0.5, 0.001)
    assert rep.mean_ratio == pytest.approx(1.0, abs=1e-12)
    assert rep.clip_fraction == 0.0


def test_uniform_policy_entropy_is_ln2():
    p = zero_params()
    _, rep = ppo_objective_and_grad(p, np.zeros((4, 3)), [0, 1, 0, 1], np.full(4, math.log(0.5)),
                                    np.ones(4), np.zeros(4), 0.2, 0.5, 0.001)
    assert rep.entropy == pytest.approx(math.log(2), abs=1e-15)
    assert rep.clip == pytest.approx(1.0)


def test_clipped_surrogate_example():
    # Uniform policy, behaviour prob 0.5/1.5 for the taken action: ratio 1.5.
    p = zero_params()
    old = np.array([math.log(0.5 / 1.5)])
    _, rep = ppo_objective_and_grad(p, np.zeros((1, 3)), [1], old, [1.0], [0.0], 0.2, 0.5, 0.001)
    assert rep.mean_ratio == pytest.approx(1.5)
    assert rep.clip == pytest.approx(1.2, abs=1e-12)


def test_objective_weighting():
    rng = np.random.default_rng(0)
    p = init_params(3, 8, rng)
    states, actions = rng.normal(size=(20, 3)), rng.integers(0, 2, 20)
    old, adv, tgt = rng.normal(-0.7, 0.1, 20), rng.normal(size=20), rng.normal(size=20)
    _, rep = ppo_objective_and_grad(p, states, actions, old, adv, tgt, 0.2, 0.5, 0.001)
    assert rep.total == pytest.approx(rep.clip - 0.5 * rep.value + 0.001 * rep.entropy, abs=1e-12)


def test_update_raises_probability_of_advantaged_action():
    lat = build_lattice(6)
    p = init_params(3, 8, np.random.default_rng(1))
    n = lat.N
    states = np.random.default_rng(2).normal(size=(1, n, 3))
    actions = np.ones((1, n), np.int8)
    logits, _, values = forward(p, states[0])
    logp = logits[:, 1] - np.log(np.exp(logits).sum(axis=1))
    buf = RolloutBuffer(states, actions, logp[None], values[None], np.zeros((1, n)),
                        advantages=np.ones((1, n)), targets=values[None])
    p2, _, _ = ppo_update(p, init_opt(p, 0.01), buf, 0.2, 0.0, 0.0, 2, 64,
                          np.random.default_rng(0), normalize=False)
    assert forward(p2, states[0])[1][:, 1].mean() > forward(p, states[0])[1][:, 1].mean()



def test_minibatch_zero_means_whole_buffer():
    lat = build_lattice(5)
    p = init_params(3, 8, np.random.default_rng(0))
    buf = _buffer(p, lat)
    whole, _, _ = ppo_update(p, init_opt(p, 0.01), buf, 0.2, 0.5, 0.001, 1, 0,
                             np.random.default_rng(3))
    big, _, _ = ppo_update(p, init_opt(p, 0.01), buf, 0.2, 0.5, 0.001, 1, 10 ** 6,
                           np.random.default_rng(3))
    for name, arr in whole.arrays().items():
        assert np.array_equal(arr, getattr(big, name))

def test_update_keeps_params_on_non_finite():
    lat = build_lattice(5)
    p = init_params(3, 8, np.random.default_rng(0))
    buf = _buffer(p, lat)
    buf.advantages = buf.advantages.copy()
    buf.advantages[0, 0] = np.nan
    before = p.copy()
    with pytest.raises(NonFiniteError):
        ppo_update(p, init_opt(p, 0.01), buf, 0.2, 0.5, 0.001, 1, 16, np.random.default_rng(0),
                   normalize=False)
    for name, arr in before.arrays().items():
        assert np.array_equal(arr, getattr(p, name))


def test_buffer_extend_keeps_last_steps():
    lat = build_lattice(5)
    p = init_params(3, 8, np.random.default_rng(0))
    a, b = _buffer(p, lat, 0, 3), _buffer(p, lat, 1, 2)
    c = a.extend(b, keep=4)
    assert c.horizon == 4
    np.testing.assert_array_equal(c.rewards[-2:], b.rewards)
    np.testing.assert_array_equal(c.rewards[:2], a.rewards[1:])
