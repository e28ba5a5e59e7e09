import itertools
import math

import numpy as np
import pytest
from scipy import stats

from v2xshare.baseline import ActionSpaceTooLarge, brute_force, random_policy
from v2xshare.env import EnvConfig, V2XEnv

from conftest import fixed_realization, random_realization


def scalar_sum_rate(channels, real, cfg):
    """Plain-loop reward: every term written out separately."""
    pv, pc, noise, B = cfg.v2v_power_w, cfg.v2i_power_w, cfg.noise_power_w, cfg.bandwidth_hz
    total = 0.0
    for k, n in enumerate(channels):
        interf = pc * real.g_cue[n, k]
        for l, m in enumerate(channels):
            if l != k and m == n:
                interf += pv * real.h_cross[l, k, n]
        total += B * math.log2(1 + pv * real.h[k, n] / (interf + noise))
    return total


def nested_loop_best(real, cfg):
    K, N = cfg.n_links, cfg.n_channels
    best, best_idx = -1.0, None
    for combo in itertools.product(range(N), repeat=K):
        r = scalar_sum_rate(combo, real, cfg)
        idx = sum(c * N ** k for k, c in enumerate(combo))
        if r > best:
            best, best_idx = r, idx
    return best_idx, best


def test_single_link_is_argmax(unit_config):
    cfg = EnvConfig(n_links=1, n_channels=4, v2v_power_dbm=30.0, v2i_power_dbm=30.0,
                    noise_power_dbm=-70.0, bandwidth_hz=1.0)
    real = fixed_realization([[1e-9, 5e-9, 2e-9, 4e-9]], np.zeros((1, 1, 4)),
                             np.full((4, 1), 1e-10))
    res = brute_force(real, cfg)
    assert res.best_action == 1
    assert res.best_reward == pytest.approx(math.log2(1 + 5e-9 / (1e-10 + 1e-10)), rel=1e-12)


def test_two_links_hand_example(unit_config):
    # sharing a channel kills both links through strong cross gain
    real = fixed_realization([[1e-9, 1e-9], [1e-9, 1e-9]], np.full((2, 2, 2), 1e-6),
                             np.full((2, 2), 1e-10))
    res = brute_force(real, unit_config, keep_table=True)
    assert res.best_action in (1, 2)
    assert res.best_reward == pytest.approx(2 * math.log2(1 + 1e-9 / 2e-10), rel=1e-12)
    assert res.reward_table.shape == (4,)


@pytest.mark.parametrize("K,N", [(2, 2), (2, 4), (3, 3), (4, 4)])
def test_matches_independent_enumerator(K, N):
    cfg = EnvConfig(n_links=K, n_channels=N)
    rng = np.random.default_rng(K * 10 + N)
    for _ in range(3):
        real = random_realization(rng, K, N)
        idx, best = nested_loop_best(real, cfg)
        res = brute_force(real, cfg)
        assert res.best_reward == pytest.approx(best, rel=1e-12)
        assert res.best_action == idx


def test_optimal_dominates_every_action():
    cfg = EnvConfig()
    rng = np.random.default_rng(1)
    real = random_realization(rng, 4, 4)
    res = brute_force(real, cfg, keep_table=True)
    assert np.all(res.reward_table <= res.best_reward)
    for a in rng.integers(256, size=20):
        combo = [(a // 4 ** k) % 4 for k in range(4)]
        assert scalar_sum_rate(combo, real, cfg) <= res.best_reward * (1 + 1e-12)


def test_env_realization_agrees_with_step():
    cfg = EnvConfig(n_links=2, n_channels=3)
    env = V2XEnv(cfg, 5)
    env.reset()
    res = brute_force(env.realization, cfg, keep_table=True)
    out = env.step_action(res.best_action)
    assert out.reward == pytest.approx(res.best_reward, rel=1e-12)


def test_refuses_huge_action_space():
    cfg = EnvConfig(n_links=8, n_channels=8)
    real = random_realization(np.random.default_rng(0), 1, 1)
    with pytest.raises(ActionSpaceTooLarge):
        brute_force(real, cfg)


def test_random_policy_uniform_chi_square():
    rng = np.random.default_rng(2)
    counts = np.bincount([random_policy(rng, 4, 4) for _ in range(100_000)], minlength=256)
    assert stats.chisquare(counts).pvalue > 0.01


def test_random_policy_single_channel():
    rng = np.random.default_rng(3)
    assert {random_policy(rng, 4, 1) for _ in range(50)} == {0}


def test_random_policy_reproducible():
    a = [random_policy(np.random.default_rng(7), 3, 5) for _ in range(3)]
    b = [random_policy(np.random.default_rng(7), 3, 5) for _ in range(3)]
    assert a == b
    rng = np.random.default_rng(8)
    assert all(0 <= random_policy(rng, 3, 5) < 125 for _ in range(1000))
