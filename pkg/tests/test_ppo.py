"""GAE, clipped-surrogate arithmetic, and the ppo_update contract."""
import numpy as np
import pytest

from mazenav.errors import NonFiniteLoss
from mazenav.nn import Tensor
from mazenav.policy import PolicyNet
from mazenav.ppo import (
    EpisodeTrace,
    PPOConfig,
    _clip,
    _elementwise_min,
    gae_advantages,
    ppo_update,
)
from mazenav.rewards import RewardMode
from mazenav.training import _optimizer


def test_gae_lambda_one_terminal_reward_is_discounted_return():
    """lambda=1 with a single terminal reward and zero values reduces to
    discounted Monte-Carlo returns."""
    T, gamma, r = 6, 0.9, 2.0
    rewards = np.zeros(T)
    rewards[-1] = r
    adv, ret = gae_advantages(rewards, np.zeros(T), gamma, lam=1.0)
    for t in range(T):
        assert adv[t] == pytest.approx(r * gamma ** (T - 1 - t))
    assert np.allclose(ret, adv)


def test_gae_hand_example():
    rewards = np.array([1.0, 2.0])
    values = np.array([0.5, 1.0])
    gamma, lam = 0.9, 0.8
    delta1 = 2.0 - 1.0
    delta0 = 1.0 + 0.9 * 1.0 - 0.5
    adv, ret = gae_advantages(rewards, values, gamma, lam)
    assert adv[1] == pytest.approx(delta1)
    assert adv[0] == pytest.approx(delta0 + gamma * lam * delta1)
    assert ret[0] == pytest.approx(adv[0] + 0.5)


def test_clip_surrogate_arithmetic():
    # rho = 1.5, eps = 0.1, A = +1 -> min(1.5, 1.1) = 1.1
    rho = Tensor(np.array([1.5]), requires_grad=True)
    adv = Tensor(np.array([1.0]))
    clipped = _clip(rho, 0.9, 1.1)
    surr = _elementwise_min(rho * adv, clipped * adv)
    assert surr.data[0] == pytest.approx(1.1)
    surr.backward(np.ones(1))
    # the clipped branch is active and flat in rho
    assert rho.grad[0] == 0.0


def test_clip_gradient_inside_band():
    rho = Tensor(np.array([1.05]), requires_grad=True)
    out = _clip(rho, 0.9, 1.1)
    out.backward(np.ones(1))
    assert out.data[0] == pytest.approx(1.05)
    assert rho.grad[0] == 1.0


def _toy_trace(net, T=12, seed=0, nav=False):
    from mazenav import maze as mz, reachability as rn
    from mazenav.rewards import RewardConfig, RewardMode as RM
    from mazenav import training as tr

    text = "#######\n#S....#\n#.###.#\n#.....#\n#######\n"
    maze = mz.load_map(text, map_seed=1)
    reach = rn.ReachabilityModel(n_rays=net.n_rays, seed=3)
    caches = tr.Caches.build(maze, reach, net.n_rays)
    res = tr.run_exploration_episode(
        maze, reach, net, RewardConfig(RM.CURIOSITY_DISCRETE), T, seed=seed, caches=caches
    )
    return res.trace


def test_first_epoch_full_batch_clip_fraction_zero():
    """With identical parameters, no dropout, and one full-batch epoch the
    ratio is 1 for every step, so nothing clips."""
    net = PolicyNet(n_rays=16, seed=0)
    trace = _toy_trace(net)
    cfg = PPOConfig(
        episodes_per_batch=1,
        steps_per_episode=len(trace),
        ppo_epochs=1,
        minibatch_size=10_000,
        dropout_p=0.0,
    )
    opt = _optimizer(net, cfg, "explore", freeze_shared=False)
    stats = ppo_update([trace], net, cfg, opt, "explore", np.random.default_rng(0))
    assert stats["clip_fraction"] == 0.0
    assert 0.0 <= stats["entropy"] <= np.log(3) + 1e-9


def test_ppo_update_changes_parameters_deterministically():
    def run():
        net = PolicyNet(n_rays=16, seed=1)
        trace = _toy_trace(net, seed=5)
        cfg = PPOConfig(ppo_epochs=2, minibatch_size=8, dropout_p=0.1)
        opt = _optimizer(net, cfg, "explore", freeze_shared=False)
        stats = ppo_update([trace], net, cfg, opt, "explore", np.random.default_rng(2))
        return stats, [p.data.copy() for p in net.parameters()]

    stats1, params1 = run()
    stats2, params2 = run()
    assert stats1 == stats2
    assert all(np.array_equal(a, b) for a, b in zip(params1, params2))
    fresh = PolicyNet(n_rays=16, seed=1)
    changed = any(
        not np.array_equal(a.data, b) for a, b in zip(fresh.parameters(), params1)
    )
    assert changed


def test_nonfinite_rewards_raise():
    net = PolicyNet(n_rays=16, seed=0)
    trace = _toy_trace(net)
    trace.rewards[3] = np.nan
    cfg = PPOConfig(ppo_epochs=1, minibatch_size=64, dropout_p=0.0)
    opt = _optimizer(net, cfg, "explore", freeze_shared=False)
    with pytest.raises(NonFiniteLoss):
        ppo_update([trace], net, cfg, opt, "explore", np.random.default_rng(0))


def test_ppo_config_validation():
    with pytest.raises(AssertionError):
        PPOConfig(gamma=0.0)
    with pytest.raises(AssertionError):
        PPOConfig(clip_eps=0.0)
    cfg = PPOConfig()
    assert cfg.gamma == 0.99 and cfg.clip_eps == 0.1 and cfg.ppo_epochs == 4


def test_trace_mode_and_length():
    net = PolicyNet(n_rays=16, seed=0)
    trace = _toy_trace(net, T=9)
    assert len(trace) == 9
    assert trace.mode == RewardMode.CURIOSITY_DISCRETE
    assert trace.observations.shape == (9, 16, 3)
    assert isinstance(trace, EpisodeTrace)
