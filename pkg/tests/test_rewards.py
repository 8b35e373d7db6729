"""Reward provider arithmetic and the self-supervision firewall."""
import numpy as np
import pytest

from mazenav.errors import ModeMismatch
from mazenav.memory import EMPTY_SCORE
from mazenav.rewards import (
    EXPLORATION_MODES,
    NAVIGATION_MODES,
    SELF_SUPERVISED_MODES,
    RewardConfig,
    RewardMode,
    curiosity_reward,
    curiosity_reward_continuous,
    dense_nav_reward,
    oracle_coverage_reward,
    oracle_distance_reward,
    sparse_nav_reward,
)


def test_discrete_curiosity_exact():
    assert curiosity_reward(True, alpha=1.0) == 1.0
    assert curiosity_reward(False, alpha=1.0) == 0.0
    assert curiosity_reward(True, alpha=2.5) == 2.5


def test_continuous_curiosity_formula():
    # alpha * (beta - s)
    assert curiosity_reward_continuous(0.3, alpha=1.0, beta=10.0) == pytest.approx(9.7)
    assert curiosity_reward_continuous(1.0, alpha=2.0, beta=10.0) == pytest.approx(18.0)


def test_continuous_curiosity_empty_buffer_sentinel():
    """The -inf empty-buffer score counts as 0, not as an infinite bonus."""
    assert curiosity_reward_continuous(EMPTY_SCORE, alpha=1.0, beta=10.0) == 10.0


def test_sparse_nav_strict_threshold():
    assert sparse_nav_reward(0.5, beta=10.0, tau=0.5) == 0.0
    assert sparse_nav_reward(0.5 + 1e-12, beta=10.0, tau=0.5) == 10.0
    assert sparse_nav_reward(0.49, beta=10.0, tau=0.5) == 0.0


def test_dense_reward_hand_cases():
    assert dense_nav_reward([], 3) == 0.0
    assert dense_nav_reward([5], 3) == 2.0
    assert dense_nav_reward([5, 3], 4) == 0.0
    assert dense_nav_reward([5, 3], 1) == 2.0


def test_dense_reward_unreachable_handling():
    # None never enters the running min; None current distance earns nothing
    assert dense_nav_reward([None, 5], 4) == 1.0
    assert dense_nav_reward([5], None) == 0.0
    assert dense_nav_reward([None], 3) == 0.0
    assert dense_nav_reward([None, None], None) == 0.0


def test_dense_telescoping_random_fixtures():
    """Sum of dense rewards = first reachable distance - overall min, on 100
    random distance streams with unreachable gaps mixed in."""
    rng = np.random.default_rng(7)
    for _ in range(100):
        T = int(rng.integers(1, 60))
        stream = [
            None if rng.random() < 0.2 else int(rng.integers(0, 30)) for _ in range(T)
        ]
        history: list = []
        total = 0.0
        for l_t in stream:
            total += dense_nav_reward(history, l_t)
            history.append(l_t)
        reachable = [l for l in stream if l is not None]
        expected = float(reachable[0] - min(reachable)) if len(reachable) > 1 else 0.0
        if len(reachable) == 1:
            expected = 0.0
        assert total == expected


def test_oracle_rewards_and_mode_guards():
    visited: set = set()
    assert oracle_coverage_reward(RewardMode.ORACLE_COVERAGE, visited, (1, 1)) == 1.0
    assert oracle_coverage_reward(RewardMode.ORACLE_COVERAGE, visited, (1, 1)) == 0.0
    assert oracle_distance_reward(RewardMode.ORACLE_DISTANCE, (2, 2), (2, 2)) == 10.0
    assert oracle_distance_reward(RewardMode.ORACLE_DISTANCE, (2, 3), (2, 2)) == 0.0
    with pytest.raises(ModeMismatch):
        oracle_coverage_reward(RewardMode.CURIOSITY_DISCRETE, visited, (0, 0))
    with pytest.raises(ModeMismatch):
        oracle_distance_reward(RewardMode.NAV_SPARSE, (0, 0), (0, 0))


def test_mode_partitions():
    assert RewardMode.ORACLE_COVERAGE not in SELF_SUPERVISED_MODES
    assert RewardMode.ORACLE_DISTANCE not in SELF_SUPERVISED_MODES
    assert EXPLORATION_MODES & NAVIGATION_MODES == frozenset()
    assert len(EXPLORATION_MODES | NAVIGATION_MODES) == 6


def test_reward_config_validation():
    cfg = RewardConfig(RewardMode.NAV_SPARSE)
    assert cfg.alpha == 1.0 and cfg.beta == 10.0 and cfg.tau == 0.5
    with pytest.raises(AssertionError):
        RewardConfig(RewardMode.NAV_SPARSE, tau=1.5)
    with pytest.raises(AssertionError):
        RewardConfig(RewardMode.NAV_SPARSE, alpha=0.0)
