"""Reward providers: discrete/continuous curiosity, sparse and dense
navigation shaping, and the two position-oracle baselines.

The self-supervised providers never see a pose; the oracle providers are
the only ones allowed to, and refuse to run in self-supervised modes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

from .errors import ModeMismatch
from .memory import EMPTY_SCORE


class RewardMode(str, Enum):
    CURIOSITY_DISCRETE = "curiosity_discrete"
    CURIOSITY_CONTINUOUS = "curiosity_continuous"
    NAV_SPARSE = "nav_sparse"
    NAV_SPARSE_PLUS_DENSE = "nav_sparse_dense"
    ORACLE_COVERAGE = "oracle_coverage"
    ORACLE_DISTANCE = "oracle_distance"


SELF_SUPERVISED_MODES = frozenset(
    {
        RewardMode.CURIOSITY_DISCRETE,
        RewardMode.CURIOSITY_CONTINUOUS,
        RewardMode.NAV_SPARSE,
        RewardMode.NAV_SPARSE_PLUS_DENSE,
    }
)

EXPLORATION_MODES = frozenset(
    {RewardMode.CURIOSITY_DISCRETE, RewardMode.CURIOSITY_CONTINUOUS, RewardMode.ORACLE_COVERAGE}
)

NAVIGATION_MODES = frozenset(
    {RewardMode.NAV_SPARSE, RewardMode.NAV_SPARSE_PLUS_DENSE, RewardMode.ORACLE_DISTANCE}
)


@dataclass(frozen=True)
class RewardConfig:
    mode: RewardMode
    alpha: float = 1.0
    beta: float = 10.0
    tau: float = 0.5

    def __post_init__(self):
        assert self.alpha > 0 and self.beta > 0
        assert 0.0 < self.tau < 1.0


def curiosity_reward(inserted: bool, alpha: float) -> float:
    """Fixed bonus exactly when the observation entered the buffer."""
    return alpha if inserted else 0.0


def curiosity_reward_continuous(score: float, alpha: float, beta: float) -> float:
    """Continuous-curiosity ablation; the empty-buffer sentinel counts as 0."""
    if score == EMPTY_SCORE or math.isinf(score):
        score = 0.0
    return alpha * (beta - score)


def sparse_nav_reward(score: float, beta: float, tau: float) -> float:
    """beta iff the comparator says the goal view is reached (strict >)."""
    return beta if score > tau else 0.0


def dense_nav_reward(history: list[int | None], l_t: int | None) -> float:
    """Reward strict improvement over the best graph distance so far.

    Unreachable (None) values never enter the running min; an unreachable
    current distance earns nothing.
    """
    prior = [l for l in history if l is not None]
    if not prior or l_t is None:
        return 0.0
    return float(max(0, min(prior) - l_t))


def oracle_coverage_reward(mode: RewardMode, visited: set, cell: tuple[int, int]) -> float:
    """+1 on the first visit of a grid cell this episode. Mutates visited."""
    if mode != RewardMode.ORACLE_COVERAGE:
        raise ModeMismatch(f"coverage oracle called in mode {mode}")
    if cell in visited:
        return 0.0
    visited.add(cell)
    return 1.0


def oracle_distance_reward(mode: RewardMode, cell: tuple[int, int], goal_cell: tuple[int, int]) -> float:
    """+10 on reaching the goal cell (distance < 1 cell)."""
    if mode != RewardMode.ORACLE_DISTANCE:
        raise ModeMismatch(f"distance oracle called in mode {mode}")
    return 10.0 if cell == goal_cell else 0.0
