"""Coverage and SPL evaluation.

Positions are fair game here: SPL and coverage are oracle-side metrics,
computed after the fact. They never feed a gradient or a reward in the
self-supervised pipeline.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import maze as mz, memory as smb, training as tr
from .errors import EmptyGoalSet
from .nn import Tensor, no_grad
from .policy import PolicyNet, sample_action
from .reachability import ReachabilityModel
from .rewards import RewardConfig, RewardMode

MIN_GOAL_DISTANCE = 3
SUCCESS_RADIUS = 1
DEFAULT_GOALS = 50


def coverage(poses) -> int:
    """Distinct free cells touched by a pose sequence."""
    return len({(p.x, p.y) for p in poses})


@dataclass(frozen=True)
class GoalSpec:
    cell: tuple[int, int]
    pose: mz.Pose  # the view presented to the policy as the goal
    shortest: int  # BFS cell distance from the start cell


@dataclass(frozen=True)
class GoalSet:
    goals: tuple[GoalSpec, ...]

    def __len__(self) -> int:
        return len(self.goals)


def make_goal_set(maze: mz.MazeMap, seed: int, n_goals: int = DEFAULT_GOALS) -> GoalSet:
    """Sample free cells at least MIN_GOAL_DISTANCE from the start, with a
    uniformly chosen heading for the goal view."""
    rng = np.random.default_rng([seed, 41])
    candidates = []
    h, w = maze.occupancy.shape
    for y in range(h):
        for x in range(w):
            if maze.occupancy[y, x]:
                continue
            d = mz.oracle_distance(maze, maze.start_pose, mz.Pose(x, y, 0))
            if d is not None and d >= MIN_GOAL_DISTANCE:
                candidates.append(((x, y), d))
    if not candidates:
        raise EmptyGoalSet("no free cell is far enough from the start")
    picks = rng.integers(len(candidates), size=n_goals)
    goals = []
    for i in picks:
        cell, d = candidates[int(i)]
        heading = int(rng.integers(4)) * 90
        goals.append(GoalSpec(cell=cell, pose=mz.Pose(cell[0], cell[1], heading), shortest=d))
    return GoalSet(goals=tuple(goals))


@dataclass
class GoalResult:
    goal: GoalSpec
    success: bool
    path_cells: int  # cell-changing moves taken before success (s_i=1 only)
    steps_used: int = 0  # actions spent, turns included


def spl(results: list[GoalResult]) -> float:
    """(1/N) sum s_i * l_i / max(l_i, d_i)."""
    if not results:
        raise EmptyGoalSet("SPL over zero goals")
    total = 0.0
    for r in results:
        if not r.success:
            continue
        denom = max(r.goal.shortest, r.path_cells)
        total += 1.0 if denom == 0 else r.goal.shortest / denom
    return total / len(results)


def success_rate(results: list[GoalResult]) -> float:
    if not results:
        raise EmptyGoalSet("success rate over zero goals")
    return sum(r.success for r in results) / len(results)


def evaluate_navigation(
    maze: mz.MazeMap,
    reach: ReachabilityModel,
    net: PolicyNet,
    goal_set: GoalSet,
    nav_steps: int,
    seed: int,
    explore_steps: int = 200,
    caches: tr.Caches | None = None,
    tau: float = 0.5,
) -> list[GoalResult]:
    """Per-goal navigation rollouts against a shared memory built by one
    frozen exploration episode. Success is stopping within SUCCESS_RADIUS
    cells (Manhattan) of the goal inside the per-goal step budget."""
    if len(goal_set) == 0:
        raise EmptyGoalSet("empty goal set")
    if caches is None:
        caches = tr.Caches.build(maze, reach, net.n_rays)
    feat = tr.policy_feature_table(net, caches.render)
    warm = tr.run_exploration_episode(
        maze,
        reach,
        net,
        RewardConfig(RewardMode.CURIOSITY_DISCRETE, tau=tau),
        explore_steps,
        seed=tr.hash_seed(seed, 43),
        caches=caches,
        feat_table=feat,
    )
    buf = warm.buf
    mem = buf.matrix()
    results = []
    for g_i, goal in enumerate(goal_set.goals):
        rng = np.random.default_rng([seed, 47, g_i])
        pose = maze.start_pose
        cell_moves = 0
        steps_used = 0
        success = False
        goal_feat = feat[goal.pose]
        for t in range(nav_steps):
            if _within(pose, goal.cell):
                success = True
                break
            gt = explore_steps + t
            with no_grad():
                c = net.nav_proj(
                    Tensor(np.concatenate([feat[pose], goal_feat])[None])
                ).data[0]
            out = tr._head_forward(net, "navigate", c, mem, smb.ages_of(buf, gt))
            action, _, _ = sample_action(out, rng)
            nxt = mz.step(maze, pose, mz.Action(action))
            if (nxt.x, nxt.y) != (pose.x, pose.y):
                cell_moves += 1
            steps_used += 1
            pose = nxt
        else:
            success = _within(pose, goal.cell)
        results.append(
            GoalResult(goal=goal, success=success, path_cells=cell_moves, steps_used=steps_used)
        )
    return results


def _within(pose: mz.Pose, cell: tuple[int, int]) -> bool:
    return abs(pose.x - cell[0]) + abs(pose.y - cell[1]) <= SUCCESS_RADIUS


def breakdown_by_distance(
    results: list[GoalResult], edges: tuple[int, ...] = (5, 10, 20)
) -> dict[str, dict]:
    """Per-bin SPL / success / count over shortest-distance bins [lo, hi).
    Empty bins are absent from the result, not reported as zero."""
    bins: dict[str, list[GoalResult]] = {}
    bounds = (0,) + tuple(edges) + (10**9,)
    for r in results:
        for lo, hi in zip(bounds, bounds[1:]):
            if lo <= r.goal.shortest < hi:
                label = f"{lo}-{hi - 1}" if hi < 10**9 else f"{lo}+"
                bins.setdefault(label, []).append(r)
                break
    return {
        label: {"spl": spl(rs), "success_rate": success_rate(rs), "count": len(rs)}
        for label, rs in sorted(bins.items())
    }
