"""Stage 2 (curiosity exploration) and stage 3 (memory-shaped navigation)
training loops built on the shared PPO machinery.

Rollouts run off-tape with cached per-pose renders and features; poses are
carried through traces only as oracle-side diagnostics and cache keys, the
self-supervised rewards see comparator scores and buffer state alone.
"""
from __future__ import annotations

import csv
import multiprocessing
from dataclasses import dataclass, field

import numpy as np

from . import maze as mz, memory as smb
from .errors import EmptyBuffer
from .nn import Tensor, no_grad
from .nn.optim import RMSprop
from .policy import PolicyNet, PolicyOutput, sample_action
from .ppo import EpisodeTrace, PPOConfig, ppo_update
from .reachability import EMBED_DIM, ReachabilityModel
from .rewards import (
    EXPLORATION_MODES,
    NAVIGATION_MODES,
    RewardConfig,
    RewardMode,
    curiosity_reward,
    curiosity_reward_continuous,
    dense_nav_reward,
    oracle_coverage_reward,
    sparse_nav_reward,
)

LOG_FIELDS = [
    "batch",
    "mode",
    "mean_return",
    "coverage_cells",
    "buffer_size",
    "graph_edges",
    "policy_loss",
    "value_loss",
    "entropy",
    "clip_fraction",
]


@dataclass
class Caches:
    """Per-maze render table plus per-model feature tables keyed by pose."""

    render: dict
    reach_embed: dict

    @classmethod
    def build(cls, maze: mz.MazeMap, reach: ReachabilityModel, n_rays: int) -> "Caches":
        render = mz.render_table(maze, n_rays)
        poses = list(render)
        obs = np.stack([render[p] for p in poses])
        embeds = reach.embed_batch(obs)
        return cls(render=render, reach_embed=dict(zip(poses, embeds)))


def policy_feature_table(net: PolicyNet, render: dict) -> dict:
    """CNN features of every pose's strip; recompute after each update."""
    poses = list(render)
    obs = np.stack([render[p] for p in poses])
    with no_grad():
        feats = net.cnn(np.transpose(obs, (0, 2, 1))).data
    return dict(zip(poses, feats))


def _head_forward(
    net: PolicyNet, head: str, c_row: np.ndarray, entries: np.ndarray, ages: np.ndarray
) -> PolicyOutput:
    """Single-step forward from precomputed post-CNN features."""
    J = entries.shape[0]
    mask = np.ones((1, J), dtype=bool)
    with no_grad():
        c = Tensor(c_row[None])
        memory = net._aged_memory(entries[None], ages[None], mask)
        if head == "explore":
            h = net.explore_block(c, memory, mask)
            logits = net.explore_policy(h)
            value = net.explore_value(h)
        else:
            h = net.nav_block(c, memory, mask)
            logits = net.nav_policy(h)
            value = net.nav_value(h)
    return PolicyOutput(logits=logits.data[0], value=float(value.data[0, 0]), h=h.data[0])


@dataclass
class ExplorationResult:
    trace: EpisodeTrace
    buf: smb.MemoryBuffer
    graph: smb.ExplorationGraph
    entry_poses: list
    visited_cells: set


def run_exploration_episode(
    maze: mz.MazeMap,
    reach: ReachabilityModel,
    net: PolicyNet,
    reward_cfg: RewardConfig,
    steps: int,
    seed: int,
    caches: Caches,
    feat_table: dict | None = None,
    t_offset: int = 0,
    buf: smb.MemoryBuffer | None = None,
    graph: smb.ExplorationGraph | None = None,
) -> ExplorationResult:
    """One exploration episode. The policy at step t conditions on the
    buffer as of t-1; the reward is scored for the step-t observation."""
    assert reward_cfg.mode in EXPLORATION_MODES
    if feat_table is None:
        feat_table = policy_feature_table(net, caches.render)
    rng = np.random.default_rng([seed, 11])
    if buf is None:
        buf = smb.MemoryBuffer(tau=reward_cfg.tau)
    if graph is None:
        graph = smb.ExplorationGraph()
    pose = maze.start_pose

    T = steps
    obs_arr = np.empty((T, net.n_rays, 3))
    actions = np.empty(T, dtype=np.intp)
    log_probs = np.empty(T)
    values = np.empty(T)
    rewards = np.empty(T)
    inserted_arr = np.zeros(T, dtype=bool)
    anchors = np.empty(T, dtype=np.intp)
    entry_counts = np.empty(T, dtype=np.intp)
    step_index = np.empty(T, dtype=np.intp)
    poses = []
    entry_poses = []
    visited: set = set()

    for t in range(T):
        gt = t_offset + t
        obs = caches.render[pose]
        obs_arr[t] = obs
        poses.append(pose)
        entry_counts[t] = len(buf)
        step_index[t] = gt

        out = _head_forward(
            net, "explore", feat_table[pose], buf.matrix(), smb.ages_of(buf, gt)
        )
        action, logp, _ = sample_action(out, rng)
        actions[t] = action
        log_probs[t] = logp
        values[t] = out.value

        e_t = caches.reach_embed[pose]
        score = smb.novelty_score(reach, e_t, buf)
        inserted = smb.smb_update(buf, e_t, gt, score)
        inserted_arr[t] = inserted
        if inserted:
            entry_poses.append(pose)
        anchors[t] = smb.update_anchor(graph, buf, reach, e_t, just_inserted=inserted)

        if reward_cfg.mode == RewardMode.CURIOSITY_DISCRETE:
            rewards[t] = curiosity_reward(inserted, reward_cfg.alpha)
        elif reward_cfg.mode == RewardMode.CURIOSITY_CONTINUOUS:
            rewards[t] = curiosity_reward_continuous(score, reward_cfg.alpha, reward_cfg.beta)
        else:
            rewards[t] = oracle_coverage_reward(reward_cfg.mode, visited, (pose.x, pose.y))
        if reward_cfg.mode != RewardMode.ORACLE_COVERAGE:
            visited.add((pose.x, pose.y))

        pose = mz.step(maze, pose, mz.Action(action))

    trace = EpisodeTrace(
        mode=reward_cfg.mode,
        seed=seed,
        observations=obs_arr,
        actions=actions,
        log_probs=log_probs,
        values=values,
        rewards=rewards,
        inserted=inserted_arr,
        anchors=anchors,
        poses=poses,
        entries=buf.matrix(),
        insert_steps=np.array(buf.insert_steps, dtype=np.intp),
        entry_counts=entry_counts,
        step_index=step_index,
        extra={"tau": reward_cfg.tau},
    )
    return ExplorationResult(trace, buf, graph, entry_poses, visited)


def replay_buffer(
    trace: EpisodeTrace, reach: ReachabilityModel, caches: Caches
) -> tuple[smb.MemoryBuffer, np.ndarray]:
    """Re-run the buffer update rule over a logged episode with the frozen
    comparator and the same embedding table; returns the rebuilt buffer and
    the max-prior-score per step. Bit-identical to the original rollout."""
    buf = smb.MemoryBuffer(tau=trace_tau(trace))
    scores = np.empty(len(trace))
    for t, pose in enumerate(trace.poses):
        e_t = caches.reach_embed[pose]
        score = smb.novelty_score(reach, e_t, buf)
        scores[t] = score
        smb.smb_update(buf, e_t, int(trace.step_index[t]), score)
    return buf, scores


def trace_tau(trace: EpisodeTrace) -> float:
    return float(trace.extra.get("tau", 0.5))


def random_walk_coverage(maze: mz.MazeMap, steps: int, seed: int) -> int:
    """Distinct free cells visited by a uniform-random action walk."""
    rng = np.random.default_rng([seed, 17])
    pose = maze.start_pose
    visited = {(pose.x, pose.y)}
    for _ in range(steps):
        pose = mz.step(maze, pose, mz.Action(int(rng.integers(3))))
        visited.add((pose.x, pose.y))
    return len(visited)


@dataclass
class StageConfig:
    batches: int = 30
    ppo: PPOConfig = field(default_factory=PPOConfig)
    reward: RewardConfig = field(default_factory=lambda: RewardConfig(RewardMode.CURIOSITY_DISCRETE))
    seed: int = 0
    explore_steps: int = 200  # stage 3: frozen exploration phase length
    workers: int = 1


def map_episodes(fn, jobs: list, workers: int = 1) -> list:
    """Run episode jobs serially or on a worker pool; result order follows
    job order either way, so the merge is deterministic for fixed workers."""
    if workers <= 1:
        return [fn(job) for job in jobs]
    ctx = multiprocessing.get_context("fork")
    with ctx.Pool(workers) as pool:
        return pool.map(fn, jobs)


def _explore_job(job):
    maze, reach, net, reward, steps, seed, caches, feat = job
    return run_exploration_episode(maze, reach, net, reward, steps, seed, caches, feat)


def _nav_job(job):
    maze, reach, net, reward, explore_steps, nav_steps, seed, caches, feat = job
    return run_navigation_episode(
        maze, reach, net, reward, explore_steps, nav_steps, seed, caches, feat
    )


def _optimizer(net: PolicyNet, cfg: PPOConfig, head: str, freeze_shared: bool) -> RMSprop:
    params = []
    for name, p in net.named_parameters():
        top = name.split(".")[0]
        if head == "explore":
            keep = top in ("cnn", "age_emb", "explore_block", "explore_policy", "explore_value")
        else:
            keep = top in ("nav_proj", "nav_block", "nav_policy", "nav_value")
            if not freeze_shared:
                keep = keep or top in ("cnn", "age_emb")
        if keep:
            params.append(p)
    return RMSprop(
        params,
        lr=cfg.lr,
        alpha=cfg.rmsprop_alpha,
        eps=cfg.rmsprop_eps,
        weight_decay=cfg.weight_decay,
        warmup_steps=cfg.warmup_steps,
    )


def run_stage2(
    maze: mz.MazeMap,
    reach: ReachabilityModel,
    net: PolicyNet,
    cfg: StageConfig,
    log_rows: list | None = None,
    on_batch=None,
) -> list[ExplorationResult]:
    """Curiosity-driven exploration training; returns the last batch of
    episode results (whose buffers/graphs seed stage 3 and the plots)."""
    caches = Caches.build(maze, reach, net.n_rays)
    opt = _optimizer(net, cfg.ppo, "explore", freeze_shared=False)
    update_rng = np.random.default_rng([cfg.seed, 23])
    results: list[ExplorationResult] = []
    for b in range(cfg.batches):
        feat_table = policy_feature_table(net, caches.render)
        jobs = [
            (
                maze,
                reach,
                net,
                cfg.reward,
                cfg.ppo.steps_per_episode,
                hash_seed(cfg.seed, b, ep),
                caches,
                feat_table,
            )
            for ep in range(cfg.ppo.episodes_per_batch)
        ]
        results = map_episodes(_explore_job, jobs, cfg.workers)
        traces = [r.trace for r in results]
        stats = ppo_update(traces, net, cfg.ppo, opt, "explore", update_rng)
        row = {
            "batch": b,
            "mode": cfg.reward.mode.value,
            "mean_return": float(np.mean([r.trace.rewards.sum() for r in results])),
            "coverage_cells": float(np.mean([len(r.visited_cells) for r in results])),
            "buffer_size": float(np.mean([len(r.buf) for r in results])),
            "graph_edges": float(np.mean([len(r.graph.edges) for r in results])),
            **stats,
        }
        if log_rows is not None:
            log_rows.append(row)
        if on_batch is not None:
            on_batch(row)
    return results


def hash_seed(*parts: int) -> int:
    """Stable scalar seed from components, for per-episode rngs."""
    return int(np.random.default_rng(list(parts)).integers(2**31))


# -- stage 3: navigation ---------------------------------------------------


@dataclass
class NavEpisodeResult:
    trace: EpisodeTrace
    buf: smb.MemoryBuffer
    graph: smb.ExplorationGraph
    successes: int
    goals_attempted: int


def run_navigation_episode(
    maze: mz.MazeMap,
    reach: ReachabilityModel,
    net: PolicyNet,
    reward_cfg: RewardConfig,
    explore_steps: int,
    nav_steps: int,
    seed: int,
    caches: Caches,
    feat_table: dict | None = None,
) -> NavEpisodeResult:
    """Frozen-exploration warmup fills the buffer, then the navigation head
    chases buffer-entry goals. Sparse success resamples the goal and resets
    the dense-shaping history."""
    assert reward_cfg.mode in NAVIGATION_MODES
    if feat_table is None:
        feat_table = policy_feature_table(net, caches.render)

    explore_cfg = RewardConfig(RewardMode.CURIOSITY_DISCRETE, tau=reward_cfg.tau)
    warmup = run_exploration_episode(
        maze, reach, net, explore_cfg, explore_steps, seed, caches, feat_table
    )
    buf, graph = warmup.buf, warmup.graph
    if len(buf) == 0:
        raise EmptyBuffer("no entries after the exploration phase")
    entry_poses = warmup.entry_poses

    rng = np.random.default_rng([seed, 29])
    goal_rng = np.random.default_rng([seed, 31])

    def pick_goal():
        j = int(goal_rng.integers(len(buf)))
        return j, entry_poses[j]

    goal_idx, goal_pose = pick_goal()
    goal_obs = caches.render[goal_pose]
    goal_embed = buf.embeddings[goal_idx]
    dense_history: list[int | None] = []
    successes = 0
    goals_attempted = 1

    T = nav_steps
    obs_arr = np.empty((T, net.n_rays, 3))
    goals_arr = np.empty((T, net.n_rays, 3))
    obs_feat = np.empty((T, EMBED_DIM))
    goal_feat = np.empty((T, EMBED_DIM))
    goal_entries = np.empty(T, dtype=np.intp)
    actions = np.empty(T, dtype=np.intp)
    log_probs = np.empty(T)
    values = np.empty(T)
    rewards = np.empty(T)
    inserted_arr = np.zeros(T, dtype=bool)
    anchors = np.empty(T, dtype=np.intp)
    entry_counts = np.full(T, len(buf), dtype=np.intp)
    step_index = np.empty(T, dtype=np.intp)
    poses = []
    pose = maze.start_pose
    J = len(buf)

    for t in range(T):
        gt = explore_steps + t
        obs = caches.render[pose]
        obs_arr[t] = obs
        goals_arr[t] = goal_obs
        obs_feat[t] = feat_table[pose]
        goal_feat[t] = feat_table[goal_pose]
        goal_entries[t] = goal_idx
        poses.append(pose)
        step_index[t] = gt

        with no_grad():
            c = net.nav_proj(
                Tensor(np.concatenate([feat_table[pose], feat_table[goal_pose]])[None])
            ).data[0]
        out = _head_forward(net, "navigate", c, buf.matrix(), smb.ages_of(buf, gt))
        action, logp, _ = sample_action(out, rng)
        actions[t] = action
        log_probs[t] = logp
        values[t] = out.value

        e_t = caches.reach_embed[pose]
        anchor = smb.update_anchor(graph, buf, reach, e_t, just_inserted=False)
        anchors[t] = anchor
        score = reach.compare(e_t, goal_embed)

        if reward_cfg.mode == RewardMode.ORACLE_DISTANCE:
            from .rewards import oracle_distance_reward

            r = oracle_distance_reward(
                reward_cfg.mode, (pose.x, pose.y), (goal_pose.x, goal_pose.y)
            )
            reached = r > 0.0
        else:
            r = sparse_nav_reward(score, reward_cfg.beta, reward_cfg.tau)
            reached = r > 0.0
            if reward_cfg.mode == RewardMode.NAV_SPARSE_PLUS_DENSE and not reached:
                l_t = smb.shortest_path_len(graph, J, anchor, goal_idx)
                r += dense_nav_reward(dense_history, l_t)
                dense_history.append(l_t)
        rewards[t] = r

        if reached:
            successes += 1
            goal_idx, goal_pose = pick_goal()
            goal_obs = caches.render[goal_pose]
            goal_embed = buf.embeddings[goal_idx]
            dense_history = []
            goals_attempted += 1

        pose = mz.step(maze, pose, mz.Action(action))

    trace = EpisodeTrace(
        mode=reward_cfg.mode,
        seed=seed,
        observations=obs_arr,
        actions=actions,
        log_probs=log_probs,
        values=values,
        rewards=rewards,
        inserted=inserted_arr,
        anchors=anchors,
        poses=poses,
        entries=buf.matrix(),
        insert_steps=np.array(buf.insert_steps, dtype=np.intp),
        entry_counts=entry_counts,
        step_index=step_index,
        goals=goals_arr,
        goal_entries=goal_entries,
        obs_features=obs_feat,
        goal_features=goal_feat,
        extra={"tau": reward_cfg.tau},
    )
    return NavEpisodeResult(trace, buf, graph, successes, goals_attempted)


def run_stage3(
    maze: mz.MazeMap,
    reach: ReachabilityModel,
    net: PolicyNet,
    cfg: StageConfig,
    log_rows: list | None = None,
    freeze_shared: bool = True,
    on_batch=None,
) -> list[NavEpisodeResult]:
    """Navigation training over buffer-entry goals; only the navigation head
    trains by default, the shared CNN and age table stay frozen."""
    caches = Caches.build(maze, reach, net.n_rays)
    opt = _optimizer(net, cfg.ppo, "navigate", freeze_shared=freeze_shared)
    update_rng = np.random.default_rng([cfg.seed, 37])
    results: list[NavEpisodeResult] = []
    for b in range(cfg.batches):
        feat_table = policy_feature_table(net, caches.render)
        jobs = [
            (
                maze,
                reach,
                net,
                cfg.reward,
                cfg.explore_steps,
                cfg.ppo.steps_per_episode,
                hash_seed(cfg.seed, b, ep),
                caches,
                feat_table,
            )
            for ep in range(cfg.ppo.episodes_per_batch)
        ]
        results = map_episodes(_nav_job, jobs, cfg.workers)
        traces = [r.trace for r in results]
        stats = ppo_update(
            traces, net, cfg.ppo, opt, "navigate", update_rng,
            frozen_features=freeze_shared,
        )
        row = {
            "batch": b,
            "mode": cfg.reward.mode.value,
            "mean_return": float(np.mean([r.trace.rewards.sum() for r in results])),
            "coverage_cells": float(np.mean([r.successes for r in results])),
            "buffer_size": float(np.mean([len(r.buf) for r in results])),
            "graph_edges": float(np.mean([len(r.graph.edges) for r in results])),
            **stats,
        }
        if log_rows is not None:
            log_rows.append(row)
        if on_batch is not None:
            on_batch(row)
    return results


def write_log(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=LOG_FIELDS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row.get(k, "") for k in LOG_FIELDS})


def read_log(path) -> list[dict]:
    from .errors import MalformedLog

    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != LOG_FIELDS:
            raise MalformedLog(f"unexpected header {reader.fieldnames}")
        return list(reader)
