"""PPO with clipped surrogate, GAE advantages, and RMSprop + warmup.

Rollouts are collected without the tape; the update recomputes forward
passes on minibatches with per-step memory snapshots reconstructed from
the episode trace.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NonFiniteLoss
from .nn import autograd as ag
from .nn.optim import RMSprop
from .policy import PolicyNet
from .reachability import EMBED_DIM
from .rewards import RewardMode


@dataclass(frozen=True)
class PPOConfig:
    episodes_per_batch: int = 8
    steps_per_episode: int = 200
    ppo_epochs: int = 4
    gamma: float = 0.99
    clip_eps: float = 0.1
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    gae_lambda: float = 0.95
    lr: float = 1e-4
    warmup_steps: int = 300
    dropout_p: float = 0.1
    minibatch_size: int = 256
    rmsprop_alpha: float = 0.98
    rmsprop_eps: float = 1e-5
    weight_decay: float = 1e-7

    def __post_init__(self):
        assert 0.0 < self.gamma <= 1.0
        assert self.clip_eps > 0.0


@dataclass
class EpisodeTrace:
    """Per-step record of one episode (or one navigation phase)."""

    mode: RewardMode
    seed: int
    observations: np.ndarray  # (T, W, 3)
    actions: np.ndarray  # (T,) int
    log_probs: np.ndarray  # (T,)
    values: np.ndarray  # (T,)
    rewards: np.ndarray  # (T,)
    inserted: np.ndarray  # (T,) bool
    anchors: np.ndarray  # (T,) int
    poses: list  # oracle log only; never feeds self-supervised rewards
    entries: np.ndarray  # (J_final, EMBED_DIM) frozen embeddings
    insert_steps: np.ndarray  # (J_final,) global step index per entry
    entry_counts: np.ndarray  # (T,) buffer size visible to the policy at step t
    step_index: np.ndarray  # (T,) global time index t (ages = t - insert_step)
    goals: np.ndarray | None = None  # (T, W, 3) for navigation traces
    goal_entries: np.ndarray | None = None  # (T,) buffer index of the goal
    obs_features: np.ndarray | None = None  # (T, D) CNN features, frozen-CNN runs
    goal_features: np.ndarray | None = None
    extra: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.actions)


def gae_advantages(
    rewards: np.ndarray, values: np.ndarray, gamma: float, lam: float
) -> tuple[np.ndarray, np.ndarray]:
    """Terminal-bootstrap-0 GAE; returns (advantages, returns)."""
    T = len(rewards)
    adv = np.zeros(T)
    last = 0.0
    for t in reversed(range(T)):
        next_value = values[t + 1] if t + 1 < T else 0.0
        delta = rewards[t] + gamma * next_value - values[t]
        last = delta + gamma * lam * last
        adv[t] = last
    return adv, adv + values


def _memory_batch(traces, trace_idx, step_idx):
    """Pad per-step memory snapshots into (B, Jmax, D) + ages + mask."""
    B = len(trace_idx)
    counts = [traces[i].entry_counts[s] for i, s in zip(trace_idx, step_idx)]
    jmax = max(counts) if counts else 0
    entries = np.zeros((B, jmax, EMBED_DIM))
    ages = np.zeros((B, jmax), dtype=np.intp)
    mask = np.zeros((B, jmax), dtype=bool)
    for b, (i, s) in enumerate(zip(trace_idx, step_idx)):
        tr = traces[i]
        j = tr.entry_counts[s]
        if j:
            entries[b, :j] = tr.entries[:j]
            ages[b, :j] = tr.step_index[s] - tr.insert_steps[:j]
            mask[b, :j] = True
    return entries, ages, mask


def ppo_update(
    traces: list[EpisodeTrace],
    net: PolicyNet,
    cfg: PPOConfig,
    opt: RMSprop,
    head: str,
    rng: np.random.Generator,
    frozen_features: bool = False,
) -> dict:
    """Clipped-surrogate PPO over the collected traces; returns mean losses
    and the fraction of clipped ratios. With frozen_features the navigation
    forward starts from the logged CNN features (frozen-CNN training)."""
    navigation = head == "navigate"
    use_features = (
        frozen_features
        and navigation
        and all(tr.obs_features is not None for tr in traces)
    )
    flat_trace, flat_step, advs, rets = [], [], [], []
    for i, tr in enumerate(traces):
        adv, ret = gae_advantages(tr.rewards, tr.values, cfg.gamma, cfg.gae_lambda)
        flat_trace.extend([i] * len(tr))
        flat_step.extend(range(len(tr)))
        advs.append(adv)
        rets.append(ret)
    flat_trace = np.array(flat_trace)
    flat_step = np.array(flat_step)
    advantages = np.concatenate(advs)
    returns = np.concatenate(rets)
    old_log_probs = np.concatenate([tr.log_probs for tr in traces])
    actions = np.concatenate([tr.actions for tr in traces])
    n = len(actions)

    std = advantages.std()
    norm_adv = (advantages - advantages.mean()) / (std + 1e-8)

    stats = {"policy_loss": [], "value_loss": [], "entropy": [], "clip_fraction": []}
    for _ in range(cfg.ppo_epochs):
        order = rng.permutation(n)
        for lo in range(0, n, cfg.minibatch_size):
            idx = order[lo : lo + cfg.minibatch_size]
            ti, si = flat_trace[idx], flat_step[idx]
            entries, ages, mask = _memory_batch(traces, ti, si)
            if not use_features:
                obs = np.stack([traces[i].observations[s] for i, s in zip(ti, si)])
            if use_features:
                c_obs = np.stack([traces[i].obs_features[s] for i, s in zip(ti, si)])
                c_goal = np.stack([traces[i].goal_features[s] for i, s in zip(ti, si)])
                logits, values, _ = net.navigate_batch_from_features(
                    c_obs, c_goal, entries, ages, mask, cfg.dropout_p, rng
                )
            elif navigation:
                goal = np.stack([traces[i].goals[s] for i, s in zip(ti, si)])
                logits, values, _ = net.navigate_batch(
                    obs, goal, entries, ages, mask, cfg.dropout_p, rng
                )
            else:
                logits, values, _ = net.explore_batch(
                    obs, entries, ages, mask, cfg.dropout_p, rng
                )
            logp_all = ag.log_softmax(logits)
            onehot = np.zeros((len(idx), 3))
            onehot[np.arange(len(idx)), actions[idx]] = 1.0
            new_logp = ag.tsum(logp_all * ag.Tensor(onehot), axis=-1)
            ratio = ag.exp(new_logp - ag.Tensor(old_log_probs[idx]))
            adv_t = ag.Tensor(norm_adv[idx])
            unclipped = ratio * adv_t
            clipped_ratio = _clip(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps)
            surrogate = _elementwise_min(unclipped, clipped_ratio * adv_t)
            policy_loss = ag.scale(ag.tmean(surrogate), -1.0)

            verr = values - ag.Tensor(returns[idx])
            value_loss = ag.tmean(verr * verr)

            probs = ag.softmax(logits)
            plogp = probs * logp_all
            entropy = ag.scale(ag.tmean(ag.tsum(plogp, axis=-1)), -1.0)

            loss = (
                policy_loss
                + ag.scale(value_loss, cfg.value_coef)
                + ag.scale(entropy, -cfg.entropy_coef)
            )
            if not np.isfinite(loss.data):
                raise NonFiniteLoss(
                    f"loss {loss.data}; policy {policy_loss.data}, "
                    f"value {value_loss.data}, entropy {entropy.data}"
                )
            net.zero_grad()
            loss.backward()
            opt.step()

            stats["policy_loss"].append(float(policy_loss.data))
            stats["value_loss"].append(float(value_loss.data))
            stats["entropy"].append(float(entropy.data))
            clip_frac = float(
                np.mean(np.abs(ratio.data - 1.0) > cfg.clip_eps)
            )
            stats["clip_fraction"].append(clip_frac)
    return {k: float(np.mean(v)) for k, v in stats.items()}


def _clip(t, lo: float, hi: float):
    data = np.clip(t.data, lo, hi)
    inside = (t.data > lo) & (t.data < hi)

    def backward(g):
        t._accumulate(g * inside)

    return ag._make(data, (t,), backward)


def _elementwise_min(a, b):
    take_a = a.data <= b.data
    data = np.where(take_a, a.data, b.data)

    def backward(g):
        a._accumulate(g * take_a)
        b._accumulate(g * ~take_a)

    return ag._make(data, (a, b), backward)
