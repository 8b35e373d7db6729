"""Transformer-over-memory actor-critic heads for exploration and
navigation, sharing one observation CNN.

The exploration head attends from the current view's features over the
scene memory; the navigation head does the same from the concatenated
(current, goal) features. Attention parameters are separate per head,
the CNN is shared.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import memory as mem_mod
from .errors import NonFiniteLogits, ShapeMismatch
from .nn import Tensor, autograd as ag, no_grad
from .nn.layers import Embedding, LayerNorm, Linear, Module, MultiHeadAttention, ReLU, Sequential
from .reachability import EMBED_DIM, build_strip_cnn

N_ACTIONS = 3
ATT_HIDDEN = 64
ATT_HEADS = 2
MLP_HIDDEN = 128


class TransformerBlock(Module):
    """One attention + feedforward block with pre-residual layer norms."""

    def __init__(self, dim: int, rng: np.random.Generator):
        self.att = MultiHeadAttention(dim, ATT_HIDDEN, ATT_HEADS, rng)
        self.ln1 = LayerNorm(dim)
        self.mlp = Sequential(Linear(dim, MLP_HIDDEN, rng), ReLU(), Linear(MLP_HIDDEN, dim, rng))
        self.ln2 = LayerNorm(dim)

    def forward(self, c: Tensor, memory: Tensor, mask: np.ndarray | None) -> Tensor:
        e = self.ln1(self.att(c, memory, mask) + c)
        return self.ln2(self.mlp(e) + e)


@dataclass
class PolicyOutput:
    logits: np.ndarray  # (3,)
    value: float
    h: np.ndarray  # retained for diagnostics


class PolicyNet(Module):
    def __init__(self, n_rays: int = 64, seed: int = 0):
        rng = np.random.default_rng([seed, 303])
        self.n_rays = n_rays
        self.cnn = build_strip_cnn(n_rays, EMBED_DIM, rng)
        self.age_emb = Embedding(mem_mod.AGE_BUCKETS, EMBED_DIM, rng)
        self.explore_block = TransformerBlock(EMBED_DIM, rng)
        self.explore_policy = Linear(EMBED_DIM, N_ACTIONS, rng)
        self.explore_value = Linear(EMBED_DIM, 1, rng)
        self.nav_proj = Linear(2 * EMBED_DIM, EMBED_DIM, rng)
        self.nav_block = TransformerBlock(EMBED_DIM, rng)
        self.nav_policy = Linear(EMBED_DIM, N_ACTIONS, rng)
        self.nav_value = Linear(EMBED_DIM, 1, rng)

    # -- batched tape forward (training) ---------------------------------

    def _aged_memory(self, entries: np.ndarray, ages: np.ndarray, mask: np.ndarray) -> Tensor:
        """entries (B,J,D) + age embeddings looked up per entry."""
        if entries.shape[1] == 0:
            return Tensor(entries)
        buckets = np.vectorize(mem_mod.age_bucket, otypes=[np.intp])(np.maximum(ages, 0))
        aged = Tensor(entries) + self.age_emb(buckets)
        del mask  # invalid rows are excluded by the attention mask
        return aged

    def explore_batch(
        self,
        obs: np.ndarray,
        entries: np.ndarray,
        ages: np.ndarray,
        mask: np.ndarray,
        dropout_p: float = 0.0,
        dropout_rng: np.random.Generator | None = None,
    ) -> tuple[Tensor, Tensor, Tensor]:
        """obs (B,W,3); entries (B,J,D); returns (logits (B,3), value (B,), h)."""
        c = self.cnn(np.transpose(obs, (0, 2, 1)))
        memory = self._aged_memory(entries, ages, mask)
        h = self.explore_block(c, memory, mask)
        if dropout_p > 0.0 and dropout_rng is not None:
            h = ag.dropout(h, dropout_p, dropout_rng)
        logits = self.explore_policy(h)
        value = ag.reshape(self.explore_value(h), (-1,))
        return logits, value, h

    def navigate_batch_from_features(
        self,
        c_obs: np.ndarray,
        c_goal: np.ndarray,
        entries: np.ndarray,
        ages: np.ndarray,
        mask: np.ndarray,
        dropout_p: float = 0.0,
        dropout_rng: np.random.Generator | None = None,
    ) -> tuple[Tensor, Tensor, Tensor]:
        """Navigation forward from precomputed CNN features (B, D) x2.

        Used when the shared CNN is frozen: gradients stop at the features,
        which is exactly the freeze semantics, and the conv stack never runs.
        """
        c = self.nav_proj(Tensor(np.concatenate([c_obs, c_goal], axis=1)))
        memory = self._aged_memory(entries, ages, mask)
        h = self.nav_block(c, memory, mask)
        if dropout_p > 0.0 and dropout_rng is not None:
            h = ag.dropout(h, dropout_p, dropout_rng)
        logits = self.nav_policy(h)
        value = ag.reshape(self.nav_value(h), (-1,))
        return logits, value, h

    def navigate_batch(
        self,
        obs: np.ndarray,
        goal: np.ndarray,
        entries: np.ndarray,
        ages: np.ndarray,
        mask: np.ndarray,
        dropout_p: float = 0.0,
        dropout_rng: np.random.Generator | None = None,
    ) -> tuple[Tensor, Tensor, Tensor]:
        c_obs = self.cnn(np.transpose(obs, (0, 2, 1)))
        c_goal = self.cnn(np.transpose(goal, (0, 2, 1)))
        c = self.nav_proj(ag.concat([c_obs, c_goal], axis=1))
        memory = self._aged_memory(entries, ages, mask)
        h = self.nav_block(c, memory, mask)
        if dropout_p > 0.0 and dropout_rng is not None:
            h = ag.dropout(h, dropout_p, dropout_rng)
        logits = self.nav_policy(h)
        value = ag.reshape(self.nav_value(h), (-1,))
        return logits, value, h


def warm_start_cnn(net: PolicyNet, embedding_net: Module) -> None:
    """Copy a same-shaped embedding CNN's parameters into the policy CNN.

    Starting the shared CNN from the trained comparator embedding gives the
    policy heads location-discriminative features from the first rollout,
    which random-init features only approach after far longer training.
    """
    src = dict(embedding_net.named_parameters())
    dst = net.cnn.named_parameters()
    if set(src) != {name for name, _ in dst}:
        raise ShapeMismatch("embedding net does not match the policy CNN")
    for name, p in dst:
        if src[name].data.shape != p.data.shape:
            raise ShapeMismatch(
                f"{name}: {src[name].data.shape} vs {p.data.shape}"
            )
        p.data = src[name].data.copy()


def _single(net_fn, *arrays) -> PolicyOutput:
    with no_grad():
        logits, value, h = net_fn(*arrays)
    out = PolicyOutput(logits=logits.data[0], value=float(value.data[0]), h=h.data[0])
    if not np.isfinite(out.logits).all():
        raise NonFiniteLogits(f"logits {out.logits}")
    return out


def explore_forward(
    net: PolicyNet, obs: np.ndarray, mem_matrix: np.ndarray, ages: np.ndarray
) -> PolicyOutput:
    """Single-step exploration forward; mem_matrix (J,D) may be empty."""
    if obs.shape != (net.n_rays, 3):
        raise ShapeMismatch(f"observation shape {obs.shape}")
    J = mem_matrix.shape[0]
    mask = np.ones((1, J), dtype=bool)
    return _single(
        net.explore_batch, obs[None], mem_matrix[None], ages[None], mask
    )


def navigate_forward(
    net: PolicyNet,
    obs: np.ndarray,
    goal: np.ndarray,
    mem_matrix: np.ndarray,
    ages: np.ndarray,
) -> PolicyOutput:
    if obs.shape != (net.n_rays, 3) or goal.shape != (net.n_rays, 3):
        raise ShapeMismatch(f"shapes {obs.shape}, {goal.shape}")
    J = mem_matrix.shape[0]
    mask = np.ones((1, J), dtype=bool)
    return _single(
        net.navigate_batch, obs[None], goal[None], mem_matrix[None], ages[None], mask
    )


def logits_stats(logits: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(probs, log_probs) with -inf logits mapped to zero probability."""
    shifted = logits - np.max(logits)
    e = np.exp(shifted)
    probs = e / e.sum()
    with np.errstate(divide="ignore"):
        log_probs = np.where(probs > 0, np.log(np.maximum(probs, 1e-300)), -np.inf)
    return probs, log_probs


def sample_action(output: PolicyOutput, rng: np.random.Generator):
    """Categorical sample; returns (action index, log_prob, entropy)."""
    logits = output.logits
    if np.isnan(logits).any() or np.isposinf(logits).any():
        raise NonFiniteLogits(f"logits {logits}")
    probs, log_probs = logits_stats(logits)
    action = int(rng.choice(N_ACTIONS, p=probs))
    entropy = float(-(probs[probs > 0] * log_probs[probs > 0]).sum())
    return action, float(log_probs[action]), entropy
