"""Stage 1: random-walk collection, temporally-labeled pairs, and the
siamese comparator that everything downstream scores similarity with.

The comparator is trained to answer "were these two views taken within k
random-walk steps of each other?" and its sigmoid score doubles as the
novelty / goal-reached signal later on.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import maze as mz
from .errors import InsufficientWalkLength, ShapeMismatch
from .nn import Tensor, autograd as ag, checkpoint, no_grad
from .nn.layers import Conv1d, Linear, Module, ReLU, Sequential

EMBED_DIM = 128
COMPARATOR_HIDDEN = 512

CNN_KERNELS = (9, 7, 5)
CNN_STRIDES = (5, 4, 3)
CNN_CHANNELS = (32, 64, 128)


class Flatten(Module):
    def forward(self, x: Tensor) -> Tensor:
        b = x.data.shape[0]
        return ag.reshape(x, (b, -1))


def build_strip_cnn(n_rays: int, out_dim: int, rng: np.random.Generator) -> Sequential:
    """Conv ladder over the ray axis, flattened and projected to out_dim."""
    layers: list[Module] = []
    in_ch = 3
    width = n_rays
    for k, s, ch in zip(CNN_KERNELS, CNN_STRIDES, CNN_CHANNELS):
        layers.append(Conv1d(in_ch, ch, kernel_size=k, stride=s, rng=rng))
        layers.append(ReLU())
        width = (width + 2 * (k // 2) - k) // s + 1
        if width <= 0:
            raise ShapeMismatch(f"strip width {n_rays} too small for conv ladder")
        in_ch = ch
    layers.append(Flatten())
    layers.append(Linear(in_ch * width, out_dim, rng))
    return Sequential(*layers)


@dataclass(frozen=True)
class PairingConfig:
    walk_steps: int = 2000  # T
    walks: int = 10
    pairs_per_walk: int = 2000
    positive_radius: int = 5  # k
    negative_margin: int = 25

    def __post_init__(self):
        assert self.positive_radius >= 1
        assert self.negative_margin >= self.positive_radius


@dataclass(frozen=True)
class LabeledPair:
    obs_a: np.ndarray
    obs_b: np.ndarray
    label: int
    walk: int
    i: int
    j: int


def collect_walks(
    maze: mz.MazeMap,
    cfg: PairingConfig,
    seed: int,
    n_rays: int = mz.DEFAULT_RAYS,
    table: dict | None = None,
) -> list[np.ndarray]:
    """Uniform-random walks from the start pose; each walk is a (T, W, 3)
    observation array. Deterministic per seed (one sub-seed per walk)."""
    if table is None:
        table = mz.render_table(maze, n_rays)
    walks = []
    for w in range(cfg.walks):
        rng = np.random.default_rng([seed, w])
        pose = maze.start_pose
        obs = np.empty((cfg.walk_steps, n_rays, 3))
        for t in range(cfg.walk_steps):
            obs[t] = table[pose]
            pose = mz.step(maze, pose, mz.Action(int(rng.integers(3))))
        walks.append(obs)
    return walks


def pair_label(i: int, j: int, k: int) -> int:
    return 1 if abs(i - j) <= k else 0


def sample_pairs(
    walks: list[np.ndarray], cfg: PairingConfig, seed: int
) -> list[LabeledPair]:
    """Balanced 50/50 positive/negative pairs, drawn within single walks."""
    T = min(len(w) for w in walks)
    if T < cfg.negative_margin + 1:
        raise InsufficientWalkLength(
            f"walk length {T} < negative margin {cfg.negative_margin} + 1"
        )
    rng = np.random.default_rng([seed, len(walks)])
    pairs: list[LabeledPair] = []
    for w, obs in enumerate(walks):
        n = cfg.pairs_per_walk
        n_pos = n // 2
        for idx in range(n):
            positive = idx < n_pos
            while True:
                i = int(rng.integers(len(obs)))
                if positive:
                    lo = max(0, i - cfg.positive_radius)
                    hi = min(len(obs) - 1, i + cfg.positive_radius)
                    j = int(rng.integers(lo, hi + 1))
                    break
                j = int(rng.integers(len(obs)))
                if abs(i - j) >= cfg.negative_margin:
                    break
            label = pair_label(i, j, cfg.positive_radius)
            assert label == (1 if positive else 0)
            pairs.append(LabeledPair(obs[i], obs[j], label, w, i, j))
    return pairs


class ReachabilityModel(Module):
    """Siamese pair: embedding net g and comparator trunk f (logit output)."""

    def __init__(self, n_rays: int = mz.DEFAULT_RAYS, seed: int = 0):
        rng = np.random.default_rng([seed, 101])
        self.n_rays = n_rays
        self.g = build_strip_cnn(n_rays, EMBED_DIM, rng)
        self.f = Sequential(
            Linear(2 * EMBED_DIM, COMPARATOR_HIDDEN, rng),
            ReLU(),
            Linear(COMPARATOR_HIDDEN, COMPARATOR_HIDDEN, rng),
            ReLU(),
            Linear(COMPARATOR_HIDDEN, 1, rng),
        )

    # -- inference-style API ---------------------------------------------

    def embed(self, obs: np.ndarray) -> np.ndarray:
        """Feature vector of a single (W, 3) observation."""
        if obs.shape != (self.n_rays, 3):
            raise ShapeMismatch(f"observation shape {obs.shape}")
        with no_grad():
            return self.g(obs.T[None, :, :]).data[0]

    def embed_batch(self, obs: np.ndarray) -> np.ndarray:
        """(B, W, 3) -> (B, EMBED_DIM)."""
        with no_grad():
            return self.g(np.transpose(obs, (0, 2, 1))).data

    def compare(self, e_a: np.ndarray, e_b: np.ndarray) -> float:
        """Sigmoid comparator score; argument order is (current, memory)."""
        return float(self.compare_many(e_a, e_b[None, :])[0])

    def compare_many(self, e_a: np.ndarray, entries: np.ndarray) -> np.ndarray:
        """Score e_a against each row of entries: (J,) in [0, 1]."""
        if e_a.shape != (EMBED_DIM,) or entries.ndim != 2 or entries.shape[1] != EMBED_DIM:
            raise ShapeMismatch(f"compare shapes {e_a.shape}, {entries.shape}")
        if entries.shape[0] == 0:
            return np.zeros(0)
        left = np.broadcast_to(e_a, entries.shape)
        x = np.concatenate([left, entries], axis=1)
        with no_grad():
            logits = self.f(x).data[:, 0]
        return 1.0 / (1.0 + np.exp(-logits))

    def score_pair(self, obs_a: np.ndarray, obs_b: np.ndarray) -> float:
        return self.compare(self.embed(obs_a), self.embed(obs_b))

    # -- training-time forward -------------------------------------------

    def pair_logits(self, obs_a: np.ndarray, obs_b: np.ndarray) -> Tensor:
        """(B, W, 3) x2 -> (B,) comparator logits, on the tape."""
        ea = self.g(np.transpose(obs_a, (0, 2, 1)))
        eb = self.g(np.transpose(obs_b, (0, 2, 1)))
        x = ag.concat([ea, eb], axis=1)
        return ag.reshape(self.f(x), (-1,))


def bce_with_logits(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Numerically stable binary cross-entropy on logits, mean over batch."""
    x = logits.data
    data = np.maximum(x, 0.0) - x * targets + np.log1p(np.exp(-np.abs(x)))
    sm = 1.0 / (1.0 + np.exp(-x))

    def backward(g):
        logits._accumulate(g * (sm - targets))

    out = ag._make(data, (logits,), backward)
    return ag.tmean(out)


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    train_accuracy: list[float] = field(default_factory=list)
    holdout_accuracy: list[float] = field(default_factory=list)


def _accuracy(model: ReachabilityModel, obs_a, obs_b, labels, batch: int = 256) -> float:
    correct = 0
    for lo in range(0, len(labels), batch):
        hi = lo + batch
        with no_grad():
            logits = model.pair_logits(obs_a[lo:hi], obs_b[lo:hi]).data
        correct += int(((logits > 0) == (labels[lo:hi] > 0.5)).sum())
    return correct / len(labels)


def train_reachability(
    pairs: list[LabeledPair],
    epochs: int = 20,
    batch: int = 128,
    lr: float = 0.1,
    momentum: float = 0.9,
    weight_decay: float = 1e-7,
    seed: int = 0,
    holdout_fraction: float = 0.1,
    n_rays: int = mz.DEFAULT_RAYS,
    lr_decay: float = 1.0,  # multiplier applied at 2/3 of the epochs
    log=None,
) -> tuple[ReachabilityModel, TrainHistory]:
    """SGD training of the siamese comparator with a by-walk holdout split."""
    from .nn.optim import SGDMomentum

    walk_ids = sorted({p.walk for p in pairs})
    n_hold = max(1, int(round(holdout_fraction * len(walk_ids)))) if len(walk_ids) > 1 else 0
    hold_walks = set(walk_ids[-n_hold:]) if n_hold else set()

    def stack(subset):
        a = np.stack([p.obs_a for p in subset])
        b = np.stack([p.obs_b for p in subset])
        y = np.array([p.label for p in subset], dtype=np.float64)
        return a, b, y

    train = [p for p in pairs if p.walk not in hold_walks]
    hold = [p for p in pairs if p.walk in hold_walks]
    a_tr, b_tr, y_tr = stack(train)
    if hold:
        a_ho, b_ho, y_ho = stack(hold)

    model = ReachabilityModel(n_rays=n_rays, seed=seed)
    opt = SGDMomentum(model.parameters(), lr=lr, momentum=momentum, weight_decay=weight_decay)
    rng = np.random.default_rng([seed, 202])
    history = TrainHistory()

    for epoch in range(epochs):
        if lr_decay != 1.0 and epoch == (2 * epochs) // 3:
            opt.lr *= lr_decay
        order = rng.permutation(len(train))
        losses = []
        for lo in range(0, len(train), batch):
            idx = order[lo : lo + batch]
            model.zero_grad()
            logits = model.pair_logits(a_tr[idx], b_tr[idx])
            loss = bce_with_logits(logits, y_tr[idx])
            loss.backward()
            opt.step()
            losses.append(float(loss.data))
        history.train_loss.append(float(np.mean(losses)))
        history.train_accuracy.append(_accuracy(model, a_tr, b_tr, y_tr))
        if hold:
            history.holdout_accuracy.append(_accuracy(model, a_ho, b_ho, y_ho))
        if log is not None:
            ho = history.holdout_accuracy[-1] if hold else float("nan")
            log(
                f"epoch {epoch}: loss {history.train_loss[-1]:.4f} "
                f"train acc {history.train_accuracy[-1]:.3f} holdout acc {ho:.3f}"
            )
    return model, history


# -- pair dataset file ----------------------------------------------------


def save_pairs(path: str | Path, pairs: list[LabeledPair], k: int) -> None:
    """Binary pair dataset: header (count, W_rays, k), then per record
    strip_a, strip_b as little-endian f64 and a label byte."""
    n_rays = pairs[0].obs_a.shape[0]
    with open(path, "wb") as fh:
        fh.write(struct.pack("<III", len(pairs), n_rays, k))
        for p in pairs:
            fh.write(np.ascontiguousarray(p.obs_a, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(p.obs_b, dtype="<f8").tobytes())
            fh.write(struct.pack("B", p.label))


def load_pairs(path: str | Path) -> tuple[list[LabeledPair], int]:
    data = Path(path).read_bytes()
    count, n_rays, k = struct.unpack_from("<III", data, 0)
    pos = 12
    strip_bytes = n_rays * 3 * 8
    pairs = []
    for _ in range(count):
        a = np.frombuffer(data, dtype="<f8", count=n_rays * 3, offset=pos).reshape(n_rays, 3)
        pos += strip_bytes
        b = np.frombuffer(data, dtype="<f8", count=n_rays * 3, offset=pos).reshape(n_rays, 3)
        pos += strip_bytes
        label = data[pos]
        pos += 1
        pairs.append(LabeledPair(a.copy(), b.copy(), int(label), walk=0, i=0, j=0))
    return pairs, k


def save_model(path: str | Path, model: ReachabilityModel) -> None:
    checkpoint.save_module(path, model)


def load_model(path: str | Path, n_rays: int = mz.DEFAULT_RAYS) -> ReachabilityModel:
    model = ReachabilityModel(n_rays=n_rays)
    checkpoint.load_module(path, model)
    return model
