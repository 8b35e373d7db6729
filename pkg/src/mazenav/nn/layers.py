"""Neural-net layers built on the autograd tape."""
from __future__ import annotations

import numpy as np

from ..errors import NoForwardPass, ShapeMismatch
from . import autograd as ag
from .autograd import Tensor


def _uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    # He-style bound; keeps activation variance through deep ReLU stacks
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Module:
    """Base class: named parameters, forward via __call__."""

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = []
        for name, attr in vars(self).items():
            if isinstance(attr, Tensor) and attr.requires_grad:
                out.append((name, attr))
            elif isinstance(attr, Module):
                out.extend((f"{name}.{sub}", p) for sub, p in attr.named_parameters())
            elif isinstance(attr, (list, tuple)):
                for i, item in enumerate(attr):
                    if isinstance(item, Module):
                        out.extend(
                            (f"{name}.{i}.{sub}", p) for sub, p in item.named_parameters()
                        )
        return out

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Linear(Module):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator):
        self.weight = Tensor(_uniform_init(rng, (in_dim, out_dim), in_dim), requires_grad=True)
        self.bias = Tensor(_uniform_init(rng, (out_dim,), in_dim), requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        if x.data.shape[-1] != self.weight.data.shape[0]:
            raise ShapeMismatch(
                f"Linear expects {self.weight.data.shape[0]}, got {x.data.shape[-1]}"
            )
        return (x @ self.weight) + self.bias


class ReLU(Module):
    def forward(self, x: Tensor) -> Tensor:
        return ag.relu(x)


class Sigmoid(Module):
    def forward(self, x: Tensor) -> Tensor:
        return ag.sigmoid(x)


class Softmax(Module):
    def forward(self, x: Tensor) -> Tensor:
        return ag.softmax(x)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.eps = eps
        self.gamma = Tensor(np.ones(dim), requires_grad=True)
        self.beta = Tensor(np.zeros(dim), requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        return ag.layer_norm_core(x, self.eps) * self.gamma + self.beta


class Conv1d(Module):
    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        stride: int,
        rng: np.random.Generator,
        padding: int | None = None,
    ):
        self.stride = stride
        self.padding = kernel_size // 2 if padding is None else padding
        fan_in = in_channels * kernel_size
        self.weight = Tensor(
            _uniform_init(rng, (out_channels, in_channels, kernel_size), fan_in),
            requires_grad=True,
        )
        self.bias = Tensor(_uniform_init(rng, (out_channels,), fan_in), requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        return ag.conv1d(x, self.weight, self.bias, self.stride, self.padding)


class Embedding(Module):
    def __init__(self, count: int, dim: int, rng: np.random.Generator):
        self.table = Tensor(rng.normal(0.0, 0.02, size=(count, dim)), requires_grad=True)

    def forward(self, indices: np.ndarray) -> Tensor:
        return ag.take_rows(self.table, indices)


class MultiHeadAttention(Module):
    """Scaled dot-product attention of a single query row over J memory rows.

    model_dim is the residual-stream width; hidden_dim the total attention
    width split across heads. Empty memory yields a zero context vector.
    """

    def __init__(self, model_dim: int, hidden_dim: int, n_heads: int, rng: np.random.Generator):
        if hidden_dim % n_heads != 0:
            raise ShapeMismatch(f"hidden dim {hidden_dim} not divisible by {n_heads} heads")
        self.n_heads = n_heads
        self.head_dim = hidden_dim // n_heads
        self.model_dim = model_dim
        self.wq = Linear(model_dim, hidden_dim, rng)
        self.wk = Linear(model_dim, hidden_dim, rng)
        self.wv = Linear(model_dim, hidden_dim, rng)
        self.wo = Linear(hidden_dim, model_dim, rng)

    def forward(self, query: Tensor, memory: Tensor, mask: np.ndarray | None = None) -> Tensor:
        """query: (B, D); memory: (B, J, D); mask: (B, J) bool, True = valid.

        Returns (B, D). J = 0 returns zeros.
        """
        B = query.data.shape[0]
        J = memory.data.shape[1]
        if J == 0:
            return Tensor(np.zeros((B, self.model_dim)))
        if mask is None:
            mask = np.ones((B, J), dtype=bool)
        H, hd = self.n_heads, self.head_dim
        q = ag.reshape(self.wq(query), (B, H, hd))  # (B,H,hd)
        k = ag.reshape(self.wk(memory), (B, J, H, hd))
        v = ag.reshape(self.wv(memory), (B, J, H, hd))
        # scores (B,H,J) = sum_d q[b,h,d] * k[b,j,h,d] / sqrt(hd)
        kt = _transpose(k, (0, 2, 3, 1))  # (B,H,hd,J)
        q3 = ag.reshape(q, (B, H, 1, hd))
        scores = ag.scale(ag.matmul(q3, kt), 1.0 / np.sqrt(hd))  # (B,H,1,J)
        weights = ag.masked_softmax(scores, mask[:, None, None, :])
        vt = _transpose(v, (0, 2, 1, 3))  # (B,H,J,hd)
        ctx = ag.matmul(weights, vt)  # (B,H,1,hd)
        ctx = ag.reshape(ctx, (B, H * hd))
        out = self.wo(ctx)
        row_valid = mask.any(axis=1)
        if not row_valid.all():
            # rows with no valid memory keep the zero-context convention
            # (otherwise the output projection bias would leak through)
            out = out * Tensor(row_valid[:, None].astype(np.float64))
        return out


def _transpose(a: Tensor, axes: tuple) -> Tensor:
    data = np.transpose(a.data, axes)
    inv = np.argsort(axes)

    def backward(g):
        a._accumulate(np.transpose(g, inv))

    return ag._make(data, (a,), backward)


class Sequential(Module):
    """Composed layer stack with an explicit forward/backward contract."""

    def __init__(self, *layers: Module):
        self.layers = list(layers)
        self._last_output: Tensor | None = None

    def forward(self, x) -> Tensor:
        if not isinstance(x, Tensor):
            x = Tensor(x)
        for layer in self.layers:
            x = layer(x)
        if ag.grad_enabled():
            self._last_output = x
        return x

    def backward(self, upstream: np.ndarray) -> None:
        if self._last_output is None:
            raise NoForwardPass("backward called without a preceding forward")
        out = self._last_output
        self._last_output = None
        out.backward(upstream)
