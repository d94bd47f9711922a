"""Dense numeric layer: f64 tensors, neural layers, gradients and Adam.

Tensors are ``torch.Tensor`` in float64. Autograd is torch's; the layers
(linear, attention with row re-weighting, encoder/decoder blocks) are
defined here so their semantics are pinned independently of torch.nn
defaults (weight layout ``x @ W + b``, seeded Xavier-uniform init,
post-softmax re-weighting).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence

import torch
from torch import nn

from .exceptions import ConfigurationError, DimensionError, UsageError

DTYPE = torch.float64


def make_generator(seed: int) -> torch.Generator:
    g = torch.Generator()
    g.manual_seed(int(seed))
    return g


def xavier_uniform(fan_in: int, fan_out: int, generator: torch.Generator) -> torch.Tensor:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    w = torch.rand(fan_in, fan_out, generator=generator, dtype=DTYPE)
    return (2.0 * w - 1.0) * bound


class Linear(nn.Module):
    """Affine map ``x @ W + b`` with ``W`` of shape ``(in, out)``."""

    def __init__(self, in_dim: int, out_dim: int, generator: torch.Generator):
        super().__init__()
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.weight = nn.Parameter(xavier_uniform(in_dim, out_dim, generator))
        self.bias = nn.Parameter(torch.zeros(out_dim, dtype=DTYPE))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return linear_forward(x, self)


def linear_forward(x: torch.Tensor, layer: Linear) -> torch.Tensor:
    if x.shape[-1] != layer.weight.shape[0]:
        raise DimensionError(
            f"input dim {x.shape[-1]} does not match weight input dim {layer.weight.shape[0]}")
    return x @ layer.weight + layer.bias


def softmax_rows(x: torch.Tensor) -> torch.Tensor:
    """Row-wise softmax over the last axis with max subtraction."""
    shifted = x - x.amax(dim=-1, keepdim=True)
    e = torch.exp(shifted)
    return e / e.sum(dim=-1, keepdim=True)


def _split_heads(x: torch.Tensor, heads: int) -> torch.Tensor:
    *batch, t, d = x.shape
    return x.reshape(*batch, t, heads, d // heads).transpose(-3, -2)


def _merge_heads(x: torch.Tensor) -> torch.Tensor:
    *batch, h, t, dh = x.shape
    return x.transpose(-3, -2).reshape(*batch, t, h * dh)


def multihead_attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor, heads: int,
                        row_weights: Optional[torch.Tensor] = None,
                        key_mask: Optional[torch.Tensor] = None,
                        return_probs: bool = False):
    """Scaled dot-product attention over already-projected ``q, k, v``.

    ``q`` is ``(*batch, Tq, d)``; ``k, v`` are ``(*batch, Tk, d)``.
    ``row_weights`` (``(*batch, Tk)``, non-negative) multiplies every
    post-softmax attention row element-wise, after which rows are
    renormalized to sum to one. ``key_mask`` (bool, True = attend) removes
    padded keys before the softmax.
    """
    d = q.shape[-1]
    if d % heads != 0:
        raise ConfigurationError(f"model dim {d} not divisible by {heads} heads")
    if k.shape[-2] != v.shape[-2]:
        raise DimensionError("key and value counts differ")
    if row_weights is not None and row_weights.shape[-1] != k.shape[-2]:
        raise DimensionError(
            f"row_weights length {row_weights.shape[-1]} != key count {k.shape[-2]}")
    qh, kh, vh = _split_heads(q, heads), _split_heads(k, heads), _split_heads(v, heads)
    scores = qh @ kh.transpose(-1, -2) / math.sqrt(d // heads)
    if key_mask is not None:
        scores = scores.masked_fill(~key_mask[..., None, None, :], float("-inf"))
    probs = softmax_rows(scores)
    if row_weights is not None:
        probs = probs * row_weights[..., None, None, :]
        probs = probs / probs.sum(dim=-1, keepdim=True)
    out = _merge_heads(probs @ vh)
    if return_probs:
        return out, probs
    return out


class MultiHeadAttention(nn.Module):
    def __init__(self, dim: int, heads: int, generator: torch.Generator):
        super().__init__()
        if dim % heads != 0:
            raise ConfigurationError(f"model dim {dim} not divisible by {heads} heads")
        self.heads = heads
        self.q_proj = Linear(dim, dim, generator)
        self.k_proj = Linear(dim, dim, generator)
        self.v_proj = Linear(dim, dim, generator)
        self.out_proj = Linear(dim, dim, generator)

    def forward(self, x, context=None, row_weights=None, key_mask=None, return_probs=False):
        context = x if context is None else context
        res = multihead_attention(self.q_proj(x), self.k_proj(context), self.v_proj(context),
                                  self.heads, row_weights=row_weights, key_mask=key_mask,
                                  return_probs=return_probs)
        if return_probs:
            out, probs = res
            return self.out_proj(out), probs
        return self.out_proj(res)


class FeedForward(nn.Module):
    def __init__(self, dim: int, hidden: int, generator: torch.Generator):
        super().__init__()
        self.fc1 = Linear(dim, hidden, generator)
        self.fc2 = Linear(hidden, dim, generator)

    def forward(self, x):
        return self.fc2(torch.relu(self.fc1(x)))


def layer_norm(dim: int) -> nn.LayerNorm:
    return nn.LayerNorm(dim, dtype=DTYPE)


class EncoderLayer(nn.Module):
    """Pre-norm transformer encoder block with optional attention re-weighting."""

    def __init__(self, dim: int, heads: int, ff_dim: int, generator: torch.Generator):
        super().__init__()
        self.norm1 = layer_norm(dim)
        self.attn = MultiHeadAttention(dim, heads, generator)
        self.norm2 = layer_norm(dim)
        self.ff = FeedForward(dim, ff_dim, generator)

    def forward(self, x, row_weights=None, key_mask=None, return_probs=False):
        h = self.norm1(x)
        res = self.attn(h, row_weights=row_weights, key_mask=key_mask, return_probs=return_probs)
        a, probs = res if return_probs else (res, None)
        x = x + a
        x = x + self.ff(self.norm2(x))
        return (x, probs) if return_probs else x


class DecoderLayer(nn.Module):
    """Pre-norm decoder block: bidirectional self-attention, cross-attention, feed-forward."""

    def __init__(self, dim: int, heads: int, ff_dim: int, generator: torch.Generator):
        super().__init__()
        self.norm1 = layer_norm(dim)
        self.self_attn = MultiHeadAttention(dim, heads, generator)
        self.norm2 = layer_norm(dim)
        self.cross_attn = MultiHeadAttention(dim, heads, generator)
        self.norm3 = layer_norm(dim)
        self.ff = FeedForward(dim, ff_dim, generator)

    def forward(self, x, memory, key_mask=None):
        h = self.norm1(x)
        x = x + self.self_attn(h, key_mask=key_mask)
        x = x + self.cross_attn(self.norm2(x), context=memory)
        return x + self.ff(self.norm3(x))


def backward(loss: torch.Tensor) -> None:
    """Populate ``.grad`` on every parameter that contributed to ``loss``."""
    if not isinstance(loss, torch.Tensor) or loss.grad_fn is None:
        raise UsageError("backward called on a value with no recorded forward pass")
    if loss.numel() != 1:
        raise UsageError("backward needs a scalar loss")
    loss.backward()


@dataclass
class AdamState:
    """Adam moments and step counter (backed by ``torch.optim.Adam``)."""

    params: List[nn.Parameter]
    lr: float = 4e-4
    betas: Sequence[float] = (0.9, 0.999)
    eps: float = 1e-8
    optimizer: torch.optim.Adam = field(init=False, repr=False)

    def __post_init__(self):
        self.params = [p for p in self.params if p.requires_grad]
        for p in self.params:
            p.grad = torch.zeros_like(p)
        self.optimizer = torch.optim.Adam(self.params, lr=self.lr, betas=tuple(self.betas),
                                          eps=self.eps)

    @property
    def step_count(self) -> int:
        states = [self.optimizer.state[p] for p in self.params if p in self.optimizer.state]
        return int(states[0]["step"]) if states else 0


def make_adam(params: Iterable[nn.Parameter], lr: float = 4e-4, betas=(0.9, 0.999),
              eps: float = 1e-8) -> AdamState:
    return AdamState(list(params), lr=lr, betas=betas, eps=eps)


def adam_step(state: AdamState) -> None:
    """Apply one Adam update and clear the gradients."""
    state.optimizer.step()
    state.optimizer.zero_grad(set_to_none=False)


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())
