"""Text and video concept encoders.

Both encoders append a learned CLS token at the end of the sequence, run a
stack of pre-norm transformer blocks and decompose the final CLS state into
``n_concepts`` vectors. The video encoder additionally re-weights every
attention row by an anchor's Gaussian density. The two encoders never see
each other's tokens.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import torch
from torch import nn

from .exceptions import ConfigurationError, InputError
from .kernel import DTYPE, EncoderLayer, Linear, layer_norm


@dataclass
class EncoderConfig:
    hidden_dim: int = 32
    layers: int = 2
    heads: int = 4
    max_video_len: int = 48
    max_query_len: int = 20
    n_concepts: int = 4
    video_dim: int = 8
    text_dim: int = 32
    vocab_size: int = 40
    ff_mult: int = 2
    decoder_layers: int = 1
    seed: int = 0

    def __post_init__(self):
        for name in ("hidden_dim", "layers", "heads", "max_video_len", "max_query_len",
                     "n_concepts", "video_dim", "text_dim", "vocab_size", "ff_mult",
                     "decoder_layers"):
            if int(getattr(self, name)) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        if self.hidden_dim % self.heads:
            raise ConfigurationError(
                f"hidden_dim {self.hidden_dim} not divisible by heads {self.heads}")
        if self.n_concepts > self.hidden_dim:
            raise ConfigurationError("n_concepts must not exceed hidden_dim")

    @property
    def ff_dim(self) -> int:
        return self.ff_mult * self.hidden_dim

    def to_dict(self):
        return asdict(self)


def _small_init(generator, *shape):
    return nn.Parameter(0.02 * torch.randn(*shape, generator=generator, dtype=DTYPE))


class ConceptMLP(nn.Module):
    """Two-layer ReLU MLP ``hidden -> hidden -> n_concepts * hidden``."""

    def __init__(self, hidden: int, n_concepts: int, generator):
        super().__init__()
        self.fc1 = Linear(hidden, hidden, generator)
        self.fc2 = Linear(hidden, n_concepts * hidden, generator)
        self.n_concepts = n_concepts

    def forward(self, x):
        return self.fc2(torch.relu(self.fc1(x)))


def make_concepts(cls_state: torch.Tensor, mlp: nn.Module, n_concepts: int) -> torch.Tensor:
    """Project a CLS state and split the output into ``n_concepts`` equal rows."""
    out = mlp(cls_state)
    total = out.shape[-1]
    if total % n_concepts:
        raise ConfigurationError(f"MLP output dim {total} not divisible into {n_concepts} concepts")
    return out.reshape(*out.shape[:-1], n_concepts, total // n_concepts)


def diversity_loss(concepts: torch.Tensor) -> torch.Tensor:
    """Squared Frobenius distance between the concept Gram matrix and identity."""
    gram = concepts @ concepts.transpose(-1, -2)
    eye = torch.eye(gram.shape[-1], dtype=gram.dtype)
    return ((gram - eye) ** 2).sum(dim=(-2, -1))


class _SequenceEncoder(nn.Module):
    """Input projection + positions + trailing CLS + encoder stack + concept MLP."""

    def __init__(self, in_dim: int, max_len: int, cfg: EncoderConfig, generator):
        super().__init__()
        self.cfg = cfg
        self.max_len = max_len
        self.proj = Linear(in_dim, cfg.hidden_dim, generator)
        self.pos = _small_init(generator, max_len, cfg.hidden_dim)
        self.cls = _small_init(generator, cfg.hidden_dim)
        self.layers = nn.ModuleList(
            EncoderLayer(cfg.hidden_dim, cfg.heads, cfg.ff_dim, generator) for _ in range(cfg.layers))
        self.norm = layer_norm(cfg.hidden_dim)
        self.mlp = ConceptMLP(cfg.hidden_dim, cfg.n_concepts, generator)

    def forward(self, x, key_mask=None, row_weights=None, return_attention=False):
        """``x``: ``(B, T, in_dim)``; ``key_mask``: ``(B, T)`` bool for padded batches.

        Returns ``(concepts, hidden)`` where ``hidden`` is ``(B, T + 1, d_h)``
        with the CLS state last; with ``return_attention`` the per-layer
        attention probabilities are appended.
        """
        b, t, _ = x.shape
        if t > self.max_len:
            raise InputError(f"sequence length {t} exceeds maximum {self.max_len}")
        h = self.proj(x) + self.pos[:t]
        h = torch.cat([h, self.cls.expand(b, 1, -1)], dim=1)
        if key_mask is not None:
            key_mask = torch.cat([key_mask, torch.ones(b, 1, dtype=torch.bool)], dim=1)
        attn = []
        for layer in self.layers:
            if return_attention:
                h, probs = layer(h, row_weights=row_weights, key_mask=key_mask, return_probs=True)
                attn.append(probs)
            else:
                h = layer(h, row_weights=row_weights, key_mask=key_mask)
        h = self.norm(h)
        concepts = make_concepts(h[:, -1], self.mlp, self.cfg.n_concepts)
        if return_attention:
            return concepts, h, attn
        return concepts, h


class TextConceptEncoder(_SequenceEncoder):
    def __init__(self, cfg: EncoderConfig, generator):
        super().__init__(cfg.text_dim, cfg.max_query_len, cfg, generator)


class VideoConceptEncoder(_SequenceEncoder):
    def __init__(self, cfg: EncoderConfig, generator):
        super().__init__(cfg.video_dim, cfg.max_video_len, cfg, generator)

    def forward(self, x, row_weights=None, key_mask=None, return_attention=False):
        out = super().forward(x, key_mask=key_mask, row_weights=row_weights,
                              return_attention=return_attention)
        if return_attention:
            return out[0], out[2]
        return out[0]
