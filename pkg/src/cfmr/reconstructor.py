"""Masked-query reconstruction from concepts (training only).

A stack of decoder blocks reads the masked query bidirectionally and
cross-attends to the concept rows; a linear head and softmax give a word
distribution per position. The per-anchor reconstruction loss picks the
optimal positive anchor and drives the point-guided contrastive hinge.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
import torch
from torch import nn

from .encoders import EncoderConfig
from .exceptions import InputError, ParameterError
from .kernel import DecoderLayer, Linear, layer_norm, softmax_rows
from .types import QueryTokens
from .vocab import MASK_ID


@dataclass(frozen=True)
class MaskedQuery:
    ids: Tuple[int, ...]
    mask: Tuple[bool, ...]
    targets: Tuple[int, ...]

    @property
    def masked_positions(self):
        return tuple(i for i, m in enumerate(self.mask) if m)


def mask_query(query: QueryTokens, ratio: float, rng) -> MaskedQuery:
    """Replace ``ceil(ratio * #content)`` content tokens with the mask id.

    ``rng`` is a ``numpy.random.Generator`` or an integer seed.
    """
    if not 0 < ratio <= 1:
        raise ParameterError(f"mask ratio must lie in (0, 1], got {ratio}")
    content = query.content_positions
    if not content:
        raise InputError("query has no content tokens to mask")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    k = math.ceil(ratio * len(content) - 1e-12)
    chosen = set(int(i) for i in rng.choice(content, size=k, replace=False))
    ids = tuple(MASK_ID if i in chosen else t for i, t in enumerate(query.ids))
    mask = tuple(i in chosen for i in range(len(query)))
    return MaskedQuery(ids, mask, query.ids)


class SemanticReconstructor(nn.Module):
    def __init__(self, cfg: EncoderConfig, generator):
        super().__init__()
        self.proj = Linear(cfg.text_dim, cfg.hidden_dim, generator)
        self.pos = nn.Parameter(0.02 * torch.randn(cfg.max_query_len, cfg.hidden_dim,
                                                   generator=generator, dtype=torch.float64))
        self.layers = nn.ModuleList(
            DecoderLayer(cfg.hidden_dim, cfg.heads, cfg.ff_dim, generator)
            for _ in range(cfg.decoder_layers))
        self.norm = layer_norm(cfg.hidden_dim)
        self.head = Linear(cfg.hidden_dim, cfg.vocab_size, generator)

    def forward(self, concepts, masked_features, key_mask=None):
        """Word logits ``(B, T, vocab)`` for masked-query features ``(B, T, d_q)``.

        Concept rows get no positional encoding, so the output is invariant
        to their order.
        """
        t = masked_features.shape[1]
        h = self.proj(masked_features) + self.pos[:t]
        for layer in self.layers:
            h = layer(h, concepts, key_mask=key_mask)
        return self.head(self.norm(h))


def reconstruct(concepts, masked_features, decoder: SemanticReconstructor, key_mask=None):
    return softmax_rows(decoder(concepts, masked_features, key_mask))


def masked_nll(log_probs: torch.Tensor, targets: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Mean negative log-likelihood of ``targets`` over positions where ``mask`` is set.

    Shapes: ``log_probs`` ``(..., T, W)``, ``targets``/``mask`` ``(..., T)``.
    Returns one value per leading index.
    """
    picked = log_probs.gather(-1, targets.unsqueeze(-1)).squeeze(-1)
    # where() rather than a product: unmasked -inf entries must not become nan
    picked = torch.where(mask, picked, torch.zeros_like(picked))
    m = mask.to(log_probs.dtype)
    return -picked.sum(-1) / m.sum(-1).clamp_min(1.0)


def reconstruction_loss(p_video: torch.Tensor, masked: MaskedQuery,
                        p_text: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Masked-position log-likelihood loss of one or both word distributions."""
    targets = torch.tensor(masked.targets)
    mask = torch.tensor(masked.mask)
    loss = masked_nll(torch.log(p_video), targets, mask)
    if p_text is not None:
        loss = loss + masked_nll(torch.log(p_text), targets, mask)
    return loss


def select_optimal_anchor(losses: Sequence[float], widths: Sequence[float]) -> int:
    """Index of the smallest loss; ties go to the narrowest anchor."""
    if len(losses) == 0:
        raise InputError("need at least one positive anchor")
    losses = [float(x) for x in losses]
    return min(range(len(losses)), key=lambda i: (losses[i], widths[i]))


def pcl_loss(rec_optimal, rec_negative, rec_whole, alpha1: float = 0.2, alpha2: float = 0.1,
             has_negative=None):
    """Two hinges pushing the optimal anchor's loss below negatives' and the whole video's.

    ``rec_negative`` is the mean over negative anchors. A sample without
    negatives passes ``None`` (or ``has_negative=False`` in batched form) and
    its first hinge is dropped.
    """
    o = torch.as_tensor(rec_optimal, dtype=torch.float64)
    loss = torch.relu(o - rec_whole + alpha2)
    if rec_negative is not None:
        neg = torch.relu(o - rec_negative + alpha1)
        if has_negative is not None:
            neg = torch.where(torch.as_tensor(has_negative), neg, torch.zeros_like(neg))
        loss = neg + loss
    return loss
