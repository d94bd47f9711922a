"""Full network: word embedding, both concept encoders and the reconstructor."""

from __future__ import annotations

import hashlib
from typing import Optional, Sequence

import numpy as np
import torch
from torch import nn

from .anchors import DEFAULT_GAMMA, attention_weights
from .encoders import EncoderConfig, TextConceptEncoder, VideoConceptEncoder
from .exceptions import FormatError, IngestionError, InputError
from .kernel import DTYPE, make_generator
from .reconstructor import SemanticReconstructor
from .types import FeatureSequence, GaussianAnchor, QueryTokens
from .vocab import PAD_ID, Vocabulary

MODEL_FORMAT = "cfmr-model/1"


class ConceptModel(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        g = make_generator(cfg.seed)
        self.embedding = nn.Parameter(
            torch.randn(cfg.vocab_size, cfg.text_dim, generator=g, dtype=DTYPE) / cfg.text_dim ** 0.5)
        self.text_encoder = TextConceptEncoder(cfg, g)
        self.video_encoder = VideoConceptEncoder(cfg, g)
        self.reconstructor = SemanticReconstructor(cfg, g)

    def embed(self, ids: torch.Tensor) -> torch.Tensor:
        return self.embedding[ids]

    def encode_queries(self, ids: torch.Tensor, key_mask: Optional[torch.Tensor] = None):
        """Concepts ``(B, l_C, d_h)`` and hidden states for padded token ids ``(B, T)``."""
        return self.text_encoder(self.embed(ids), key_mask=key_mask)

    def encode_videos(self, features, row_weights=None, key_mask=None):
        return self.video_encoder(features, row_weights=row_weights, key_mask=key_mask)

    def reconstruct_logits(self, concepts, masked_ids, key_mask=None):
        return self.reconstructor(concepts, self.embed(masked_ids), key_mask=key_mask)

    def text_parameters(self):
        """Parameters used on the online (query) path."""
        return [self.embedding, *self.text_encoder.parameters()]

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for name, t in sorted(self.state_dict().items()):
            h.update(name.encode())
            h.update(t.detach().cpu().contiguous().numpy().tobytes())
        return h.hexdigest()


def pad_queries(queries: Sequence[QueryTokens]):
    """Right-pad token ids; returns ``(ids, key_mask)``."""
    t = max(len(q) for q in queries)
    ids = torch.full((len(queries), t), PAD_ID, dtype=torch.long)
    mask = torch.zeros(len(queries), t, dtype=torch.bool)
    for i, q in enumerate(queries):
        ids[i, :len(q)] = torch.tensor(q.ids)
        mask[i, :len(q)] = True
    return ids, mask


def encode_text(model: ConceptModel, query: QueryTokens):
    """Concepts ``(l_C, d_h)`` and the ``len(query) + 1`` final hidden states."""
    if len(query) > model.cfg.max_query_len:
        raise InputError(f"query length {len(query)} exceeds {model.cfg.max_query_len}")
    if max(query.ids) >= model.cfg.vocab_size:
        raise InputError("token id outside the model vocabulary")
    ids = torch.tensor([query.ids])
    concepts, hidden = model.encode_queries(ids)
    return concepts[0], hidden[0]


def encode_video(model: ConceptModel, features, anchor: Optional[GaussianAnchor] = None,
                 gamma: float = DEFAULT_GAMMA, return_attention: bool = False):
    """Concepts of one video under one anchor weighting (``None`` = whole video)."""
    if isinstance(features, FeatureSequence):
        features = features.features
    x = torch.as_tensor(np.asarray(features), dtype=DTYPE)
    if x.shape[0] > model.cfg.max_video_len:
        raise InputError(f"video length {x.shape[0]} exceeds {model.cfg.max_video_len}")
    if x.shape[1] != model.cfg.video_dim:
        raise IngestionError(f"feature dim {x.shape[1]} != model video dim {model.cfg.video_dim}")
    w = None
    if anchor is not None:
        w = torch.as_tensor(attention_weights(anchor, x.shape[0], gamma), dtype=DTYPE)[None]
    out = model.video_encoder(x[None], row_weights=w, return_attention=return_attention)
    if return_attention:
        return out[0][0], [a[0] for a in out[1]]
    return out[0]


def save_model(model: ConceptModel, path, vocab: Optional[Vocabulary] = None, extra=None):
    torch.save({
        "format": MODEL_FORMAT,
        "config": model.cfg.to_dict(),
        "state": model.state_dict(),
        "vocab": vocab.to_dict() if vocab is not None else None,
        "extra": extra or {},
    }, path)


def load_model(path):
    """Returns ``(model, vocab, extra)``."""
    try:
        blob = torch.load(path, weights_only=True)
    except Exception as exc:
        raise FormatError(f"cannot read model file {path}: {exc}") from exc
    if not isinstance(blob, dict) or blob.get("format") != MODEL_FORMAT:
        raise FormatError(f"{path} is not a model file")
    model = ConceptModel(EncoderConfig(**blob["config"]))
    model.load_state_dict(blob["state"])
    model.eval()
    vocab = Vocabulary.from_dict(blob["vocab"]) if blob["vocab"] else None
    return model, vocab, blob["extra"]
