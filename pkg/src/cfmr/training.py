"""Training on point-annotated samples.

Per sample: positives centered on the point at every scale, one negative
per complement segment, and the unweighted whole video are all encoded in
one batched pass; the masked query is reconstructed under each of them and
under the text concepts. The narrowest lowest-loss positive is the optimal
anchor, and the diversity, reconstruction, contrastive and alignment terms
are combined into the total loss.
"""

from __future__ import annotations

import copy
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
import yaml

from .anchors import DEFAULT_GAMMA, attention_weights, training_anchor_set
from .encoders import EncoderConfig, diversity_loss
from .exceptions import ConfigurationError, InputError, NumericalError, ValidationError
from .kernel import DTYPE, adam_step, backward, make_adam
from .model import ConceptModel, pad_queries
from .objectives import SIM_MODES, cma_loss, sim, total_loss
from .reconstructor import mask_query, masked_nll, pcl_loss
from .types import IntervalSample, PointSample

log = logging.getLogger(__name__)

LOSS_NAMES = ("conc", "rec", "pcl", "cma")
MAX_NEGATIVES = 2


@dataclass
class TrainConfig:
    alpha1: float = 0.2
    alpha2: float = 0.1
    alpha3: float = 0.1
    alpha4: float = 0.2
    beta1: float = 1.0
    beta2: float = 1.0
    lr: float = 4e-4
    batch_size: int = 32
    epochs: int = 30
    patience: int = 5
    mask_ratio: float = 0.5
    seed: int = 0
    gamma: float = DEFAULT_GAMMA
    v_max: float = 0.55
    n_scales: int = 3
    centers: int = 8
    nms_iou: float = 0.7
    sim_mode: str = "rowwise"
    ablate: Tuple[str, ...] = ()
    freeze_encoders: bool = False
    encoder: EncoderConfig = field(default_factory=EncoderConfig)

    def __post_init__(self):
        if isinstance(self.encoder, dict):
            self.encoder = EncoderConfig(**self.encoder)
        self.ablate = tuple(self.ablate)
        self.validate()

    def validate(self):
        if not self.alpha1 > self.alpha2:
            raise ValidationError(f"alpha1 ({self.alpha1}) must exceed alpha2 ({self.alpha2})")
        if not self.alpha3 <= self.alpha4:
            raise ValidationError(f"alpha3 ({self.alpha3}) must not exceed alpha4 ({self.alpha4})")
        if min(self.alpha1, self.alpha2, self.alpha3, self.alpha4) < 0:
            raise ValidationError("margins must be non-negative")
        if self.beta1 < 0 or self.beta2 < 0:
            raise ValidationError("balance factors must be non-negative")
        if not self.lr > 0 or self.batch_size < 1 or self.epochs < 0 or self.patience < 1:
            raise ValidationError("lr, batch_size, epochs and patience must be positive")
        if not 0 < self.mask_ratio <= 1:
            raise ValidationError("mask_ratio must lie in (0, 1]")
        if not 0 < self.v_max <= 1 or self.n_scales < 1 or self.centers < 1 or not self.gamma > 0:
            raise ValidationError("invalid anchor parameters")
        if self.sim_mode not in SIM_MODES:
            raise ValidationError(f"sim_mode must be one of {SIM_MODES}")
        unknown = set(self.ablate) - set(LOSS_NAMES)
        if unknown:
            raise ValidationError(f"unknown losses in ablate: {sorted(unknown)}")

    def to_dict(self):
        d = asdict(self)
        d["ablate"] = list(self.ablate)
        return d

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path):
        with open(path) as f:
            d = yaml.safe_load(f) or {}
        return cls.from_dict(d)


@dataclass
class TrainResult:
    model: ConceptModel
    log: List[dict]


def _batch_tensors(batch: Sequence[PointSample], cfg: TrainConfig):
    """Stack videos, per-slot attention weights and validity of negative slots.

    Slots per sample: ``n_scales`` positives (increasing width), up to two
    negatives, then the whole video.
    """
    n_pos = cfg.n_scales
    slots = n_pos + MAX_NEGATIVES + 1
    t = max(s.video.length for s in batch)
    d_v = batch[0].video.dim
    feats = torch.zeros(len(batch), t, d_v, dtype=DTYPE)
    frame_mask = torch.zeros(len(batch), t, dtype=torch.bool)
    weights = torch.zeros(len(batch), slots, t + 1, dtype=DTYPE)
    neg_valid = torch.zeros(len(batch), MAX_NEGATIVES, dtype=torch.bool)
    for i, s in enumerate(batch):
        n = s.video.length
        feats[i, :n] = torch.as_tensor(s.video.features)
        frame_mask[i, :n] = True
        anchors = training_anchor_set(s.point, cfg.v_max, cfg.n_scales, length=n)
        per_slot = list(anchors.positives) + list(anchors.negatives)
        per_slot += [None] * (MAX_NEGATIVES - len(anchors.negatives)) + [None]
        neg_valid[i, :len(anchors.negatives)] = True
        for j, a in enumerate(per_slot):
            w = torch.as_tensor(attention_weights(a, n, cfg.gamma))
            weights[i, j, :n] = w[:n]
            weights[i, j, t] = 1.0
    return feats, frame_mask, weights, neg_valid


def batch_losses(model: ConceptModel, batch: Sequence[PointSample], cfg: TrainConfig,
                 rng: np.random.Generator) -> Dict[str, torch.Tensor]:
    """Mean loss components over ``batch`` (each a scalar tensor)."""
    b = len(batch)
    n_pos = cfg.n_scales
    feats, frame_mask, weights, neg_valid = _batch_tensors(batch, cfg)
    slots = weights.shape[1]
    t, d_v = feats.shape[1:]

    c_video = model.encode_videos(
        feats[:, None].expand(b, slots, t, d_v).reshape(b * slots, t, d_v),
        row_weights=weights.reshape(b * slots, t + 1),
        key_mask=frame_mask[:, None].expand(b, slots, t).reshape(b * slots, t))
    c_video = c_video.reshape(b, slots, *c_video.shape[1:])
    ids, qmask = pad_queries([s.query for s in batch])
    c_query, _ = model.encode_queries(ids, qmask)

    targets = ids
    m_ids = ids.clone()
    rec_mask = torch.zeros_like(qmask)
    for i, s in enumerate(batch):
        m = mask_query(s.query, cfg.mask_ratio, rng)
        m_ids[i, :len(m.ids)] = torch.tensor(m.ids)
        rec_mask[i, :len(m.mask)] = torch.tensor(m.mask)

    need_rec_grad = not {"rec", "pcl"} <= set(cfg.ablate)
    with torch.set_grad_enabled(torch.is_grad_enabled() and need_rec_grad):
        concepts = torch.cat([c_video, c_query[:, None]], dim=1)  # (b, slots + 1, l_C, d_h)
        k = slots + 1
        logits = model.reconstruct_logits(
            concepts.reshape(b * k, *concepts.shape[2:]),
            m_ids[:, None].expand(b, k, -1).reshape(b * k, -1),
            key_mask=qmask[:, None].expand(b, k, -1).reshape(b * k, -1))
        nll = masked_nll(torch.log_softmax(logits, -1),
                         targets[:, None].expand(b, k, -1).reshape(b * k, -1),
                         rec_mask[:, None].expand(b, k, -1).reshape(b * k, -1)).reshape(b, k)

    # positives are ordered by width, and argmin returns the first minimum
    optimal = nll[:, :n_pos].detach().argmin(dim=1)
    rows = torch.arange(b)
    rec_opt = nll[rows, optimal]
    neg_count = neg_valid.sum(1)
    has_neg = neg_count > 0
    negf = neg_valid.to(DTYPE)
    rec_neg = (nll[:, n_pos:n_pos + MAX_NEGATIVES] * negf).sum(1) / neg_count.clamp_min(1)
    rec_whole = nll[:, -2]
    rec_text = nll[:, -1]

    l_rec = rec_opt + rec_text
    l_pcl = pcl_loss(rec_opt, rec_neg, rec_whole, cfg.alpha1, cfg.alpha2, has_negative=has_neg)

    c_opt = c_video[rows, optimal]
    sim_negs = sim(c_video[:, n_pos:n_pos + MAX_NEGATIVES], c_query[:, None], cfg.sim_mode)
    sim_neg = (sim_negs * negf).sum(1) / neg_count.clamp_min(1)
    l_cma = cma_loss(c_opt, None, c_video[:, -1], c_query, cfg.alpha3, cfg.alpha4, cfg.sim_mode,
                     sim_negative=sim_neg, has_negative=has_neg)
    l_conc = diversity_loss(c_opt) + diversity_loss(c_query)

    parts = {"conc": l_conc.mean(), "rec": l_rec.mean(), "pcl": l_pcl.mean(), "cma": l_cma.mean()}
    on = {name: (0.0 if name in cfg.ablate else 1.0) for name in LOSS_NAMES}
    parts["total"] = total_loss(on["conc"] * parts["conc"], on["cma"] * parts["cma"],
                                on["rec"] * parts["rec"], on["pcl"] * parts["pcl"],
                                cfg.beta1, cfg.beta2)
    parts["optimal"] = optimal
    return parts


def trainable_parameters(model: ConceptModel, cfg: TrainConfig):
    if not cfg.freeze_encoders:
        return list(model.parameters())
    keep = {id(p) for p in (*model.text_encoder.mlp.parameters(),
                            *model.video_encoder.mlp.parameters())}
    params = []
    for p in model.parameters():
        p.requires_grad_(id(p) in keep)
        if id(p) in keep:
            params.append(p)
    return params


def _dump(batch, parts):
    return {"video_ids": [s.video.video_id for s in batch],
            "points": [s.point for s in batch],
            "queries": [list(s.query.ids) for s in batch],
            "losses": {k: float(v.detach()) for k, v in parts.items() if k != "optimal"}}


def train(corpus: Sequence[PointSample], cfg: TrainConfig, validation=None, log_path=None,
          model: Optional[ConceptModel] = None) -> TrainResult:
    """Fit a model on point-annotated samples.

    ``validation`` is an optional ``(videos, interval_samples)`` pair; when
    given, held-out R@1 (IoU 0.5) is logged every epoch and drives early
    stopping with ``cfg.patience``, restoring the best parameters.
    """
    if not corpus:
        raise InputError("training corpus is empty")
    cfg.validate()
    enc = cfg.encoder
    for s in corpus:
        if s.video.dim != enc.video_dim:
            raise InputError(f"video {s.video.video_id!r} feature dim {s.video.dim} != {enc.video_dim}")
        if max(s.query.ids) >= enc.vocab_size:
            raise InputError("query token id outside the vocabulary")
    torch.manual_seed(cfg.seed)
    model = model if model is not None else ConceptModel(enc)
    model.train()
    state = make_adam(trainable_parameters(model, cfg), lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    history: List[dict] = []
    best, best_state, stale = -1.0, None, 0
    sink = open(log_path, "a") if log_path else None
    try:
        for epoch in range(1, cfg.epochs + 1):
            order = rng.permutation(len(corpus))
            sums = {k: 0.0 for k in (*LOSS_NAMES, "total")}
            for start in range(0, len(order), cfg.batch_size):
                batch = [corpus[i] for i in order[start:start + cfg.batch_size]]
                parts = batch_losses(model, batch, cfg, rng)
                if not torch.isfinite(parts["total"]):
                    raise NumericalError(f"non-finite loss at epoch {epoch}", dump=_dump(batch, parts))
                backward(parts["total"])
                adam_step(state)
                for k in sums:
                    sums[k] += float(parts[k].detach()) * len(batch)
            entry = {"epoch": epoch, **{f"L_{k}": v / len(corpus) for k, v in sums.items()},
                     "heldout_r1": None}
            if validation is not None:
                entry["heldout_r1"] = heldout_recall(model, validation, cfg)
                if entry["heldout_r1"] > best:
                    best, best_state, stale = entry["heldout_r1"], copy.deepcopy(model.state_dict()), 0
                else:
                    stale += 1
            history.append(entry)
            log.info("epoch %d total %.4f", epoch, entry["L_total"])
            if sink:
                sink.write(json.dumps(entry) + "\n")
                sink.flush()
            if validation is not None and stale >= cfg.patience:
                break
    finally:
        if sink:
            sink.close()
    if best_state is not None:
        model.load_state_dict(best_state)
    for p in model.parameters():
        p.requires_grad_(True)
    model.eval()
    return TrainResult(model, history)


def predict_moments(model: ConceptModel, videos, samples: Sequence[IntervalSample], cfg: TrainConfig,
                    topk: int = 5):
    from .index import Retriever, build_index
    index = build_index(model, videos, cfg.centers, cfg.n_scales, cfg.v_max, cfg.gamma)
    retriever = Retriever(index, model, cfg.sim_mode)
    return [retriever.query(s.video_id, s.query, topk, cfg.nms_iou) for s in samples]


def heldout_recall(model, validation, cfg: TrainConfig, k: int = 1, m: float = 0.5) -> float:
    from .metrics import recall_at
    videos, samples = validation
    was_training = model.training
    model.eval()
    preds = predict_moments(model, videos, samples, cfg, topk=k)
    model.train(was_training)
    return recall_at(preds, [(s.start, s.end) for s in samples], k, m)
