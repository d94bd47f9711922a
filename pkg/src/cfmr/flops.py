"""Analytical FLOP and parameter counts for the offline and online paths.

Conventions: one multiply-add is 2 FLOPs; element-wise nonlinearities,
normalizations, scaling and additions are 1 FLOP per element. The offline
path encodes one video under every grid anchor; the online path encodes
one query and scores it against the stored anchor concepts, so it has no
term in the video length.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable

from .encoders import EncoderConfig


def linear_flops(tokens: int, in_dim: int, out_dim: int) -> int:
    return 2 * tokens * in_dim * out_dim


def attention_flops(t_q: int, t_k: int, dim: int, heads: int, reweighted: bool = False) -> int:
    scores = 2 * t_q * t_k * dim
    elementwise = 2 * heads * t_q * t_k  # scaling + softmax
    if reweighted:
        elementwise += 2 * heads * t_q * t_k  # weight product + renormalization
    return scores + elementwise + 2 * t_q * t_k * dim


def encoder_layer_flops(t: int, cfg: EncoderConfig, reweighted: bool) -> int:
    d, ff = cfg.hidden_dim, cfg.ff_dim
    return (2 * t * d  # two layer norms
            + 4 * linear_flops(t, d, d)  # q, k, v, out
            + attention_flops(t, t, d, cfg.heads, reweighted)
            + linear_flops(t, d, ff) + t * ff + linear_flops(t, ff, d)
            + 2 * t * d)  # residual adds


def concept_mlp_flops(cfg: EncoderConfig) -> int:
    d = cfg.hidden_dim
    return linear_flops(1, d, d) + d + linear_flops(1, d, cfg.n_concepts * d)


def encoder_flops(length: int, in_dim: int, cfg: EncoderConfig, reweighted: bool) -> int:
    d = cfg.hidden_dim
    t = length + 1
    return (linear_flops(length, in_dim, d) + length * d
            + cfg.layers * encoder_layer_flops(t, cfg, reweighted)
            + t * d + concept_mlp_flops(cfg))


def scoring_flops(anchors: int, cfg: EncoderConfig) -> int:
    # per concept row: dot product and two norms (2d each), then divide; mean over rows
    per_row = 3 * 2 * cfg.hidden_dim + 2
    return anchors * (cfg.n_concepts * per_row + cfg.n_concepts)


def offline_flops(cfg: EncoderConfig, anchors: int, video_len: int) -> int:
    return anchors * (video_len + encoder_flops(video_len, cfg.video_dim, cfg, reweighted=True))


def online_flops(cfg: EncoderConfig, anchors: int, query_len: int) -> int:
    return encoder_flops(query_len, cfg.text_dim, cfg, reweighted=False) + scoring_flops(anchors, cfg)


def _layer_norm_params(d):
    return 2 * d


def _linear_params(i, o):
    return i * o + o


def _attention_params(d):
    return 4 * _linear_params(d, d)


def _encoder_params(in_dim: int, max_len: int, cfg: EncoderConfig) -> int:
    d, ff = cfg.hidden_dim, cfg.ff_dim
    layer = (2 * _layer_norm_params(d) + _attention_params(d)
             + _linear_params(d, ff) + _linear_params(ff, d))
    return (_linear_params(in_dim, d) + max_len * d + d + cfg.layers * layer
            + _layer_norm_params(d) + _linear_params(d, d) + _linear_params(d, cfg.n_concepts * d))


def parameter_counts(cfg: EncoderConfig) -> dict:
    d, ff = cfg.hidden_dim, cfg.ff_dim
    text = _encoder_params(cfg.text_dim, cfg.max_query_len, cfg)
    video = _encoder_params(cfg.video_dim, cfg.max_video_len, cfg)
    dec_layer = (3 * _layer_norm_params(d) + 2 * _attention_params(d)
                 + _linear_params(d, ff) + _linear_params(ff, d))
    decoder = (_linear_params(cfg.text_dim, d) + cfg.max_query_len * d
               + cfg.decoder_layers * dec_layer + _layer_norm_params(d)
               + _linear_params(d, cfg.vocab_size))
    embedding = cfg.vocab_size * cfg.text_dim
    return {"embedding": embedding, "text_encoder": text, "video_encoder": video,
            "reconstructor": decoder, "total": embedding + text + video + decoder,
            "inference": embedding + text + video}


@dataclass
class FlopsReport:
    offline: int
    online: int
    parameters: int
    inference_parameters: int
    anchors: int
    video_len: int
    query_len: int

    @property
    def online_share(self) -> float:
        return self.online / (self.online + self.offline)

    def as_dict(self):
        return {"offline_flops": self.offline, "online_flops": self.online,
                "parameters": self.parameters, "inference_parameters": self.inference_parameters,
                "online_share": self.online_share, "anchors": self.anchors,
                "video_len": self.video_len, "query_len": self.query_len}


def flops_report(cfg: EncoderConfig, centers: int, n_scales: int, video_len: int = None,
                 query_len: int = None) -> FlopsReport:
    video_len = cfg.max_video_len if video_len is None else video_len
    query_len = cfg.max_query_len if query_len is None else query_len
    anchors = centers * n_scales
    params = parameter_counts(cfg)
    return FlopsReport(offline_flops(cfg, anchors, video_len), online_flops(cfg, anchors, query_len),
                       params["total"], params["inference"], anchors, video_len, query_len)


def write_sweep_csv(cfg: EncoderConfig, centers: int, n_scales: int, lengths: Iterable[int], path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["video_len", "offline_flops", "online_flops", "online_share"])
        for n in lengths:
            r = flops_report(cfg, centers, n_scales, video_len=n)
            w.writerow([n, r.offline, r.online, f"{r.online_share:.6g}"])
