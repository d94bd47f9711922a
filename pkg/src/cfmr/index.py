"""Offline concept index and online query answering.

Videos are encoded once under every grid anchor; at query time only the
text encoder runs, followed by cosine scoring against stored concepts and
greedy non-maximum suppression.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np
import torch

from .anchors import DEFAULT_GAMMA, anchor_to_interval, attention_weights, inference_anchor_grid
from .exceptions import (CorruptionError, FormatError, IngestionError, ParameterError,
                         StaleIndexError)
from .kernel import DTYPE
from .metrics import iou
from .model import ConceptModel, encode_text
from .objectives import sim
from .types import FeatureSequence, GaussianAnchor, QueryTokens, RankedMoment

MAGIC = b"CFMRIDX1"
VERSION = 1
_HEADER = struct.Struct("<4I2d32sI")


@dataclass
class IndexHeader:
    hidden_dim: int
    n_concepts: int
    centers: int
    n_scales: int
    v_max: float
    gamma: float
    fingerprint: str


@dataclass
class VideoEntry:
    video_id: str
    duration: float
    anchors: List[GaussianAnchor]
    concepts: np.ndarray  # (anchors, n_concepts, hidden_dim) float32

    def __eq__(self, other):
        return (isinstance(other, VideoEntry) and self.video_id == other.video_id
                and self.duration == other.duration
                and [(a.center, a.width) for a in self.anchors]
                == [(a.center, a.width) for a in other.anchors]
                and self.concepts.dtype == other.concepts.dtype
                and np.array_equal(self.concepts, other.concepts))


@dataclass
class ConceptIndex:
    header: IndexHeader
    videos: Dict[str, VideoEntry] = field(default_factory=dict)

    def __len__(self):
        return sum(len(v.anchors) for v in self.videos.values())

    def add(self, entry: VideoEntry):
        h = self.header
        if entry.concepts.shape != (len(entry.anchors), h.n_concepts, h.hidden_dim):
            raise IngestionError(f"concept block of {entry.video_id!r} has shape "
                                 f"{entry.concepts.shape}, header expects "
                                 f"(A, {h.n_concepts}, {h.hidden_dim})")
        self.videos[entry.video_id] = entry


def build_index(model: ConceptModel, videos: Iterable[FeatureSequence], centers: int = 8,
                n_scales: int = 3, v_max: float = 0.55, gamma: float = DEFAULT_GAMMA) -> ConceptIndex:
    cfg = model.cfg
    header = IndexHeader(cfg.hidden_dim, cfg.n_concepts, centers, n_scales, float(v_max),
                         float(gamma), model.fingerprint())
    grid = inference_anchor_grid(centers, v_max, n_scales, length=cfg.max_video_len)
    index = ConceptIndex(header)
    with torch.no_grad():
        for video in videos:
            if video.dim != cfg.video_dim:
                raise IngestionError(f"video {video.video_id!r} has feature dim {video.dim}, "
                                     f"model expects {cfg.video_dim}")
            if video.length > cfg.max_video_len:
                raise IngestionError(f"video {video.video_id!r} has {video.length} frames, "
                                     f"model accepts at most {cfg.max_video_len}; resample first")
            x = torch.as_tensor(video.features, dtype=DTYPE)
            w = torch.as_tensor(np.stack([attention_weights(a, video.length, gamma) for a in grid]),
                                dtype=DTYPE)
            concepts = model.encode_videos(x.expand(len(grid), -1, -1), row_weights=w)
            index.add(VideoEntry(video.video_id, float(video.duration), list(grid),
                                 concepts.numpy().astype(np.float32)))
    return index


def nms(candidates: Sequence[RankedMoment], threshold: float, topk: int) -> List[RankedMoment]:
    """Greedy suppression over score-sorted candidates; ``threshold >= 1`` disables it."""
    kept: List[RankedMoment] = []
    for c in candidates:
        if len(kept) == topk:
            break
        if threshold < 1.0 and any(
                k.video_id == c.video_id and iou((k.start, k.end), (c.start, c.end)) >= threshold
                for k in kept):
            continue
        kept.append(c)
    return kept


def _rank(entry: VideoEntry, scores: np.ndarray) -> List[RankedMoment]:
    out = []
    for a, s in zip(entry.anchors, scores):
        start, end = anchor_to_interval(a, entry.duration)
        out.append(RankedMoment(entry.video_id, start, end, float(s), a.center, a.width))
    return out


def _order(moments):
    return sorted(moments, key=lambda m: (-m.score, m.center, m.width, m.video_id))


class Retriever:
    """Online side: text encoder plus a loaded index. Safe for concurrent readers."""

    def __init__(self, index: ConceptIndex, model: ConceptModel, sim_mode: str = "rowwise"):
        if index.header.fingerprint != model.fingerprint():
            raise StaleIndexError("index was built with different model parameters")
        if (index.header.hidden_dim, index.header.n_concepts) != (model.cfg.hidden_dim,
                                                                  model.cfg.n_concepts):
            raise StaleIndexError("index concept dimensions do not match the model")
        self.index = index
        self.model = model
        self.sim_mode = sim_mode
        self._tensors = {vid: torch.as_tensor(e.concepts, dtype=DTYPE)
                         for vid, e in index.videos.items()}

    def text_concepts(self, query: QueryTokens) -> torch.Tensor:
        with torch.no_grad():
            return encode_text(self.model, query)[0]

    def scores(self, video_id: str, query_concepts: torch.Tensor) -> np.ndarray:
        if video_id not in self.index.videos:
            raise KeyError(f"video {video_id!r} not in index")
        with torch.no_grad():
            return sim(self._tensors[video_id], query_concepts[None], self.sim_mode).numpy()

    def query(self, video_id: str, query: QueryTokens, topk: int = 5,
              nms_iou: float = 0.7) -> List[RankedMoment]:
        if topk < 1:
            raise ParameterError(f"topk must be >= 1, got {topk}")
        cq = self.text_concepts(query)
        entry = self.index.videos.get(video_id)
        if entry is None:
            raise KeyError(f"video {video_id!r} not in index")
        return nms(_order(_rank(entry, self.scores(video_id, cq))), nms_iou, topk)

    def query_corpus(self, query: QueryTokens, topk: int = 5,
                     nms_iou: float = 0.7) -> List[RankedMoment]:
        """Experimental: rank anchors of every indexed video."""
        if topk < 1:
            raise ParameterError(f"topk must be >= 1, got {topk}")
        cq = self.text_concepts(query)
        moments = []
        for vid, entry in self.index.videos.items():
            moments.extend(_rank(entry, self.scores(vid, cq)))
        return nms(_order(moments), nms_iou, topk)


def query(index: ConceptIndex, model: ConceptModel, video_id: str, query_tokens: QueryTokens,
          topk: int = 5, nms_iou: float = 0.7, sim_mode: str = "rowwise") -> List[RankedMoment]:
    return Retriever(index, model, sim_mode).query(video_id, query_tokens, topk, nms_iou)


# -- binary format --------------------------------------------------------

def dumps_index(index: ConceptIndex) -> bytes:
    h = index.header
    parts = [MAGIC, struct.pack("<I", VERSION),
             _HEADER.pack(h.hidden_dim, h.n_concepts, h.centers, h.n_scales, h.v_max, h.gamma,
                          bytes.fromhex(h.fingerprint), len(index.videos))]
    for e in index.videos.values():
        vid = e.video_id.encode("utf-8")
        parts.append(struct.pack("<I", len(vid)))
        parts.append(vid)
        parts.append(struct.pack("<dI", e.duration, len(e.anchors)))
        parts.append(np.array([(a.center, a.width) for a in e.anchors], dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(e.concepts, dtype="<f4").tobytes())
    return b"".join(parts)


def save_index(index: ConceptIndex, path) -> None:
    with open(path, "wb") as f:
        f.write(dumps_index(index))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CorruptionError(f"index truncated at byte {self.pos} (needed {n} more)")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size))


def loads_index(buf: bytes) -> ConceptIndex:
    if buf[:len(MAGIC)] != MAGIC:
        raise FormatError("not a concept index (bad magic bytes)")
    r = _Reader(buf)
    r.take(len(MAGIC))
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise FormatError(f"unsupported index version {version}")
    d_h, l_c, centers, n_scales, v_max, gamma, fp, count = r.unpack(_HEADER.format)
    index = ConceptIndex(IndexHeader(d_h, l_c, centers, n_scales, v_max, gamma, fp.hex()))
    per_video = centers * n_scales
    for _ in range(count):
        (n,) = r.unpack("<I")
        vid = r.take(n).decode("utf-8")
        duration, n_anchors = r.unpack("<dI")
        if n_anchors != per_video:
            raise CorruptionError(f"video {vid!r} has {n_anchors} anchors, header implies {per_video}")
        geom = np.frombuffer(r.take(16 * n_anchors), dtype="<f8").reshape(n_anchors, 2)
        concepts = np.frombuffer(r.take(4 * n_anchors * l_c * d_h), dtype="<f4")
        anchors = [GaussianAnchor(float(c), float(w), i % n_scales)
                   for i, (c, w) in enumerate(geom)]
        index.add(VideoEntry(vid, duration, anchors,
                             concepts.reshape(n_anchors, l_c, d_h).astype(np.float32)))
    if r.pos != len(buf):
        raise CorruptionError(f"{len(buf) - r.pos} trailing bytes after {count} declared videos")
    return index


def load_index(path) -> ConceptIndex:
    with open(path, "rb") as f:
        return loads_index(f.read())
