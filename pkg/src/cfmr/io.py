"""File formats: binary feature files, JSONL annotations, concept CSV export."""

from __future__ import annotations

import csv
import json
import os
import struct
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np

from .exceptions import CorruptionError, FormatError, IngestionError, InputError
from .types import FeatureSequence, IntervalSample, PointSample
from .vocab import Vocabulary

FEATURE_MAGIC = b"CFMRFEA1"
_FEATURE_HEADER = struct.Struct("<IIf")
FEATURE_SUFFIX = ".feat"


def dumps_features(seq: FeatureSequence) -> bytes:
    return (FEATURE_MAGIC + _FEATURE_HEADER.pack(seq.length, seq.dim, seq.duration)
            + np.ascontiguousarray(seq.features, dtype="<f4").tobytes())


def loads_features(buf: bytes, video_id: str) -> FeatureSequence:
    if buf[:8] != FEATURE_MAGIC:
        raise FormatError(f"{video_id}: not a feature file (bad magic bytes)")
    if len(buf) < 8 + _FEATURE_HEADER.size:
        raise CorruptionError(f"{video_id}: truncated header")
    length, dim, duration = _FEATURE_HEADER.unpack_from(buf, 8)
    if length == 0 or dim == 0:
        raise FormatError(f"{video_id}: empty video ({length} x {dim})")
    payload = buf[8 + _FEATURE_HEADER.size:]
    if len(payload) != 4 * length * dim:
        raise CorruptionError(f"{video_id}: payload has {len(payload)} bytes, "
                              f"header declares {4 * length * dim}")
    feats = np.frombuffer(payload, dtype="<f4").reshape(length, dim).astype(np.float64)
    return FeatureSequence(video_id, feats, float(duration))


def write_features(seq: FeatureSequence, path) -> None:
    with open(path, "wb") as f:
        f.write(dumps_features(seq))


def read_features(path) -> FeatureSequence:
    path = Path(path)
    with open(path, "rb") as f:
        return loads_features(f.read(), path.stem)


def resample_features(seq: FeatureSequence, length: int) -> FeatureSequence:
    """Evenly sample (or repeat) frames so the sequence has exactly ``length`` rows."""
    if seq.length == length:
        return seq
    idx = np.minimum((np.arange(length) * seq.length / length).astype(int), seq.length - 1)
    return FeatureSequence(seq.video_id, seq.features[idx], seq.duration)


def read_feature_dir(directory, max_length=None) -> Dict[str, FeatureSequence]:
    out = {}
    for p in sorted(Path(directory).glob(f"*{FEATURE_SUFFIX}")):
        seq = read_features(p)
        if max_length is not None and seq.length > max_length:
            seq = resample_features(seq, max_length)
        out[seq.video_id] = seq
    return out


def write_jsonl(records: Iterable[dict], path) -> None:
    with open(path, "w") as f:
        for r in records:
            f.write(json.dumps(r) + "\n")


def read_jsonl(path) -> List[dict]:
    with open(path) as f:
        return [json.loads(line) for line in f if line.strip()]


def load_point_samples(path, videos: Dict[str, FeatureSequence], vocab: Vocabulary) -> List[PointSample]:
    """Training annotations ``{video_id, tokens, point}`` (or ``points`` for several targets)."""
    out = []
    for r in read_jsonl(path):
        if r["video_id"] not in videos:
            raise IngestionError(f"annotation refers to unknown video {r['video_id']!r}")
        q = vocab.encode(r["tokens"])
        points = r["points"] if "points" in r else [r["point"]]
        # one sample per annotated point
        out.extend(PointSample(videos[r["video_id"]], q, float(p)) for p in points)
    return out


def load_interval_samples(path, vocab: Vocabulary) -> List[IntervalSample]:
    return [IntervalSample(r["video_id"], vocab.encode(r["tokens"]), float(r["t_s"]), float(r["t_e"]))
            for r in read_jsonl(path)]


def load_dataset(directory, max_length=None):
    """Returns ``(videos, vocab, train_samples, test_samples)`` from a data directory."""
    d = Path(directory)
    try:
        vocab = Vocabulary.load(d / "vocab.json")
    except FileNotFoundError as exc:
        raise IngestionError(f"{d} has no vocab.json") from exc
    videos = read_feature_dir(d / "features", max_length)
    train = load_point_samples(d / "train.jsonl", videos, vocab) if (d / "train.jsonl").exists() else []
    test = load_interval_samples(d / "test.jsonl", vocab) if (d / "test.jsonl").exists() else []
    return videos, vocab, train, test


def export_concepts(index, path, queries: Sequence[Tuple[str, np.ndarray]] = ()) -> int:
    """Write one CSV row per concept vector; returns the row count.

    Columns: modality, source_id, concept, then ``d0 .. d{d_h-1}``. Video
    sources are ``<video_id>#<anchor index>``.
    """
    d_h = index.header.hidden_dim
    rows = 0
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["modality", "source_id", "concept"] + [f"d{i}" for i in range(d_h)])
        for vid, entry in index.videos.items():
            for a, block in enumerate(entry.concepts):
                for c, vec in enumerate(block):
                    w.writerow(["video", f"{vid}#{a}", c] + [repr(float(x)) for x in vec])
                    rows += 1
        for source, block in queries:
            block = np.asarray(block, dtype=np.float32)
            if block.shape[-1] != d_h:
                raise InputError(f"query concepts of {source!r} have dim {block.shape[-1]}, index {d_h}")
            for c, vec in enumerate(block):
                w.writerow(["text", source, c] + [repr(float(x)) for x in vec])
                rows += 1
    return rows


def read_concepts_csv(path):
    """Returns a list of ``(modality, source_id, concept, float32 vector)``."""
    with open(path, newline="") as f:
        r = csv.reader(f)
        next(r)
        return [(row[0], row[1], int(row[2]), np.array(row[3:], dtype=np.float32)) for row in r]


def ensure_dir(path) -> Path:
    p = Path(path)
    os.makedirs(p, exist_ok=True)
    return p
