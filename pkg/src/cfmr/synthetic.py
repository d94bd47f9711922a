"""Seeded synthetic corpus with point annotations.

Each video is Gaussian noise over which a few non-overlapping events are
written. An event is an (action, object) pair; its frames carry the
normalized sum of the two word prototypes plus noise, and its query reads
``a person <action> the <object>`` with optional filler words. Other events
in the same video act as hard negatives.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import List, Tuple

import numpy as np
import yaml

from .exceptions import SpecError
from .io import ensure_dir, write_features, write_jsonl
from .types import FeatureSequence, IntervalSample, PointSample
from .vocab import Vocabulary

FUNCTION_WORDS = ("a", "person", "the", "then", "in", "room")


@dataclass
class SyntheticSpec:
    videos: int = 200
    test_videos: int = 50
    length: int = 48
    feature_dim: int = 8
    vocab_size: int = 40
    events_per_video: int = 2
    min_event: float = 0.15
    max_event: float = 0.4
    noise: float = 0.3
    min_duration: float = 20.0
    max_duration: float = 40.0
    seed: int = 0

    def validate(self):
        n_content = self.vocab_size - 2 - len(FUNCTION_WORDS)
        if n_content < 2:
            raise SpecError(f"vocab_size {self.vocab_size} leaves no room for content words")
        if self.videos < 1 or self.test_videos < 0 or self.length < 2 or self.feature_dim < 1:
            raise SpecError("invalid corpus sizes")
        if not 0 < self.min_event <= self.max_event <= 1:
            raise SpecError("event length range must satisfy 0 < min <= max <= 1")
        if self.events_per_video < 1:
            raise SpecError("need at least one event per video")
        if self.events_per_video * self.min_event > 1:
            raise SpecError(f"{self.events_per_video} events of length >= {self.min_event} "
                            "cannot be packed disjointly")
        if self.noise < 0 or not 0 < self.min_duration <= self.max_duration:
            raise SpecError("invalid noise or duration range")
        actions, objects = self.split_content()
        if len(actions) * len(objects) < self.events_per_video:
            raise SpecError("too few distinct (action, object) pairs for the events per video")

    def split_content(self) -> Tuple[List[str], List[str]]:
        n_content = self.vocab_size - 2 - len(FUNCTION_WORDS)
        n_act = n_content // 2
        return ([f"act{i:02d}" for i in range(n_act)],
                [f"obj{i:02d}" for i in range(n_content - n_act)])

    @classmethod
    def load(cls, path):
        with open(path) as f:
            d = yaml.safe_load(f) or {}
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise SpecError(f"unknown spec keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class SyntheticCorpus:
    vocab: Vocabulary
    train_videos: List[FeatureSequence]
    test_videos: List[FeatureSequence]
    train: List[PointSample]
    test: List[IntervalSample]
    prototypes: dict
    events: dict  # video_id -> list of (start, end, action, object) in normalized time


def make_vocabulary(spec: SyntheticSpec) -> Vocabulary:
    actions, objects = spec.split_content()
    return Vocabulary(list(FUNCTION_WORDS) + actions + objects, FUNCTION_WORDS)


def event_pattern(prototypes, action, obj):
    p = prototypes[action] + prototypes[obj]
    return p / np.linalg.norm(p)


def _place_events(rng, spec: SyntheticSpec):
    k = spec.events_per_video
    lengths = rng.uniform(spec.min_event, spec.max_event, size=k)
    if lengths.sum() > 1:
        lengths *= 1.0 / lengths.sum()
    gaps = rng.dirichlet(np.ones(k + 1)) * (1.0 - lengths.sum())
    spans, t = [], gaps[0]
    for i in range(k):
        spans.append((t, t + lengths[i]))
        t += lengths[i] + gaps[i + 1]
    return spans


def _query_words(rng, action, obj):
    words = ["a", "person", action, "the", obj]
    if rng.random() < 0.5:
        words += ["in", "the", "room"]
    return words


def generate_corpus(spec: SyntheticSpec) -> SyntheticCorpus:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    vocab = make_vocabulary(spec)
    actions, objects = spec.split_content()
    protos = {w: rng.standard_normal(spec.feature_dim) for w in actions + objects}
    protos = {w: v / np.linalg.norm(v) for w, v in protos.items()}
    centers = (np.arange(spec.length) + 0.5) / spec.length

    train_videos, test_videos, train, test, events = [], [], [], [], {}
    for v in range(spec.videos + spec.test_videos):
        is_test = v >= spec.videos
        vid = f"{'test' if is_test else 'train'}{v:04d}"
        duration = float(np.float32(rng.uniform(spec.min_duration, spec.max_duration)))
        feats = spec.noise * rng.standard_normal((spec.length, spec.feature_dim))
        pairs = set()
        while len(pairs) < spec.events_per_video:
            pairs.add((actions[rng.integers(len(actions))], objects[rng.integers(len(objects))]))
        pairs = sorted(pairs)
        rng.shuffle(pairs)
        spans = _place_events(rng, spec)
        events[vid] = []
        for (s, e), (act, obj) in zip(spans, pairs):
            inside = (centers >= s) & (centers <= e)
            feats[inside] += event_pattern(protos, act, obj)
            events[vid].append((float(s), float(e), act, obj))
        video = FeatureSequence(vid, feats.astype(np.float32).astype(np.float64), duration)
        (test_videos if is_test else train_videos).append(video)
        for s, e, act, obj in events[vid]:
            q = vocab.encode(_query_words(rng, act, obj))
            if is_test:
                test.append(IntervalSample(vid, q, s * duration, e * duration))
            else:
                train.append(PointSample(video, q, float(rng.uniform(s, e))))
    return SyntheticCorpus(vocab, train_videos, test_videos, train, test, protos, events)


def write_corpus(corpus: SyntheticCorpus, out, spec: SyntheticSpec = None) -> Path:
    """Lay out ``features/*.feat``, ``train.jsonl``, ``test.jsonl`` and ``vocab.json``."""
    out = ensure_dir(out)
    feat_dir = ensure_dir(out / "features")
    for video in corpus.train_videos + corpus.test_videos:
        write_features(video, feat_dir / f"{video.video_id}.feat")
    corpus.vocab.save(out / "vocab.json")
    words = corpus.vocab.decode
    write_jsonl(({"video_id": s.video.video_id, "tokens": words(s.query.ids), "point": s.point}
                 for s in corpus.train), out / "train.jsonl")
    write_jsonl(({"video_id": s.video_id, "tokens": words(s.query.ids), "t_s": s.start, "t_e": s.end}
                 for s in corpus.test), out / "test.jsonl")
    if spec is not None:
        with open(out / "spec.yaml", "w") as f:
            yaml.safe_dump(asdict(spec), f, sort_keys=True)
    return out
