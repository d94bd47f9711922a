"""Input checks shared by the estimator and the CLI."""

from __future__ import annotations

from typing import Sequence

from .exceptions import InputError
from .types import FeatureSequence, IntervalSample, PointSample, QueryTokens


def check_point_samples(samples) -> list:
    samples = list(samples)
    if not samples:
        raise InputError("no training samples")
    bad = [type(s).__name__ for s in samples if not isinstance(s, PointSample)]
    if bad:
        raise InputError(f"expected PointSample records, got {sorted(set(bad))}")
    dims = {s.video.dim for s in samples}
    if len(dims) != 1:
        raise InputError(f"videos disagree on feature dim: {sorted(dims)}")
    return samples


def check_videos(videos, dim=None, max_len=None) -> list:
    videos = list(videos)
    for v in videos:
        if not isinstance(v, FeatureSequence):
            raise InputError(f"expected FeatureSequence, got {type(v).__name__}")
        if dim is not None and v.dim != dim:
            raise InputError(f"video {v.video_id!r} has feature dim {v.dim}, expected {dim}")
        if max_len is not None and v.length > max_len:
            raise InputError(f"video {v.video_id!r} has {v.length} frames, maximum is {max_len}")
    return videos


def check_queries(queries) -> list:
    """Normalize to ``(video_id, QueryTokens)`` pairs."""
    out = []
    for q in queries:
        if isinstance(q, IntervalSample):
            out.append((q.video_id, q.query))
        elif isinstance(q, tuple) and len(q) == 2 and isinstance(q[1], QueryTokens):
            out.append((str(q[0]), q[1]))
        else:
            raise InputError("queries must be IntervalSample or (video_id, QueryTokens) pairs")
    return out


def parse_list(text: str, cast=float) -> Sequence:
    try:
        return [cast(x) for x in str(text).split(",") if x.strip()]
    except ValueError as exc:
        raise InputError(f"cannot parse list {text!r}") from exc
