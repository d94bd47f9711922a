"""Plain data records shared across modules."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from .exceptions import InputError


@dataclass
class FeatureSequence:
    """Per-video frame features of shape ``(length, dim)`` plus duration in seconds."""

    video_id: str
    features: np.ndarray
    duration: float

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise InputError(f"features must be 2-D, got shape {self.features.shape}")
        if self.features.shape[0] == 0:
            raise InputError(f"video {self.video_id!r} is empty")
        if not np.all(np.isfinite(self.features)):
            raise InputError(f"video {self.video_id!r} has non-finite features")
        if not self.duration > 0:
            raise InputError(f"video {self.video_id!r} has non-positive duration")

    @property
    def length(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class QueryTokens:
    """Token ids plus a parallel flag marking content (maskable) words."""

    ids: Tuple[int, ...]
    content: Tuple[bool, ...]

    def __post_init__(self):
        object.__setattr__(self, "ids", tuple(int(i) for i in self.ids))
        object.__setattr__(self, "content", tuple(bool(c) for c in self.content))
        if len(self.ids) != len(self.content):
            raise InputError("ids and content flags differ in length")
        if not self.ids:
            raise InputError("empty query")

    def __len__(self):
        return len(self.ids)

    @property
    def content_positions(self) -> Tuple[int, ...]:
        return tuple(i for i, c in enumerate(self.content) if c)


@dataclass(frozen=True)
class GaussianAnchor:
    center: float
    width: float
    scale: int = 0


@dataclass
class PointSample:
    """Training record: no interval boundaries, only a point inside the event."""

    video: FeatureSequence
    query: QueryTokens
    point: float

    def __post_init__(self):
        if not 0.0 <= self.point <= 1.0:
            raise InputError(f"point {self.point} outside [0, 1]")


@dataclass
class IntervalSample:
    """Evaluation record with the ground-truth moment in seconds."""

    video_id: str
    query: QueryTokens
    start: float
    end: float

    def __post_init__(self):
        if not self.start < self.end:
            raise InputError(f"degenerate interval ({self.start}, {self.end})")


@dataclass(frozen=True)
class RankedMoment:
    video_id: str
    start: float
    end: float
    score: float
    center: float = field(default=0.0, compare=False)
    width: float = field(default=0.0, compare=False)

    def as_dict(self):
        return {"video_id": self.video_id, "t_s": self.start, "t_e": self.end,
                "score": self.score}


