"""Gaussian temporal anchors.

An anchor is a (center, width) pair in normalized time. Its density over
the ``l_V`` frame positions re-weights video self-attention; during
training, positives are centered on the annotated point and the two
complement segments become negatives.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .exceptions import ParameterError
from .types import GaussianAnchor

DEFAULT_GAMMA = 9.0
MIN_SEGMENT = 0.05


def density(anchor: GaussianAnchor, length: int, gamma: float = DEFAULT_GAMMA) -> np.ndarray:
    """Gaussian density of ``anchor`` at positions ``i / length``, ``i = 1..length``.

    Standard deviation is ``width / gamma``. Values are floored at the
    smallest positive normal double so far-tail entries never underflow
    to exactly zero.
    """
    if length < 1:
        raise ParameterError(f"length must be >= 1, got {length}")
    if not gamma > 0:
        raise ParameterError(f"gamma must be positive, got {gamma}")
    if not anchor.width > 0:
        raise ParameterError(f"anchor width must be positive, got {anchor.width}")
    sigma = anchor.width / gamma
    pos = np.arange(1, length + 1, dtype=np.float64) / length
    p = np.exp(-((pos - anchor.center) ** 2) / (2.0 * sigma ** 2)) / (math.sqrt(2.0 * math.pi) * sigma)
    return np.maximum(p, np.finfo(np.float64).tiny)


def _scale_widths(v_max: float, n_scales: int, length: Optional[int]) -> List[float]:
    if n_scales < 1:
        raise ParameterError(f"number of scales must be >= 1, got {n_scales}")
    if not 0 < v_max <= 1:
        raise ParameterError(f"v_max must lie in (0, 1], got {v_max}")
    widths = [v_max * n / n_scales for n in range(1, n_scales + 1)]
    if length is not None:
        # keeps intervals non-degenerate after discretization
        widths = [max(w, 2.0 / length) for w in widths]
    return widths


@dataclass
class AnchorSet:
    positives: List[GaussianAnchor] = field(default_factory=list)
    negatives: List[GaussianAnchor] = field(default_factory=list)
    # the whole-video pseudo-anchor is uniform weighting; it carries no geometry
    whole_video: bool = True

    def __len__(self):
        return len(self.positives) + len(self.negatives) + int(self.whole_video)


def training_anchor_set(point: float, v_max: float, n_scales: int,
                        length: Optional[int] = None, min_segment: float = MIN_SEGMENT) -> AnchorSet:
    """Positives centered on ``point`` plus one negative per complement segment.

    The complements are ``[0, point - v_max/2]`` and ``[point + v_max/2, 1]``;
    each becomes a Gaussian centered at the segment midpoint with width equal
    to the segment length. Segments shorter than ``min_segment`` are dropped.
    """
    if not 0.0 <= point <= 1.0:
        raise ParameterError(f"point {point} outside [0, 1]")
    widths = _scale_widths(v_max, n_scales, length)
    positives = [GaussianAnchor(point, w, n) for n, w in enumerate(widths)]
    negatives = []
    for lo, hi in ((0.0, point - v_max / 2.0), (point + v_max / 2.0, 1.0)):
        if hi - lo >= min_segment:
            negatives.append(GaussianAnchor((lo + hi) / 2.0, hi - lo, -1))
    return AnchorSet(positives, negatives, True)


def inference_anchor_grid(centers: int, v_max: float, n_scales: int,
                          length: Optional[int] = None) -> List[GaussianAnchor]:
    """``centers * n_scales`` anchors; center ``k`` sits at ``(k + 0.5) / centers``.

    Ordered center-major, then by increasing width.
    """
    if centers < 1:
        raise ParameterError(f"centers must be >= 1, got {centers}")
    widths = _scale_widths(v_max, n_scales, length)
    return [GaussianAnchor((k + 0.5) / centers, w, n)
            for k in range(centers) for n, w in enumerate(widths)]


def anchor_to_interval(anchor: GaussianAnchor, duration: float):
    if not duration > 0:
        raise ParameterError(f"duration must be positive, got {duration}")
    start = max(0.0, anchor.center - anchor.width / 2.0) * duration
    end = min(1.0, anchor.center + anchor.width / 2.0) * duration
    return start, end


def attention_weights(anchor: Optional[GaussianAnchor], length: int,
                      gamma: float = DEFAULT_GAMMA) -> np.ndarray:
    """Key weights for a video of ``length`` frames followed by its CLS token.

    ``None`` means the whole video: all ones, i.e. no re-weighting. The CLS
    key always carries weight one.
    """
    if anchor is None:
        return np.ones(length + 1)
    return np.append(density(anchor, length, gamma), 1.0)
