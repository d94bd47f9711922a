"""Temporal IoU and Recall@K, IoU=m."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Dict, Sequence, Tuple

from .exceptions import InputError


def iou(a, b) -> float:
    """Intersection over union of two ``(start, end)`` intervals."""
    (s1, e1), (s2, e2) = a, b
    if not (s1 < e1 and s2 < e2):
        raise InputError(f"degenerate interval in iou({a}, {b})")
    inter = max(0.0, min(e1, e2) - max(s1, s2))
    return inter / (max(e1, e2) - min(s1, s2)) if inter > 0 else 0.0


def _interval(p):
    if isinstance(p, tuple):
        return p
    return (p.start, p.end)


def hit(predictions, truth, k: int, m: float) -> bool:
    return any(iou(_interval(p), truth) >= m for p in list(predictions)[:k])


def recall_at(predictions: Sequence, truths: Sequence[Tuple[float, float]], k: int, m: float) -> float:
    """Fraction of samples whose top-``k`` predictions contain an interval with IoU >= ``m``.

    ``predictions`` holds one ranked list per truth; entries are
    ``RankedMoment`` or ``(start, end)`` tuples. Lists shorter than ``k``
    are used as they are.
    """
    if len(predictions) != len(truths):
        raise InputError("need exactly one prediction list per ground-truth interval")
    if k < 1:
        raise InputError(f"k must be >= 1, got {k}")
    if not truths:
        return 0.0
    return sum(hit(p, t, k, m) for p, t in zip(predictions, truths)) / len(truths)


@dataclass
class EvalResult:
    recalls: Dict[Tuple[int, float], float] = field(default_factory=dict)
    count: int = 0

    def check_monotone(self):
        ks = sorted({k for k, _ in self.recalls})
        ms = sorted({m for _, m in self.recalls})
        for k in ks:
            vals = [self.recalls[(k, m)] for m in ms if (k, m) in self.recalls]
            assert all(a >= b for a, b in zip(vals, vals[1:])), f"recall rises with IoU at K={k}"
        for m in ms:
            vals = [self.recalls[(k, m)] for k in ks if (k, m) in self.recalls]
            assert all(a <= b for a, b in zip(vals, vals[1:])), f"recall falls with K at m={m}"

    def key(self, k, m):
        return f"R@{k},IoU={m:g}"

    def as_dict(self):
        return {"count": self.count,
                "recall": {self.key(k, m): v for (k, m), v in sorted(self.recalls.items())}}

    def to_json(self):
        return json.dumps(self.as_dict())

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["K", "IoU", "recall", "count"])
        for (k, m), v in sorted(self.recalls.items()):
            w.writerow([k, m, f"{v:.6f}", self.count])
        return buf.getvalue()


def evaluate(predictions, truths, ks=(1, 5), ms=(0.5, 0.7)) -> EvalResult:
    res = EvalResult({(k, m): recall_at(predictions, truths, k, m) for k in ks for m in ms},
                     len(truths))
    res.check_monotone()
    return res
