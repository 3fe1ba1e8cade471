"""Task metrics used as raw content scores: temporal IoU, box IoU, STG mIoU, dense-event F1."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import kernels


class MetricInputError(ValueError):
    """Raised for malformed metric inputs (bad intervals, boxes, thresholds)."""


@dataclass(frozen=True)
class TemporalInterval:
    start: float
    end: float

    def __post_init__(self):
        s, e = float(self.start), float(self.end)
        if not (math.isfinite(s) and math.isfinite(e)):
            raise MetricInputError(f"interval bounds must be finite, got [{s}, {e}]")
        if s < 0:
            raise MetricInputError(f"interval start must be non-negative, got {s}")
        if s > e:
            raise MetricInputError(f"interval start {s} exceeds end {e}")
        object.__setattr__(self, "start", s)
        object.__setattr__(self, "end", e)

    @property
    def length(self) -> float:
        return self.end - self.start


@dataclass(frozen=True)
class BBox:
    """Box in normalized image coordinates."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        vals = [float(v) for v in (self.x1, self.y1, self.x2, self.y2)]
        if not all(math.isfinite(v) and 0.0 <= v <= 1.0 for v in vals):
            raise MetricInputError(f"box coordinates must lie in [0, 1], got {vals}")
        if vals[0] > vals[2] or vals[1] > vals[3]:
            raise MetricInputError(f"box corners out of order: {vals}")
        for name, v in zip(("x1", "y1", "x2", "y2"), vals):
            object.__setattr__(self, name, v)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)


@dataclass(frozen=True)
class FrameTrack:
    """Per-frame boxes keyed by frame index; a missing index means no box."""

    frames: Mapping[int, BBox] = field(default_factory=dict)

    def __post_init__(self):
        items = sorted((int(k), v) for k, v in dict(self.frames).items())
        for k, v in items:
            if k < 0:
                raise MetricInputError(f"frame index must be non-negative, got {k}")
            if not isinstance(v, BBox):
                raise MetricInputError(f"frame {k} holds {type(v).__name__}, expected BBox")
        object.__setattr__(self, "frames", dict(items))

    def __len__(self) -> int:
        return len(self.frames)


@dataclass(frozen=True)
class DenseEvent:
    interval: TemporalInterval
    caption: str

    def __post_init__(self):
        if not self.caption or not self.caption.strip():
            raise MetricInputError("dense event caption must be non-empty")


def _check_interval(x) -> TemporalInterval:
    if not isinstance(x, TemporalInterval):
        raise MetricInputError(f"expected TemporalInterval, got {type(x).__name__}")
    return x


def temporal_iou(a: TemporalInterval, b: TemporalInterval) -> float:
    _check_interval(a)
    _check_interval(b)
    inter = max(0.0, min(a.end, b.end) - max(a.start, b.start))
    union = a.length + b.length - inter
    if union <= 0:
        return 1.0 if a == b else 0.0
    return inter / union


def box_iou(a: BBox, b: BBox) -> float:
    if not isinstance(a, BBox) or not isinstance(b, BBox):
        raise MetricInputError("box_iou expects two BBox values")
    iw = max(0.0, min(a.x2, b.x2) - max(a.x1, b.x1))
    ih = max(0.0, min(a.y2, b.y2) - max(a.y1, b.y1))
    inter = iw * ih
    union = (a.x2 - a.x1) * (a.y2 - a.y1) + (b.x2 - b.x1) * (b.y2 - b.y1) - inter
    if union <= 0:
        return 1.0 if a == b else 0.0
    return inter / union


def stg_miou(pred: FrameTrack, gt: FrameTrack) -> float:
    """Mean box IoU over ground-truth frames; unpredicted GT frames score 0."""
    if len(gt) == 0:
        raise MetricInputError("ground-truth track is empty")
    frames = list(gt.frames)
    hit = [f for f in frames if f in pred.frames]
    if not hit:
        return 0.0
    ious = kernels.box_iou_pairs(
        [pred.frames[f].as_tuple() for f in hit], [gt.frames[f].as_tuple() for f in hit]
    )
    return math.fsum(ious.tolist()) / len(frames)


def mean_temporal_iou(preds: Sequence[TemporalInterval], gts: Sequence[TemporalInterval]) -> float:
    if len(preds) != len(gts):
        raise MetricInputError(f"got {len(preds)} predictions for {len(gts)} ground-truth intervals")
    if not gts:
        raise MetricInputError("mean_temporal_iou needs at least one pair")
    for x in (*preds, *gts):
        _check_interval(x)
    ious = kernels.temporal_iou_pairs(
        [(p.start, p.end) for p in preds], [(g.start, g.end) for g in gts]
    )
    return math.fsum(ious.tolist()) / len(ious)


def recall_at_tiou(
    preds: Sequence[TemporalInterval], gts: Sequence[TemporalInterval], threshold: float
) -> float:
    """Fraction of pairs whose temporal IoU reaches ``threshold`` (the @0.3 / @0.5 report)."""
    if len(preds) != len(gts) or not gts:
        raise MetricInputError("recall_at_tiou needs equal-length non-empty lists")
    ious = kernels.temporal_iou_pairs(
        [(p.start, p.end) for p in preds], [(g.start, g.end) for g in gts]
    )
    return float(np.mean(ious >= threshold))


def match_events(
    pred: Sequence[DenseEvent], gt: Sequence[DenseEvent], tiou_threshold: float
) -> list[tuple[int, int, float]]:
    """Greedy one-to-one matching by descending temporal IoU.

    Ties are broken by (pred index, gt index) so the result is deterministic.
    Returns ``(pred_idx, gt_idx, tiou)`` triples.
    """
    cands = []
    for i, p in enumerate(pred):
        for j, g in enumerate(gt):
            iou = temporal_iou(p.interval, g.interval)
            if iou >= tiou_threshold:
                cands.append((-iou, i, j))
    cands.sort()
    used_p: set[int] = set()
    used_g: set[int] = set()
    out = []
    for neg, i, j in cands:
        if i in used_p or j in used_g:
            continue
        used_p.add(i)
        used_g.add(j)
        out.append((i, j, -neg))
    return out


def dvc_f1(pred: Sequence[DenseEvent], gt: Sequence[DenseEvent], tiou_threshold: float = 0.5) -> float:
    if not (0.0 < tiou_threshold <= 1.0) or not math.isfinite(tiou_threshold):
        raise MetricInputError(f"tIoU threshold must be in (0, 1], got {tiou_threshold}")
    if not pred and not gt:
        return 1.0
    tp = len(match_events(pred, gt, tiou_threshold))
    fp = len(pred) - tp
    fn = len(gt) - tp
    if tp == 0:
        return 0.0
    return 2 * tp / (2 * tp + fp + fn)
