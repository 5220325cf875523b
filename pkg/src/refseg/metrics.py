"""Overlap metrics for binary segmentation masks."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyEvaluation, ShapeMismatch


def _as_bool(mask, name):
    arr = np.asarray(mask)
    if arr.ndim != 2:
        raise ShapeMismatch(f"{name} must be 2-D, got shape {arr.shape}")
    return arr != 0


def dice_score(pred, target) -> float:
    """Dice overlap of two binary masks.

    Two empty masks count as a perfect match (1.0); callers that need to
    know this happened can check ``both_empty`` first.
    """
    p = _as_bool(pred, "pred")
    g = _as_bool(target, "target")
    if p.shape != g.shape:
        raise ShapeMismatch(f"mask shapes differ: {p.shape} vs {g.shape}")
    inter = np.logical_and(p, g).sum()
    total = p.sum() + g.sum()
    if total == 0:
        return 1.0
    return float(2.0 * inter / total)


def iou_score(pred, target) -> float:
    """Intersection over union; both-empty pairs score 1.0."""
    p = _as_bool(pred, "pred")
    g = _as_bool(target, "target")
    if p.shape != g.shape:
        raise ShapeMismatch(f"mask shapes differ: {p.shape} vs {g.shape}")
    inter = np.logical_and(p, g).sum()
    union = np.logical_or(p, g).sum()
    if union == 0:
        return 1.0
    return float(inter / union)


def both_empty(pred, target) -> bool:
    p = _as_bool(pred, "pred")
    g = _as_bool(target, "target")
    return not p.any() and not g.any()


@dataclass
class MetricsReport:
    """Aggregate of per-sample metrics plus provenance for the run."""

    mean_dice: float
    mean_iou: float
    n_samples: int
    n_empty_pairs: int
    per_sample_dice: list = field(default_factory=list)
    per_sample_iou: list = field(default_factory=list)
    checkpoint_id: str = ""
    config_hash: str = ""
    text_fraction: float = 1.0
    dataset: str = ""
    subset: str = ""

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2)

    @staticmethod
    def from_pairs(pairs, **provenance) -> "MetricsReport":
        """Build a report from an iterable of (pred, target) mask pairs."""
        dices, ious, empties = [], [], 0
        for pred, target in pairs:
            if both_empty(pred, target):
                empties += 1
            dices.append(dice_score(pred, target))
            ious.append(iou_score(pred, target))
        if not dices:
            raise EmptyEvaluation("no samples to evaluate")
        return MetricsReport(
            mean_dice=float(np.mean(dices)),
            mean_iou=float(np.mean(ious)),
            n_samples=len(dices),
            n_empty_pairs=empties,
            per_sample_dice=[float(d) for d in dices],
            per_sample_iou=[float(i) for i in ious],
            **provenance,
        )
