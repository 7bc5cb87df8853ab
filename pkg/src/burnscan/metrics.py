"""IoU/Dice scoring of binary masks and mean +/- std aggregation over patches.

When both masks are empty the pair scores 1.0 for both metrics and is counted
in ``EvalReport.empty_pair_count`` so it can be excluded downstream.
"""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import EmptyScores, ShapeMismatch
from .geo import BinaryMask


def _as_bool(mask) -> np.ndarray:
    if isinstance(mask, BinaryMask):
        mask = mask.data
    return np.asarray(mask).astype(bool)


def confusion_counts(pred, gt):
    """``(intersection, pred_positive, gt_positive)`` pixel counts."""
    p, g = _as_bool(pred), _as_bool(gt)
    if p.shape != g.shape:
        raise ShapeMismatch(f"prediction {p.shape} vs ground truth {g.shape}")
    return int(np.count_nonzero(p & g)), int(np.count_nonzero(p)), int(np.count_nonzero(g))


def _iou_from_counts(inter, n_pred, n_gt) -> float:
    union = n_pred + n_gt - inter
    return 1.0 if union == 0 else inter / union


def _dice_from_counts(inter, n_pred, n_gt) -> float:
    denom = n_pred + n_gt
    return 1.0 if denom == 0 else 2 * inter / denom


def iou(pred, gt) -> float:
    return _iou_from_counts(*confusion_counts(pred, gt))


def dice(pred, gt) -> float:
    return _dice_from_counts(*confusion_counts(pred, gt))


@dataclass(frozen=True)
class PatchScore:
    patch_id: str
    iou: float
    dice: float
    pred_positive: int
    gt_positive: int
    intersection: int

    @property
    def empty_pair(self) -> bool:
        return self.pred_positive == 0 and self.gt_positive == 0


def score_pair(pred, gt, patch_id: str = "") -> PatchScore:
    inter, n_pred, n_gt = confusion_counts(pred, gt)
    return PatchScore(
        patch_id=patch_id,
        iou=_iou_from_counts(inter, n_pred, n_gt),
        dice=_dice_from_counts(inter, n_pred, n_gt),
        pred_positive=n_pred,
        gt_positive=n_gt,
        intersection=inter,
    )


@dataclass
class EvalReport:
    scores: list
    mean_iou: float
    std_iou: float
    mean_dice: float
    std_dice: float
    n_patches: int
    empty_pair_count: int
    domain: str = "source"
    dispersion: str = field(default="population std", repr=False)

    def summary(self) -> str:
        return (
            f"IoU {self.mean_iou:.3f} ± {self.std_iou:.3f}, "
            f"Dice {self.mean_dice:.3f} ± {self.std_dice:.3f} "
            f"(n={self.n_patches}, empty pairs={self.empty_pair_count}, domain={self.domain})"
        )

    def to_dict(self) -> dict:
        return {
            "domain": self.domain,
            "n_patches": self.n_patches,
            "empty_pair_count": self.empty_pair_count,
            "dispersion": self.dispersion,
            "mean_iou": self.mean_iou,
            "std_iou": self.std_iou,
            "mean_dice": self.mean_dice,
            "std_dice": self.std_dice,
            "iou": f"{self.mean_iou:.3f} ± {self.std_iou:.3f}",
            "dice": f"{self.mean_dice:.3f} ± {self.std_dice:.3f}",
            "scores": [asdict(s) for s in self.scores],
        }

    def write_json(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")
        return path

    def write_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["patch_id", "iou", "dice", "pred_positive", "gt_positive", "intersection"])
            for s in self.scores:
                writer.writerow(
                    [s.patch_id, repr(s.iou), repr(s.dice), s.pred_positive, s.gt_positive, s.intersection]
                )
        return path


def aggregate(scores: Sequence[PatchScore], domain: str = "source") -> EvalReport:
    """Unweighted per-patch mean and population standard deviation."""
    scores = list(scores)
    if not scores:
        raise EmptyScores("no patch scores to aggregate")
    ious = np.array([s.iou for s in scores], dtype=float)
    dices = np.array([s.dice for s in scores], dtype=float)
    return EvalReport(
        scores=scores,
        mean_iou=float(ious.mean()),
        std_iou=float(ious.std()),
        mean_dice=float(dices.mean()),
        std_dice=float(dices.std()),
        n_patches=len(scores),
        empty_pair_count=sum(s.empty_pair for s in scores),
        domain=domain,
    )


def evaluate(model, patches, threshold: float = 0.5, domain: str = "source", batch_size: int = 16):
    """Predict, binarize at ``threshold`` and score every patch.

    ``model`` is anything with ``predict_proba(X)`` mapping ``(n, 3, 128, 128)``
    to ``(n, 128, 128)`` burned-class probabilities.
    """
    patches = list(patches)
    if not patches:
        raise EmptyScores("no patches to evaluate")
    scores = []
    for start in range(0, len(patches), batch_size):
        chunk = patches[start : start + batch_size]
        X = np.stack([p.channels for p in chunk]).astype(np.float32)
        prob = np.asarray(model.predict_proba(X))
        for p, pm in zip(chunk, prob):
            scores.append(score_pair(pm >= threshold, p.label, p.patch_id))
    return aggregate(scores, domain=domain)
