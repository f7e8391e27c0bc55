"""Confusion-matrix metrics, evaluation, and the 180-degree rotation audit."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .data import PatchSource
from .errors import DimensionError, UsageError
from .model import ModelParams, forward, predict
from .tensor import Tensor


@dataclass
class MetricsReport:
    """K x K confusion matrix (rows = true class) with the derived accuracies.

    ``per_class`` holds each class's recall, or None for classes absent
    from the evaluated pixels; AA averages only the present classes.
    """

    confusion: np.ndarray
    oa: float
    aa: float
    per_class: list
    counts: list

    def to_json_dict(self) -> dict:
        return {
            "oa": self.oa,
            "aa": self.aa,
            "per_class": self.per_class,
            "counts": self.counts,
            "confusion": self.confusion.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True)


def confusion_matrix(true_ids, predicted_ids, num_classes: int) -> np.ndarray:
    true_ids = np.asarray(true_ids, dtype=np.int64)
    predicted_ids = np.asarray(predicted_ids, dtype=np.int64)
    if true_ids.shape != predicted_ids.shape:
        raise DimensionError(
            f"label arrays disagree: {true_ids.shape} vs {predicted_ids.shape}")
    if np.any(true_ids < 1) or np.any(true_ids > num_classes):
        raise UsageError("true labels must be 1..K")
    if np.any(predicted_ids < 1) or np.any(predicted_ids > num_classes):
        raise UsageError("predicted labels must be 1..K")
    flat = (true_ids - 1) * num_classes + (predicted_ids - 1)
    counts = np.bincount(flat, minlength=num_classes * num_classes)
    return counts.reshape(num_classes, num_classes)


def report_from_confusion(confusion: np.ndarray) -> MetricsReport:
    total = int(confusion.sum())
    if total == 0:
        raise UsageError("cannot score an empty evaluation set")
    row_sums = confusion.sum(axis=1)
    per_class = []
    recalls = []
    for c in range(confusion.shape[0]):
        if row_sums[c] == 0:
            per_class.append(None)
        else:
            r = float(int(confusion[c, c]) / int(row_sums[c]))
            per_class.append(r)
            recalls.append(r)
    oa = float(int(np.trace(confusion)) / total)
    aa = float(sum(recalls) / len(recalls))
    return MetricsReport(confusion=confusion, oa=oa, aa=aa, per_class=per_class,
                         counts=[int(s) for s in row_sums])


def predict_coords(params: ModelParams, source: PatchSource, coords: np.ndarray,
                   batch_size: int = 256, rotate: bool = False) -> np.ndarray:
    """Predicted 1-based class ids for each (h, w) center, in coords order."""
    out = np.empty(len(coords), dtype=np.int64)
    for lo in range(0, len(coords), batch_size):
        chunk = coords[lo:lo + batch_size]
        patches = Tensor(source.gather(chunk, rotate=rotate))
        logits = forward(patches, params)
        out[lo:lo + len(chunk)] = predict(logits.data)
    return out


def evaluate(params: ModelParams, source: PatchSource, coords: np.ndarray,
             true_ids: np.ndarray, batch_size: int = 256,
             rotate: bool = False) -> MetricsReport:
    """Score one pixel set. Pure: same params and pixels give the same report."""
    predicted = predict_coords(params, source, coords, batch_size=batch_size,
                               rotate=rotate)
    confusion = confusion_matrix(true_ids, predicted, params.config.num_classes)
    return report_from_confusion(confusion)


@dataclass
class RotationAudit:
    """Paired evaluation of one pixel set, raw and with patches rotated 180°."""

    raw: MetricsReport
    rotated: MetricsReport

    @property
    def delta_oa(self) -> float:
        return self.rotated.oa - self.raw.oa

    @property
    def delta_aa(self) -> float:
        return self.rotated.aa - self.raw.aa

    def to_json_dict(self) -> dict:
        return {
            "raw": self.raw.to_json_dict(),
            "rotated": self.rotated.to_json_dict(),
            "delta_oa": self.delta_oa,
            "delta_aa": self.delta_aa,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True)


def rotation_audit(params: ModelParams, source: PatchSource, coords: np.ndarray,
                   true_ids: np.ndarray, batch_size: int = 256) -> RotationAudit:
    """Evaluate the identical pixels twice: raw, and rotated 180 degrees."""
    raw = evaluate(params, source, coords, true_ids, batch_size=batch_size)
    rotated = evaluate(params, source, coords, true_ids, batch_size=batch_size,
                       rotate=True)
    if raw.counts != rotated.counts:
        raise UsageError("rotation audit evaluated different pixel sets")
    return RotationAudit(raw=raw, rotated=rotated)
