"""Segmentation metrics: confusion counts, per-image scores, thresholded IoU, reports.

When a ratio's denominator is zero the class it measures is absent from both
prediction and ground truth; such ratios are reported as 1.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ParameterError

METRIC_NAMES = ("f1", "specificity", "sensitivity", "iou", "pacc")
REPORT_SCHEMA = "tricyclegan-metrics"
REPORT_VERSION = 1
TH_IOU_THRESHOLD = 0.65


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self):
        return self.tp + self.fp + self.tn + self.fn


def _binary(arr, name):
    arr = np.asarray(arr)
    if arr.dtype != bool and not np.isin(arr, (0, 1)).all():
        raise ParameterError(f"{name} is not binary")
    return arr.astype(bool)


def confusion(pred, gt) -> ConfusionCounts:
    pred = _binary(pred, "prediction")
    gt = _binary(gt, "ground truth")
    if pred.shape != gt.shape:
        raise ParameterError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    tp = int(np.count_nonzero(pred & gt))
    fp = int(np.count_nonzero(pred & ~gt))
    fn = int(np.count_nonzero(~pred & gt))
    return ConfusionCounts(tp, fp, int(pred.size) - tp - fp - fn, fn)


def _ratio(num, den):
    return 1.0 if den == 0 else num / den


def compute_metrics(counts: ConfusionCounts) -> dict:
    tp, fp, tn, fn = counts.tp, counts.fp, counts.tn, counts.fn
    if counts.total <= 0:
        raise ParameterError("confusion counts are empty")
    return {
        "f1": _ratio(2 * tp, 2 * tp + fp + fn),
        "specificity": _ratio(tn, tn + fp),
        "sensitivity": _ratio(tp, tp + fn),
        "iou": _ratio(tp, tp + fp + fn),
        "pacc": (tp + tn) / counts.total,
    }


def thresholded_iou(per_image_ious, threshold=TH_IOU_THRESHOLD) -> float:
    """Mean IoU after zeroing every entry below ``threshold``."""
    ious = np.asarray(list(per_image_ious), dtype=np.float64)
    if ious.size == 0:
        raise ParameterError("no IoU values given")
    return float(np.where(ious < threshold, 0.0, ious).mean())


@dataclass
class MetricsReport:
    per_image: list = field(default_factory=list)  # [{"name", f1, specificity, ...}]
    mean: dict = field(default_factory=dict)
    sd: dict = field(default_factory=dict)
    th_iou: float = 0.0

    @classmethod
    def from_rows(cls, rows):
        if not rows:
            raise ParameterError("cannot build a report from zero images")
        mean, sd = {}, {}
        for m in METRIC_NAMES:
            values = np.array([r[m] for r in rows], dtype=np.float64)
            mean[m] = float(values.mean())
            sd[m] = float(values.std(ddof=1)) if len(values) > 1 else 0.0
        return cls(list(rows), mean, sd, thresholded_iou(r["iou"] for r in rows))

    def summary(self):
        return {m: f"{self.mean[m]:.2f} ({self.sd[m]:.2f})" for m in METRIC_NAMES}

    def to_dict(self):
        return {"schema": REPORT_SCHEMA, "version": REPORT_VERSION, **asdict(self)}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        data = json.loads(text)
        if data.get("schema") != REPORT_SCHEMA or data.get("version") != REPORT_VERSION:
            raise ParameterError("not a version-1 metrics report")
        return cls(data["per_image"], data["mean"], data["sd"], data["th_iou"])

    def write(self, json_path, csv_path=None):
        json_path = Path(json_path)
        json_path.parent.mkdir(parents=True, exist_ok=True)
        json_path.write_text(self.to_json())
        csv_path = Path(csv_path) if csv_path else json_path.with_suffix(".csv")
        with csv_path.open("w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["name", *METRIC_NAMES])
            writer.writeheader()
            for row in self.per_image:
                writer.writerow({k: row[k] for k in ("name", *METRIC_NAMES)})
        return json_path, csv_path


def score_pairs(pairs) -> MetricsReport:
    """Report over ``(name, predicted_mask, gt_mask)`` triples."""
    rows = []
    for name, pred, gt in pairs:
        rows.append({"name": str(name), **compute_metrics(confusion(pred, gt))})
    return MetricsReport.from_rows(rows)


def evaluate(predictor, labelled, threshold=0.5) -> MetricsReport:
    """Segment each ``(image, mask)`` pair and aggregate mean and sample sd.

    ``predictor`` is a model bundle or any callable mapping an image to a
    binary mask. ``labelled`` may also yield ``(name, image, mask)``.
    """
    if not callable(predictor):
        from .training import predict_mask

        bundle = predictor
        predictor = lambda image: predict_mask(bundle, image, threshold)  # noqa: E731
    triples = []
    for i, item in enumerate(labelled):
        name, image, mask = item if len(item) == 3 else (str(i), *item)
        triples.append((name, predictor(image), mask))
    if not triples:
        raise ParameterError("evaluation set is empty")
    return score_pairs(triples)


def is_valid_report(report: MetricsReport) -> bool:
    values = [report.th_iou, *report.mean.values()]
    values += [row[m] for row in report.per_image for m in METRIC_NAMES]
    return all(0.0 <= v <= 1.0 and math.isfinite(v) for v in values)
