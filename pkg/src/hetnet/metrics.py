"""Per-image MAE, IoU and F-beta with dataset-level averaging.

Predictions are probability maps in [0, 1]; ground truth is binary. IoU and
F-beta binarize with ``pred >= threshold``. ``threshold="adaptive"`` uses
twice the mean prediction, capped just below 1.
"""

import csv
import io
from dataclasses import dataclass, asdict

import numpy as np

from .errors import InputError

BETA_SQ = 0.3


@dataclass
class MetricReport:
    mae: float
    iou: float
    f_beta: float
    n_images: int
    threshold: object = 0.5
    f_beta_max: float = float("nan")

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["n_images", "threshold", "mae", "iou", "f_beta", "f_beta_max"])
        w.writerow([self.n_images, self.threshold, self.mae, self.iou, self.f_beta, self.f_beta_max])
        return buf.getvalue()

    def table(self):
        text = (f"images     {self.n_images}\n"
                f"threshold  {self.threshold}\n"
                f"MAE        {self.mae:.4f}\n"
                f"IoU        {self.iou:.4f}\n"
                f"F_beta     {self.f_beta:.4f}")
        if not np.isnan(self.f_beta_max):
            text += f"\nmax F_beta {self.f_beta_max:.4f}"
        return text

    def as_dict(self):
        return asdict(self)


def _pair(pred, gt):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise InputError(f"prediction shape {pred.shape} != ground-truth shape {gt.shape}")
    return pred, gt.astype(bool)


def resolve_threshold(pred, threshold):
    if threshold == "adaptive":
        return min(2.0 * float(np.mean(pred)), np.nextafter(1.0, 0.0))
    return float(threshold)


def mae(pred, gt):
    pred, gt = _pair(pred, gt)
    return float(np.mean(np.abs(pred - gt)))


def iou(pred, gt, threshold=0.5):
    pred, gt = _pair(pred, gt)
    b = pred >= resolve_threshold(pred, threshold)
    union = np.logical_or(b, gt).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(b, gt).sum() / union)


def _f_from_counts(tp, fp, fn, beta_sq):
    if tp == 0:
        # all-empty counts as a perfect match; anything else without a hit scores 0
        return 1.0 if fp == 0 and fn == 0 else 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return float((1 + beta_sq) * precision * recall / (beta_sq * precision + recall))


def f_beta(pred, gt, threshold=0.5, beta_sq=BETA_SQ):
    pred, gt = _pair(pred, gt)
    b = pred >= resolve_threshold(pred, threshold)
    tp = int(np.logical_and(b, gt).sum())
    fp = int(np.logical_and(b, ~gt).sum())
    fn = int(np.logical_and(~b, gt).sum())
    return _f_from_counts(tp, fp, fn, beta_sq)


def f_beta_max(pred, gt, n_thresholds=255, beta_sq=BETA_SQ):
    """Best F-beta over evenly spaced thresholds in (0, 1)."""
    thresholds = np.linspace(0, 1, n_thresholds + 2)[1:-1]
    return max(f_beta(pred, gt, t, beta_sq) for t in thresholds)


def evaluate_dataset(predictions, threshold=0.5, with_max=False) -> MetricReport:
    """Average per-image metrics over an iterable of ``(pred, gt)`` pairs."""
    maes, ious, fs, fmax = [], [], [], []
    for pred, gt in predictions:
        maes.append(mae(pred, gt))
        ious.append(iou(pred, gt, threshold))
        fs.append(f_beta(pred, gt, threshold))
        if with_max:
            fmax.append(f_beta_max(pred, gt))
    if not maes:
        raise InputError("evaluate_dataset needs at least one prediction")
    return MetricReport(float(np.mean(maes)), float(np.mean(ious)), float(np.mean(fs)), len(maes),
                        threshold, float(np.mean(fmax)) if fmax else float("nan"))
