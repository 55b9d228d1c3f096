"""Training objectives: pixel-position-aware map loss, edge BCE, deep-supervision sum."""

import csv
from dataclasses import dataclass
from typing import List

import torch
import torch.nn.functional as F

from .errors import ConfigurationError, InputError


@dataclass
class LossTerms:
    l_bce_edge: torch.Tensor
    l_ppa_per_scale: List[torch.Tensor]
    total: torch.Tensor

    def as_floats(self):
        vals = [self.l_bce_edge, *self.l_ppa_per_scale, self.total]
        return [float(v.detach()) for v in vals]


def _check_shapes(a, b):
    if a.shape != b.shape:
        raise InputError(f"prediction shape {tuple(a.shape)} != target shape {tuple(b.shape)}")


def ppa_weights(gt, kernel=31, factor=5.0):
    """Hard-pixel weights: 1 + factor * |local mean of gt - gt|.

    The local mean excludes padding so a constant mask gets weight 1 everywhere.
    """
    local = F.avg_pool2d(gt, kernel, stride=1, padding=kernel // 2, count_include_pad=False)
    return 1 + factor * (local - gt).abs()


def ppa_loss(logits, gt_mask, kernel=31, factor=5.0, smooth=1.0):
    """Weighted BCE plus weighted IoU, averaged over the batch."""
    _check_shapes(logits, gt_mask)
    w = ppa_weights(gt_mask, kernel, factor)
    bce = F.binary_cross_entropy_with_logits(logits, gt_mask, reduction="none")
    wbce = (w * bce).sum(dim=(2, 3)) / w.sum(dim=(2, 3))
    p = torch.sigmoid(logits)
    inter = (w * p * gt_mask).sum(dim=(2, 3))
    union = (w * (p + gt_mask)).sum(dim=(2, 3))
    wiou = 1 - (inter + smooth) / (union - inter + smooth)
    return (wbce + wiou).mean()


def edge_bce_loss(logits, gt_edge):
    _check_shapes(logits, gt_edge)
    return F.binary_cross_entropy_with_logits(logits, gt_edge)


def resize_mask(mask, size):
    """Bilinear resize followed by a 0.5 threshold, keeping the mask binary."""
    if tuple(mask.shape[-2:]) == tuple(size):
        return mask
    return (F.interpolate(mask, size=tuple(size), mode="bilinear", align_corners=False) >= 0.5).to(mask.dtype)


def total_loss(outputs, gt_mask, gt_edge, deep_supervision=True) -> LossTerms:
    """Edge BCE plus the ppa losses of the main and auxiliary maps weighted 1/2**i."""
    maps = [outputs.main_output]
    if deep_supervision:
        if not outputs.aux_outputs or len(outputs.aux_outputs) != 4:
            raise ConfigurationError("deep supervision needs the four auxiliary outputs")
        maps += list(outputs.aux_outputs)
    ppa = [ppa_loss(m, resize_mask(gt_mask, m.shape[-2:])) for m in maps]
    if outputs.edge_output is not None:
        edge = edge_bce_loss(outputs.edge_output, resize_mask(gt_edge, outputs.edge_output.shape[-2:]))
    else:
        edge = torch.zeros((), device=gt_mask.device, dtype=gt_mask.dtype)
    total = edge + sum(l / 2 ** i for i, l in enumerate(ppa))
    return LossTerms(edge, ppa, total)


LOSS_CSV_HEADER = ["step", "l_bce_edge", "ppa_0", "ppa_1", "ppa_2", "ppa_3", "ppa_4", "total"]


class LossLogger:
    """Appends one CSV row per optimisation step; missing aux terms are left blank."""

    def __init__(self, path):
        self.path = path
        self._fh = open(path, "w", newline="")
        self._writer = csv.writer(self._fh)
        self._writer.writerow(LOSS_CSV_HEADER)

    def log(self, step, terms: LossTerms):
        vals = terms.as_floats()
        edge, ppa, total = vals[0], vals[1:-1], vals[-1]
        ppa = ppa + [""] * (5 - len(ppa))
        self._writer.writerow([step, edge, *ppa, total])

    def close(self):
        self._fh.close()
