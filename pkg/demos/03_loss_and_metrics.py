"""What the pixel-position-aware loss emphasizes, and how the metrics respond.

    python demos/03_loss_and_metrics.py
"""

import numpy as np
import torch

from hetnet.losses import ppa_loss, ppa_weights
from hetnet.metrics import f_beta, f_beta_max, iou, mae

gt = torch.zeros(1, 1, 120, 120)
gt[..., 30:90, 30:90] = 1

# Weights peak near the mask boundary, where the local average differs most
# from the pixel's own label; deep inside either region they fall back to 1.
w = ppa_weights(gt)[0, 0]
print("weight at centre / corner / boundary:",
      f"{w[60, 60]:.2f} / {w[0, 0]:.2f} / {w[30, 60]:.2f}")

# A prediction that is right everywhere except a thin band at the border is
# penalized more than its pixel count suggests.
logits = torch.where(gt > 0, 4.0, -4.0)
blurred = logits.clone()
blurred[..., 28:32, :] = 0.0
print(f"loss sharp {ppa_loss(logits, gt):.4f}, border-blurred {ppa_loss(blurred, gt):.4f}")

pred = torch.sigmoid(blurred)[0, 0].numpy()
mask = gt[0, 0].numpy()
print(f"MAE {mae(pred, mask):.4f}  IoU {iou(pred, mask):.4f}  "
      f"F_beta {f_beta(pred, mask):.4f}  max F_beta {f_beta_max(pred, mask):.4f}")
print(f"adaptive-threshold IoU {iou(pred, mask, 'adaptive'):.4f}")
