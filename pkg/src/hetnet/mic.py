"""Multi-orientation intensity contrast head.

An :class:`ICFE` gates a feature map with one sigmoid profile per row and one
per column, both computed from axis-wise average pooling through a shared
1x1 projection. :class:`MIC` runs ICFEs on rotated copies of its projected
input, rotates the results back, multiplies them, and refines the product
with a 3x3 and a 1x1 conv block.
"""

from collections import OrderedDict

import torch
from torch import nn

from .errors import ConfigurationError, InputError
from .layers import Mul, Rot90, conv_bn_relu, rot90

__all__ = ["ICFE", "MIC", "STRATEGIES", "rot90", "icfe_forward", "mic_forward"]

# rotation steps (multiples of 90 degrees CCW) handled by each extractor
STRATEGIES = {
    "single": (0,),
    "dual_same": (0, 0),
    "tri": (0, 1, 2),
    "quad": (0, 1, 2, 3),
    "mic": (0, 1),
}


class AxisPool(nn.Module):
    """Average over one spatial axis: ``axis=3`` gives (B,C,H,1), ``axis=2`` gives (B,C,1,W)."""

    def __init__(self, axis):
        super().__init__()
        self.axis = axis

    def forward(self, x):
        return x.mean(dim=self.axis, keepdim=True)


class ICFE(nn.Module):
    def __init__(self, in_channels, reduction=16, min_mid=8, bias=True):
        super().__init__()
        if in_channels <= 0:
            raise ConfigurationError(f"in_channels must be positive, got {in_channels}")
        self.in_channels = in_channels
        self.mid_channels = max(min_mid, in_channels // reduction)
        self.pool_h = AxisPool(3)
        self.pool_v = AxisPool(2)
        self.joint = nn.Sequential(OrderedDict([
            ("conv", nn.Conv2d(in_channels, self.mid_channels, 1, bias=bias)),
            ("bn", nn.BatchNorm2d(self.mid_channels)),
            ("act", nn.SiLU()),
        ]))
        self.conv_h = nn.Conv2d(self.mid_channels, in_channels, 1, bias=bias)
        self.conv_w = nn.Conv2d(self.mid_channels, in_channels, 1, bias=bias)
        self.sigmoid = nn.Sigmoid()
        self.gate = Mul()

    def attention(self, x):
        """Return the row gate (B,C,H,1) and column gate (B,C,1,W)."""
        if x.shape[1] != self.in_channels:
            raise ConfigurationError(f"ICFE expects {self.in_channels} channels, got {x.shape[1]}")
        h, w = x.shape[-2:]
        ph = self.pool_h(x)
        pv = self.pool_v(x).permute(0, 1, 3, 2)
        # rows and columns share the projection, so stack them along the length axis
        mid = self.joint(torch.cat([ph, pv], dim=2))
        mid_h, mid_w = torch.split(mid, [h, w], dim=2)
        a_h = self.sigmoid(self.conv_h(mid_h))
        a_w = self.sigmoid(self.conv_w(mid_w.permute(0, 1, 3, 2)))
        return a_h, a_w

    def forward(self, x):
        a_h, a_w = self.attention(x)
        return self.gate(a_h, a_w, x)


def icfe_forward(state: ICFE, f_in):
    return state(f_in)


class MIC(nn.Module):
    def __init__(self, in_channels, out_channels, strategy="mic", reduction=16,
                 share_icfe_weights=False, icfe_bias=True):
        super().__init__()
        if strategy not in STRATEGIES:
            raise ConfigurationError(f"unknown rotation strategy {strategy!r}; choose from {sorted(STRATEGIES)}")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.strategy = strategy
        self.turns = STRATEGIES[strategy]
        self.share_icfe_weights = share_icfe_weights
        self.proj = conv_bn_relu(in_channels, out_channels, 1)
        n = 1 if share_icfe_weights else len(self.turns)
        self.icfe = nn.ModuleList([ICFE(out_channels, reduction, bias=icfe_bias) for _ in range(n)])
        self.rot_in = nn.ModuleList([Rot90(k) for k in self.turns])
        self.rot_back = nn.ModuleList([Rot90(-k) for k in self.turns])
        self.combine = Mul()
        self.conv3 = conv_bn_relu(out_channels, out_channels, 3)
        self.conv1 = conv_bn_relu(out_channels, out_channels, 1)

    def extractor(self, i):
        return self.icfe[0 if self.share_icfe_weights else i]

    def factors(self, p):
        """Per-orientation ICFE outputs, each rotated back to the input orientation."""
        if any(k % 2 for k in self.turns) and p.shape[-1] != p.shape[-2]:
            raise InputError(
                f"strategy {self.strategy!r} rotates by 90 degrees and needs square maps, got {tuple(p.shape[-2:])}")
        out = []
        for i, k in enumerate(self.turns):
            f = self.extractor(i)(self.rot_in[i](p) if k else p)
            out.append(self.rot_back[i](f) if k else f)
        return out

    def forward(self, x):
        if x.shape[1] != self.in_channels:
            raise ConfigurationError(f"MIC expects {self.in_channels} channels, got {x.shape[1]}")
        p = self.proj(x)
        fs = self.factors(p)
        f3 = self.combine(*fs) if len(fs) > 1 else fs[0]
        return self.conv1(self.conv3(f3))


def mic_forward(state: MIC, f_in):
    return state(f_in)
