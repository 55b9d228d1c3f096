"""Small building blocks shared by the heads.

Elementwise products, sums and resampling are wrapped as modules so the
layer table in :mod:`hetnet.efficiency` sees every operation of the graph.
"""

from collections import OrderedDict

import torch
import torch.nn.functional as F
from torch import nn


def conv_bn_relu(cin, cout, k, stride=1, padding=None, dilation=1, relu=True, act=None):
    if padding is None:
        padding = dilation * (k - 1) // 2
    layers = [
        ("conv", nn.Conv2d(cin, cout, k, stride=stride, padding=padding, dilation=dilation, bias=False)),
        ("bn", nn.BatchNorm2d(cout)),
    ]
    if act is not None:
        layers.append(("act", act))
    elif relu:
        layers.append(("relu", nn.ReLU(inplace=True)))
    return nn.Sequential(OrderedDict(layers))


class Add(nn.Module):
    def forward(self, a, b):
        return a + b


class Mul(nn.Module):
    def forward(self, *xs):
        out = xs[0]
        for x in xs[1:]:
            out = out * x
        return out


class Concat(nn.Module):
    def forward(self, *xs):
        return torch.cat(xs, dim=1)


class Resize(nn.Module):
    """Bilinear resize to the spatial size of a reference (or explicit) shape."""

    def forward(self, x, size):
        if tuple(x.shape[-2:]) == tuple(size):
            return x
        return F.interpolate(x, size=tuple(size), mode="bilinear", align_corners=False)


class Rot90(nn.Module):
    def __init__(self, k):
        super().__init__()
        self.k = k

    def forward(self, x):
        return rot90(x, self.k)


def rot90(f: torch.Tensor, d: int) -> torch.Tensor:
    """Rotate the spatial plane of a (B, C, H, W) map 90 degrees counterclockwise ``d`` times."""
    return torch.rot90(f, d, dims=(2, 3))
