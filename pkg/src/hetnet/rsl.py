"""Reflection-semantics context head: four parallel branches joined residually."""

from collections import OrderedDict
from typing import List

from torch import nn

from .errors import ConfigurationError
from .layers import Add, Concat, conv_bn_relu

__all__ = ["RSL", "rsl_forward", "rsl_receptive_field", "receptive_field"]


def _conv_bn(cin, cout, k, dilation=1):
    return conv_bn_relu(cin, cout, k, dilation=dilation, relu=False)


class RSL(nn.Module):
    """Branches 1 and 4 are both a normalized 1x1 conv but keep separate weights;
    branch 4 is the residual path added after the merge conv."""

    def __init__(self, in_channels, out_channels):
        super().__init__()
        if in_channels <= 0 or out_channels <= 0:
            raise ConfigurationError("RSL channel counts must be positive")
        c = out_channels
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.branch1 = _conv_bn(in_channels, c, 1)
        self.branch2 = nn.Sequential(OrderedDict([
            ("b0", conv_bn_relu(in_channels, c, 1)),
            ("b1", conv_bn_relu(c, c, 7)),
            ("out", _conv_bn(c, c, 3, dilation=7)),
        ]))
        self.branch3 = nn.Sequential(OrderedDict([
            ("b0", conv_bn_relu(in_channels, c, 1)),
            ("b1", conv_bn_relu(c, c, 7)),
            ("b2", conv_bn_relu(c, c, 7)),
            ("out", _conv_bn(c, c, 3, dilation=7)),
        ]))
        self.branch4 = _conv_bn(in_channels, c, 1)
        self.cat = Concat()
        self.merge = _conv_bn(3 * c, c, 3)
        self.add = Add()
        self.relu = nn.ReLU()

    def branches(self, x):
        return [self.branch1(x), self.branch2(x), self.branch3(x), self.branch4(x)]

    def forward(self, x):
        if x.shape[1] != self.in_channels:
            raise ConfigurationError(f"RSL expects {self.in_channels} channels, got {x.shape[1]}")
        s1, s2, s3, s4 = self.branches(x)
        mid = self.merge(self.cat(s1, s2, s3))
        return self.relu(self.add(mid, s4))


def rsl_forward(state: RSL, f_in):
    return state(f_in)


def receptive_field(module: nn.Module) -> int:
    """Receptive field of a chain of convs, composed as rf += dilation*(k-1)*jump."""
    rf, jump = 1, 1
    for m in module.modules():
        if isinstance(m, nn.Conv2d):
            k, d, s = m.kernel_size[0], m.dilation[0], m.stride[0]
            rf += d * (k - 1) * jump
            jump *= s
    return rf


def rsl_receptive_field(state: RSL) -> List[int]:
    return [receptive_field(b) for b in (state.branch1, state.branch2, state.branch3, state.branch4)]
