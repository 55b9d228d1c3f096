"""Network assembly: backbone, per-stage heads, global extractor and fusion tree.

Stage heads map every backbone stage to ``fusion_width`` channels. The fused
maps follow the fixed tree::

    f21 = agg(f1, f2)          f22 = agg(f2, f3)
    f23 = agg(f4, agg(f5, f6)) f31 = agg(f22, f23)
    main = head(agg(f21, f31))

where ``agg(low, high)`` is :class:`CrossAggregate` and ``f6`` is the global
extractor output (skipped when the extractor is disabled).
"""

import math
from collections import OrderedDict
from dataclasses import asdict, dataclass, field, replace
from typing import List, Optional

import torch
import torch.nn.functional as F
from torch import nn

from .backbone import Backbone, BackboneConfig, build_backbone, extract
from .errors import ConfigurationError, InputError
from .layers import Add, Concat, Mul, Resize, conv_bn_relu
from .mic import MIC, STRATEGIES
from .rsl import RSL

HEAD_TYPES = ("MIC", "RSL", "ICFE_only", "identity")
CANONICAL_HEADS = ["MIC", "MIC", "MIC", "RSL", "RSL"]


@dataclass
class NetworkConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    head_assignment: List[str] = field(default_factory=lambda: list(CANONICAL_HEADS))
    use_global_extractor: bool = True
    fusion_width: int = 16
    rotation_strategy: str = "mic"
    deep_supervision: bool = True
    edge_supervision: bool = True
    fusion_combine: str = "sum"
    mic_reduction: int = 16
    share_icfe_weights: bool = False
    ge_bins: List[int] = field(default_factory=lambda: [1, 2, 3, 6])

    def validate(self):
        self.backbone.validate()
        if len(self.head_assignment) != 5:
            raise ConfigurationError(f"head_assignment needs 5 entries, got {len(self.head_assignment)}")
        for i, h in enumerate(self.head_assignment, start=1):
            if h not in HEAD_TYPES:
                raise ConfigurationError(f"stage {i}: unknown head type {h!r}; choose from {HEAD_TYPES}")
        if self.fusion_width <= 0:
            raise ConfigurationError(f"fusion_width must be positive, got {self.fusion_width}")
        if self.rotation_strategy not in STRATEGIES:
            raise ConfigurationError(f"unknown rotation strategy {self.rotation_strategy!r}")
        if self.fusion_combine not in ("sum", "concat"):
            raise ConfigurationError(f"fusion_combine must be 'sum' or 'concat', got {self.fusion_combine!r}")
        if not self.ge_bins or any(b <= 0 for b in self.ge_bins):
            raise ConfigurationError(f"ge_bins must be positive integers, got {self.ge_bins}")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["backbone"] = BackboneConfig(**d.get("backbone", {}))
        return cls(**d)


@dataclass
class FusionGraphOutputs:
    main_output: torch.Tensor
    f: Optional[List[torch.Tensor]] = None  # f1..f6 (f6 is None without the global extractor)
    f21: Optional[torch.Tensor] = None
    f22: Optional[torch.Tensor] = None
    f23: Optional[torch.Tensor] = None
    f31: Optional[torch.Tensor] = None
    aux_outputs: Optional[List[torch.Tensor]] = None
    edge_output: Optional[torch.Tensor] = None


class BinPool(nn.Module):
    """Adaptive average pooling to ``bins x bins``, clamped to the input size."""

    def __init__(self, bins):
        super().__init__()
        self.bins = bins

    def forward(self, x):
        h, w = x.shape[-2:]
        return F.adaptive_avg_pool2d(x, (min(self.bins, h), min(self.bins, w)))


class GlobalExtractor(nn.Module):
    def __init__(self, width, bins=(1, 2, 3, 6)):
        super().__init__()
        branch_width = max(1, width // 4)
        self.bins = list(bins)
        self.pools = nn.ModuleList([BinPool(b) for b in self.bins])
        self.convs = nn.ModuleList([conv_bn_relu(width, branch_width, 1) for _ in self.bins])
        self.resize = Resize()
        self.cat = Concat()
        self.out = conv_bn_relu(width + branch_width * len(self.bins), width, 3)

    def bin_features(self, x):
        size = x.shape[-2:]
        return [self.resize(conv(pool(x)), size) for pool, conv in zip(self.pools, self.convs)]

    def forward(self, f5):
        return self.out(self.cat(f5, *self.bin_features(f5)))


def global_extractor(ge: GlobalExtractor, f5):
    return ge(f5)


class CrossAggregate(nn.Module):
    """Fuse a low-level map with a coarser high-level map by mutual gating.

    ``ratio`` is the fixed resolution ratio low/high (a power of two); the
    low-level map reaches the high resolution through a 3x3 conv with that
    stride.
    """

    def __init__(self, width, ratio=1, combine="sum"):
        super().__init__()
        if ratio < 1 or ratio & (ratio - 1):
            raise ConfigurationError(f"resolution ratio must be a power of two, got {ratio}")
        self.ratio = ratio
        self.combine = combine
        self.resize = Resize()
        self.gate_low = Mul()
        self.gate_high = Mul()
        self.down = conv_bn_relu(width, width, 3, stride=ratio, padding=1, relu=False)
        self.join = Add() if combine == "sum" else Concat()
        self.fuse = conv_bn_relu(width if combine == "sum" else 2 * width, width, 3)

    def forward(self, f_low, f_high):
        hl, wl = f_low.shape[-2:]
        hh, wh = f_high.shape[-2:]
        if hl % hh or wl % wh or hl // hh != wl // wh or hl // hh != self.ratio:
            raise InputError(
                f"cross aggregation expects a {self.ratio}x resolution gap, got {hl}x{wl} vs {hh}x{wh}")
        size = (hl, wl)
        interim_low = self.gate_low(f_low, self.resize(f_high, size))
        interim_high = self.gate_high(f_high, self.down(f_low))
        return self.fuse(self.join(interim_low, self.resize(interim_high, size)))


def cross_aggregate(module: CrossAggregate, f_low, f_high):
    return module(f_low, f_high)


def _ratio(strides, low, high):
    r = strides[high] // strides[low]
    if strides[high] % strides[low] or r & (r - 1):
        raise ConfigurationError(f"stage strides {strides[low]} and {strides[high]} are not a power-of-two apart")
    return r


class Network(nn.Module):
    def __init__(self, config: NetworkConfig):
        super().__init__()
        config.validate()
        self.config = config
        self.backbone = build_backbone(config.backbone)
        width = config.fusion_width
        chans = config.backbone.stage_channels
        strides = config.backbone.stage_strides

        self.mic = nn.ModuleDict()
        self.rsl = nn.ModuleDict()
        self.proj = nn.ModuleDict()
        for i, (kind, cin) in enumerate(zip(config.head_assignment, chans), start=1):
            key = f"stage{i}"
            if kind == "MIC":
                self.mic[key] = MIC(cin, width, config.rotation_strategy, config.mic_reduction,
                                    config.share_icfe_weights)
            elif kind == "ICFE_only":
                self.mic[key] = MIC(cin, width, "single", config.mic_reduction)
            elif kind == "RSL":
                self.rsl[key] = RSL(cin, width)
            else:
                self.proj[key] = conv_bn_relu(cin, width, 1)

        self.ge = GlobalExtractor(width, config.ge_bins) if config.use_global_extractor else None
        combine = config.fusion_combine
        self.agg21 = CrossAggregate(width, _ratio(strides, 0, 1), combine)
        self.agg22 = CrossAggregate(width, _ratio(strides, 1, 2), combine)
        self.agg56 = CrossAggregate(width, 1, combine) if self.ge is not None else None
        self.agg23 = CrossAggregate(width, _ratio(strides, 3, 4), combine)
        self.agg31 = CrossAggregate(width, _ratio(strides, 1, 3), combine)
        self.agg_out = CrossAggregate(width, _ratio(strides, 0, 1), combine)
        self.predict = nn.Conv2d(width, 1, 1)
        self.aux = nn.ModuleList([nn.Conv2d(width, 1, 1) for _ in range(4)]) if config.deep_supervision else None
        self.edge = nn.Conv2d(width, 1, 1) if config.edge_supervision else None
        self.resize = Resize()

    def head(self, i):
        key = f"stage{i}"
        for group in (self.mic, self.rsl, self.proj):
            if key in group:
                return group[key]
        raise KeyError(key)

    def forward(self, images, all_outputs=None):
        """Eval mode returns only the main map unless ``all_outputs`` is set."""
        size = images.shape[-2:]
        pyramid = extract(self.backbone, images)
        f = [self.head(i)(x) for i, x in enumerate(pyramid, start=1)]
        f6 = self.ge(f[4]) if self.ge is not None else None
        f21 = self.agg21(f[0], f[1])
        f22 = self.agg22(f[1], f[2])
        top = self.agg56(f[4], f6) if f6 is not None else f[4]
        f23 = self.agg23(f[3], top)
        f31 = self.agg31(f22, f23)
        main = self.resize(self.predict(self.agg_out(f21, f31)), size)
        out = FusionGraphOutputs(main_output=main)
        if not (self.training if all_outputs is None else all_outputs):
            return out
        out.f = f + [f6]
        out.f21, out.f22, out.f23, out.f31 = f21, f22, f23, f31
        if self.aux is not None:
            out.aux_outputs = [head(x) for head, x in zip(self.aux, (f21, f22, f23, f31))]
        if self.edge is not None:
            out.edge_output = self.resize(self.edge(f21), size)
        return out


def build_network(config: NetworkConfig) -> Network:
    return Network(config)


def forward(net: Network, images, mode="eval") -> FusionGraphOutputs:
    if mode not in ("train", "eval"):
        raise ConfigurationError(f"mode must be 'train' or 'eval', got {mode!r}")
    net.train(mode == "train")
    if mode == "eval":
        with torch.no_grad():
            return net(images)
    return net(images)


# ---------------------------------------------------------------- variants

_VARIANT_HEADS = {
    "HetNet": (CANONICAL_HEADS, True),
    "A_a": (["MIC"] * 5, True),
    "A_b": (["RSL"] * 5, True),
    "A_ba": (["RSL"] * 3 + ["MIC"] * 2, True),
    "I": (["identity"] * 5, False),
    "II": (["identity"] * 5, True),
    "III": (["ICFE_only"] * 3 + ["identity"] * 2, True),
    "IV": (["MIC"] * 3 + ["identity"] * 2, True),
    "V": (["identity"] * 3 + ["RSL"] * 2, True),
}

ROTATION_ROWS = OrderedDict([
    ("ICFE", "single"),
    ("ICFE+ICFE", "dual_same"),
    ("ICFE*3", "tri"),
    ("ICFE*4", "quad"),
    ("MIC", "mic"),
])

GRIDS = OrderedDict([
    ("architecture", ["A_ba", "A_a", "A_b", "HetNet"]),
    ("components", ["I", "II", "III", "IV", "V", "HetNet"]),
    ("rotation", list(ROTATION_ROWS)),
])


def base_config(scale="tiny", **overrides) -> NetworkConfig:
    if scale == "full":
        cfg = NetworkConfig(backbone=BackboneConfig.full(), fusion_width=64)
    elif scale == "tiny":
        cfg = NetworkConfig(backbone=BackboneConfig.tiny(), fusion_width=16)
    else:
        raise ConfigurationError(f"scale must be 'full' or 'tiny', got {scale!r}")
    return replace(cfg, **overrides)


def variant_config(name, scale="tiny", **overrides) -> NetworkConfig:
    """Config for a named row of the architecture/component ablations (or ``HetNet``)."""
    if name not in _VARIANT_HEADS:
        raise ConfigurationError(f"unknown variant {name!r}; choose from {sorted(_VARIANT_HEADS)}")
    heads, ge = _VARIANT_HEADS[name]
    fields = dict(head_assignment=list(heads), use_global_extractor=ge)
    fields.update(overrides)
    return base_config(scale, **fields)


def rotation_config(label, scale="tiny", **overrides) -> NetworkConfig:
    if label not in ROTATION_ROWS:
        raise ConfigurationError(f"unknown rotation row {label!r}; choose from {list(ROTATION_ROWS)}")
    return variant_config("HetNet", scale, rotation_strategy=ROTATION_ROWS[label], **overrides)


def ablation_grid(name, scale="tiny", **overrides):
    """Rows of one ablation table as ``(label, NetworkConfig)`` pairs."""
    if name not in GRIDS:
        raise ConfigurationError(f"unknown grid {name!r}; choose from {list(GRIDS)}")
    make = rotation_config if name == "rotation" else variant_config
    return [(label, make(label, scale, **overrides)) for label in GRIDS[name]]
