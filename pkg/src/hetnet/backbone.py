"""Five-stage feature extractors.

``full`` is a ResNeXt-101 (32x4d) laid out as five stages with cumulative
strides 2, 4, 8, 16, 32; ``tiny`` is a stack of five strided 3x3 conv blocks
meant for CPU-scale experiments. Parameter names follow
``stage{i}.block{j}.<layer>`` so checkpoints can be validated key by key.
"""

from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import torch
from torch import nn

from .errors import ConfigurationError, InputError
from .layers import Add, conv_bn_relu

FULL_CHANNELS = [64, 256, 512, 1024, 2048]
TINY_CHANNELS = [16, 32, 64, 64, 64]
DEFAULT_STRIDES = [2, 4, 8, 16, 32]

# ResNeXt-101 blocks per residual stage (stages 2-5)
RESNEXT101_LAYERS = [3, 4, 23, 3]


@dataclass
class BackboneConfig:
    variant: str = "tiny"
    stage_channels: List[int] = field(default_factory=lambda: list(TINY_CHANNELS))
    stage_strides: List[int] = field(default_factory=lambda: list(DEFAULT_STRIDES))
    pretrained_weights_path: Optional[str] = None
    cardinality: int = 32
    base_width: int = 4

    def validate(self):
        if self.variant not in ("full", "tiny"):
            raise ConfigurationError(f"unknown backbone variant {self.variant!r}")
        if len(self.stage_channels) != 5 or len(self.stage_strides) != 5:
            raise ConfigurationError("stage_channels and stage_strides need exactly 5 entries")
        if any(c <= 0 for c in self.stage_channels):
            raise ConfigurationError(f"stage_channels must be positive: {self.stage_channels}")
        if any(b <= a for a, b in zip(self.stage_strides, self.stage_strides[1:])):
            raise ConfigurationError(f"stage_strides must increase strictly: {self.stage_strides}")
        if self.stage_strides != DEFAULT_STRIDES:
            raise ConfigurationError(
                f"both backbone variants downsample by 2 per stage; got strides {self.stage_strides}")
        if self.variant == "full" and self.stage_channels != FULL_CHANNELS:
            raise ConfigurationError(
                f"full backbone has fixed stage channels {FULL_CHANNELS}, got {self.stage_channels}")

    @classmethod
    def full(cls, **kw):
        return cls(variant="full", stage_channels=list(FULL_CHANNELS), **kw)

    @classmethod
    def tiny(cls, stage_channels=None, **kw):
        return cls(variant="tiny", stage_channels=list(stage_channels or TINY_CHANNELS), **kw)


class Bottleneck(nn.Module):
    expansion = 4

    def __init__(self, cin, planes, stride=1, cardinality=32, base_width=4):
        super().__init__()
        width = int(planes * (base_width / 64.0)) * cardinality
        cout = planes * self.expansion
        self.conv1 = nn.Conv2d(cin, width, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(width)
        self.conv2 = nn.Conv2d(width, width, 3, stride=stride, padding=1, groups=cardinality, bias=False)
        self.bn2 = nn.BatchNorm2d(width)
        self.conv3 = nn.Conv2d(width, cout, 1, bias=False)
        self.bn3 = nn.BatchNorm2d(cout)
        self.relu = nn.ReLU(inplace=True)
        self.downsample = None
        if stride != 1 or cin != cout:
            self.downsample = nn.Sequential(OrderedDict([
                ("conv", nn.Conv2d(cin, cout, 1, stride=stride, bias=False)),
                ("bn", nn.BatchNorm2d(cout)),
            ]))
        # residual add, kept as a module so the layer table sees it
        self.add = Add()

    def forward(self, x):
        identity = x if self.downsample is None else self.downsample(x)
        out = self.relu(self.bn1(self.conv1(x)))
        out = self.relu(self.bn2(self.conv2(out)))
        out = self.bn3(self.conv3(out))
        return self.relu(self.add(out, identity))


class Backbone(nn.Module):
    def __init__(self, config: BackboneConfig):
        super().__init__()
        config.validate()
        self.config = config
        if config.variant == "tiny":
            cin = 3
            for i, c in enumerate(config.stage_channels, start=1):
                block = conv_bn_relu(cin, c, 3, stride=2)
                setattr(self, f"stage{i}", nn.Sequential(OrderedDict([("block0", block)])))
                cin = c
        else:
            self.stage1 = nn.Sequential(OrderedDict([("block0", conv_bn_relu(3, 64, 7, stride=2, padding=3))]))
            cin = 64
            for s, (n_blocks, planes) in enumerate(zip(RESNEXT101_LAYERS, [64, 128, 256, 512]), start=2):
                blocks = OrderedDict()
                if s == 2:
                    blocks["pool"] = nn.MaxPool2d(3, stride=2, padding=1)
                for j in range(n_blocks):
                    stride = 2 if (j == 0 and s > 2) else 1
                    blocks[f"block{j}"] = Bottleneck(cin, planes, stride, config.cardinality, config.base_width)
                    cin = planes * Bottleneck.expansion
                setattr(self, f"stage{s}", nn.Sequential(blocks))

    @property
    def stages(self):
        return [getattr(self, f"stage{i}") for i in range(1, 6)]

    def forward(self, images):
        return extract(self, images)


def build_backbone(config: BackboneConfig) -> Backbone:
    """Construct a backbone and load external weights if a path is configured."""
    net = Backbone(config)
    if config.pretrained_weights_path:
        path = Path(config.pretrained_weights_path)
        if not path.exists():
            raise ConfigurationError(f"pretrained weights not found: {path}")
        state = torch.load(path, map_location="cpu", weights_only=True)
        load_backbone_weights(net, state)
    return net


def load_backbone_weights(net: Backbone, state: dict):
    """Load a key->tensor map, accepting keys with or without a ``backbone.`` prefix."""
    state = {k[len("backbone."):] if k.startswith("backbone.") else k: v for k, v in state.items()}
    own = net.state_dict()
    for key, value in own.items():
        if key not in state:
            raise ConfigurationError(f"weights missing layer {key!r}")
        if tuple(state[key].shape) != tuple(value.shape):
            raise ConfigurationError(
                f"shape mismatch at layer {key!r}: expected {tuple(value.shape)}, got {tuple(state[key].shape)}")
    net.load_state_dict({k: state[k] for k in own})


def extract(backbone: Backbone, images: torch.Tensor) -> List[torch.Tensor]:
    """Run the five stages and return one feature map per stage."""
    if images.dim() != 4 or images.shape[1] != 3:
        raise InputError(f"expected images of shape (B, 3, H, W), got {tuple(images.shape)}")
    top = backbone.config.stage_strides[-1]
    h, w = images.shape[-2:]
    if h % top or w % top:
        raise InputError(f"image size {h}x{w} must be divisible by {top}")
    feats = []
    x = images
    for stage in backbone.stages:
        x = stage(x)
        feats.append(x)
    return feats
