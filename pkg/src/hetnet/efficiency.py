"""Parameter counts, analytic MAC counts and wall-clock throughput.

MACs are obtained by walking a layer table recorded with forward hooks on
every leaf module. The walk runs on the ``meta`` device by default, so a
full-scale network is accounted without allocating or computing anything.

Counting convention (one unit = one multiply-accumulate):

* conv: ``H_out * W_out * C_out * (C_in / groups) * k_h * k_w``
* linear: ``in_features * out_features`` per row
* batch norm, activations, elementwise sum/product: one per output element
* pooling: one per covered input element
* rotation, concatenation, identity resizes: free
"""

import copy
import logging
import math
import os
import platform
import tempfile
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import List, Optional, Tuple

import torch
from filelock import FileLock
from torch import nn

from .errors import ConfigurationError
from .layers import Add, Concat, Mul, Resize, Rot90
from .mic import AxisPool
from .assembly import BinPool

log = logging.getLogger(__name__)

_ACTIVATIONS = (nn.ReLU, nn.SiLU, nn.Sigmoid)
_FREE = (Rot90, Concat, nn.Identity, nn.Dropout)


@dataclass
class LayerRow:
    name: str
    kind: str
    output_shape: Tuple[int, ...]
    params: int
    macs: int


@dataclass
class EfficiencyReport:
    params_millions: float
    flops_gmac: float
    fps: float
    input_size: Tuple[int, int]
    warmup_iters: int
    timed_iters: int
    device_descriptor: str

    def as_row(self):
        return {"Para.": round(self.params_millions, 2), "FLOPs": round(self.flops_gmac, 2),
                "FPS": round(self.fps, 2), "input": "x".join(map(str, self.input_size))}


def _numel(shape):
    return int(math.prod(shape))


def layer_macs(module, inputs, output):
    """MACs of one leaf call; raises for module types without a rule."""
    out_shape = tuple(output.shape)
    if isinstance(module, nn.Conv2d):
        cin = module.in_channels // module.groups
        kh, kw = module.kernel_size
        return _numel(out_shape) * cin * kh * kw
    if isinstance(module, nn.Linear):
        return _numel(out_shape) * module.in_features
    if isinstance(module, (nn.BatchNorm2d, Add, Mul) + _ACTIVATIONS):
        n = _numel(out_shape)
        return n * (len(inputs) - 1) if isinstance(module, Mul) else n
    if isinstance(module, (nn.MaxPool2d, nn.AvgPool2d, nn.AdaptiveAvgPool2d, BinPool, AxisPool)):
        return _numel(inputs[0].shape)
    if isinstance(module, Resize):
        # identity resizes are skipped inside Resize.forward; bilinear costs 4 taps per output
        same = tuple(inputs[0].shape[-2:]) == out_shape[-2:]
        return 0 if same else 4 * _numel(out_shape)
    if isinstance(module, _FREE):
        return 0
    raise ConfigurationError(f"no MAC rule for layer type {type(module).__name__}")


def describe(net: nn.Module, input_size=(352, 352), batch=1, device="meta") -> List[LayerRow]:
    """Layer table (name, kind, output shape, params, MACs) for one eval forward.

    The network is evaluated on a deep copy moved to ``device``; the
    caller's module is left untouched.
    """
    h, w = input_size
    model = copy.deepcopy(net).to(device).eval()
    rows: List[LayerRow] = []
    hooks = []

    def hook(name):
        def fn(module, inputs, output):
            if not isinstance(output, torch.Tensor):
                raise ConfigurationError(f"layer {name} returned a non-tensor; cannot account it")
            params = sum(p.numel() for p in module.parameters(recurse=False))
            rows.append(LayerRow(name, type(module).__name__, tuple(output.shape), params,
                                 layer_macs(module, inputs, output)))
        return fn

    for name, m in model.named_modules():
        if len(list(m.children())) == 0:
            hooks.append(m.register_forward_hook(hook(name)))
    try:
        with torch.no_grad():
            model(torch.zeros(batch, 3, h, w, device=device))
    finally:
        for hd in hooks:
            hd.remove()
    return rows


def format_table(rows: List[LayerRow]) -> str:
    width = max(len(r.name) for r in rows)
    lines = [f"{'layer':<{width}}  {'type':<12} {'output':<22} {'params':>10} {'MACs':>14}"]
    for r in rows:
        lines.append(f"{r.name:<{width}}  {r.kind:<12} {str(r.output_shape):<22} {r.params:>10} {r.macs:>14}")
    lines.append(f"{'total':<{width}}  {'':<12} {'':<22} {sum(r.params for r in rows):>10} "
                 f"{sum(r.macs for r in rows):>14}")
    return "\n".join(lines)


def count_params(net: nn.Module) -> float:
    """Trainable parameters in millions."""
    return sum(p.numel() for p in net.parameters() if p.requires_grad) / 1e6


def count_macs(net: nn.Module, input_size=(352, 352), device="meta") -> float:
    """Analytic multiply-accumulates for one image, in GMac."""
    h, w = input_size
    if h % 32 or w % 32:
        raise ConfigurationError(f"input size {h}x{w} must be divisible by 32")
    return sum(r.macs for r in describe(net, input_size, device=device)) / 1e9


def macs_by_module(rows: List[LayerRow], depth=1):
    """Subtotals keyed by the first ``depth`` components of each layer name."""
    totals = {}
    for r in rows:
        key = ".".join(r.name.split(".")[:depth])
        totals[key] = totals.get(key, 0) + r.macs
    return totals


def _sync(device):
    if device.type == "cuda":
        torch.cuda.synchronize(device)


def benchmark_fps(net: nn.Module, input_size=(352, 352), warmup_iters=20, timed_iters=100,
                  lock_path: Optional[str] = None, seed=0) -> float:
    """Frames per second at batch 1 in eval mode.

    An advisory lock file serializes concurrent benchmarks on one machine.
    """
    if timed_iters < 1:
        raise ConfigurationError("timed_iters must be at least 1")
    lock_path = lock_path or os.path.join(tempfile.gettempdir(), "hetnet-bench.lock")
    device = next(net.parameters()).device
    gen = torch.Generator().manual_seed(seed)
    x = torch.rand(1, 3, *input_size, generator=gen).to(device)
    was_training = net.training
    net.eval()
    try:
        with FileLock(lock_path), torch.no_grad():
            for _ in range(warmup_iters):
                net(x)
            _sync(device)
            t0 = time.perf_counter()
            for _ in range(timed_iters):
                net(x)
            _sync(device)
            elapsed = time.perf_counter() - t0
    finally:
        net.train(was_training)
    resolution = time.get_clock_info("perf_counter").resolution
    if elapsed / timed_iters <= resolution:
        log.warning("timer resolution %.2e s is coarser than one iteration; increase timed_iters", resolution)
        elapsed = max(elapsed, resolution)
    return timed_iters / elapsed


def efficiency_report(net: nn.Module, input_size=(352, 352), warmup_iters=20, timed_iters=100,
                      measure_fps=True) -> EfficiencyReport:
    fps = benchmark_fps(net, input_size, warmup_iters, timed_iters) if measure_fps else float("nan")
    device = next(net.parameters()).device
    desc = f"{device.type}:{platform.processor() or platform.machine()} threads={torch.get_num_threads()}"
    return EfficiencyReport(count_params(net), count_macs(net, input_size), fps, tuple(input_size),
                            warmup_iters, timed_iters, desc)
