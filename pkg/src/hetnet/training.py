"""Training, evaluation, prediction and ablation runs.

A run directory contains::

    config.resolved        # JSON RunConfig, enough to rebuild the network
    checkpoints/init.pt    # only for epochs == 0
    checkpoints/final.pt
    checkpoints/best.pt    # best validation IoU
    logs/losses.csv        # one row per step
    logs/metrics.csv       # one row per epoch
"""

import csv
import json
import logging
import math
import random
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import List, Optional

import numpy as np
import torch
import torch.nn.functional as F

from . import datapipe
from .assembly import Network, NetworkConfig, ablation_grid, build_network, variant_config
from .datapipe import AugmentationConfig, SampleRecord
from .efficiency import benchmark_fps, count_macs, count_params
from .errors import ConfigurationError, InputError
from .losses import LossLogger, total_loss
from .metrics import MetricReport, evaluate_dataset

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "hetnet-checkpoint/1"


@dataclass
class OptimizerConfig:
    momentum: float = 0.9
    weight_decay: float = 5e-4
    max_lr: float = 1e-2
    schedule: str = "poly"
    power: float = 0.9
    warmup_frac: float = 0.05


@dataclass
class SyntheticConfig:
    n_train: int = 200
    n_val: int = 100
    size: int = 64
    seed: int = 0


@dataclass
class DataConfig:
    root: Optional[str] = None
    train_split: str = "train"
    val_split: Optional[str] = "test"
    synthetic: Optional[SyntheticConfig] = None
    edge_radius: int = 2


@dataclass
class RunConfig:
    network: NetworkConfig = field(default_factory=lambda: variant_config("HetNet", "full"))
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    data: DataConfig = field(default_factory=DataConfig)
    augmentation: Optional[AugmentationConfig] = field(default_factory=AugmentationConfig)
    batch_size: int = 12
    epochs: int = 150
    seed: int = 0
    input_size: int = 352
    output_dir: str = "runs/hetnet"
    checkpoint_interval: int = 0
    threshold: float = 0.5

    def validate(self):
        self.network.validate()
        o = self.optimizer
        if o.schedule not in ("poly", "cosine", "constant"):
            raise ConfigurationError(f"schedule must be poly, cosine or constant, got {o.schedule!r}")
        for name in ("momentum", "max_lr", "power"):
            if getattr(o, name) <= 0:
                raise ConfigurationError(f"optimizer.{name} must be positive")
        if o.weight_decay < 0 or not 0 <= o.warmup_frac < 1:
            raise ConfigurationError("weight_decay must be >= 0 and warmup_frac in [0, 1)")
        if self.batch_size <= 0 or self.epochs < 0 or self.input_size <= 0:
            raise ConfigurationError("batch_size and input_size must be positive, epochs non-negative")
        if self.data.root is None and self.data.synthetic is None:
            raise ConfigurationError("data needs a root directory or a synthetic section")
        if self.augmentation is not None:
            self.augmentation.validate()

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["network"] = NetworkConfig.from_dict(d.get("network", {}))
        d["optimizer"] = OptimizerConfig(**d.get("optimizer", {}))
        data = dict(d.get("data", {}))
        if data.get("synthetic") is not None:
            data["synthetic"] = SyntheticConfig(**data["synthetic"])
        d["data"] = DataConfig(**data)
        if d.get("augmentation") is not None:
            aug = dict(d["augmentation"])
            aug["scales"] = tuple(aug.get("scales", AugmentationConfig.scales))
            d["augmentation"] = AugmentationConfig(**aug)
        return cls(**d)


def desk_config(variant="HetNet", output_dir="runs/desk", epochs=20, seed=0, **overrides) -> RunConfig:
    """CPU-scale run: tiny backbone on 64x64 synthetic scenes."""
    cfg = RunConfig(
        network=variant_config(variant, "tiny"),
        data=DataConfig(synthetic=SyntheticConfig()),
        augmentation=AugmentationConfig(scales=(1.0, 1.25), base_size=64, crop_size=64, seed=seed),
        epochs=epochs, seed=seed, input_size=64, output_dir=output_dir,
    )
    for k, v in overrides.items():
        setattr(cfg, k, v)
    return cfg


# ------------------------------------------------------------------ config plumbing

def set_path(d, dotted, value):
    """Set ``a.b.c`` inside nested dicts, parsing ``value`` as JSON when possible."""
    if isinstance(value, str):
        try:
            value = json.loads(value)
        except json.JSONDecodeError:
            pass
    keys = dotted.split(".")
    for k in keys[:-1]:
        if not isinstance(d.get(k), dict):
            raise ConfigurationError(f"{dotted}: {k!r} is not a config section")
        d = d[k]
    if keys[-1] not in d:
        raise ConfigurationError(f"unknown config key {dotted!r}")
    d[keys[-1]] = value


def config_diff(a, b, prefix=""):
    out = []
    for k in sorted(set(a) | set(b)):
        va, vb = a.get(k), b.get(k)
        if isinstance(va, dict) and isinstance(vb, dict):
            out += config_diff(va, vb, f"{prefix}{k}.")
        elif va != vb:
            out.append(f"{prefix}{k}: {va!r} != {vb!r}")
    return out


def seed_everything(seed):
    random.seed(seed)
    np.random.seed(seed)
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True, warn_only=True)


def lr_at(step, total, opt: OptimizerConfig):
    if opt.schedule == "constant" or total <= 0:
        return opt.max_lr
    warm = int(opt.warmup_frac * total)
    if step < warm:
        return opt.max_lr * (step + 1) / warm
    t = (step - warm) / max(1, total - warm)
    if opt.schedule == "poly":
        return opt.max_lr * (1 - t) ** opt.power
    return opt.max_lr * 0.5 * (1 + math.cos(math.pi * t))


# ------------------------------------------------------------------ data

def load_splits(cfg: RunConfig):
    d = cfg.data
    if d.synthetic is not None:
        s = d.synthetic
        train = datapipe.generate_synthetic(s.n_train, s.size, s.seed, d.edge_radius, prefix="train")
        # held-out scenes come from a disjoint seed stream
        val = datapipe.generate_synthetic(s.n_val, s.size, s.seed + 10_000, d.edge_radius, prefix="val") \
            if s.n_val else []
        return train, val
    train = datapipe.load_dataset(d.root, d.train_split, d.edge_radius)
    val = []
    if d.val_split and (Path(d.root) / d.val_split).is_dir():
        val = datapipe.load_dataset(d.root, d.val_split, d.edge_radius)
    return train, val


def _fit_size(records, size):
    return [r if r.image.shape[:2] == (size, size) else datapipe.resize_record(r, size) for r in records]


# ------------------------------------------------------------------ checkpoints

def save_checkpoint(path, net: Network, run_cfg: RunConfig, epoch, optimizer=None, metrics=None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save({
        "format": CHECKPOINT_FORMAT,
        "run_config": run_cfg.to_dict(),
        "state_dict": net.state_dict(),
        "epoch": epoch,
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
        "metrics": metrics,
    }, path)
    return path


def load_checkpoint(path, map_location="cpu"):
    """Rebuild the network stored in a checkpoint; returns ``(net, run_config, raw)``."""
    raw = torch.load(path, map_location=map_location, weights_only=False)
    if raw.get("format") != CHECKPOINT_FORMAT:
        raise ConfigurationError(f"{path} is not a {CHECKPOINT_FORMAT} file")
    cfg = RunConfig.from_dict(raw["run_config"])
    net = build_network(cfg.network)
    own = net.state_dict()
    for k, v in raw["state_dict"].items():
        if k not in own:
            raise ConfigurationError(f"checkpoint key {k!r} has no matching layer")
        if own[k].shape != v.shape:
            raise ConfigurationError(f"shape mismatch at {k!r}: {tuple(own[k].shape)} vs {tuple(v.shape)}")
    net.load_state_dict(raw["state_dict"])
    return net.eval(), cfg, raw


# ------------------------------------------------------------------ inference

def inference_size(size):
    adjusted = max(32, int(round(size / 32)) * 32)
    if adjusted != size:
        log.warning("inference size %d is not divisible by 32; using %d", size, adjusted)
    return adjusted


@torch.no_grad()
def predict_probabilities(net: Network, images: List[np.ndarray], input_size, batch_size=16):
    """Sigmoid maps at each image's original resolution."""
    net.eval()
    size = inference_size(input_size)
    out = []
    for start in range(0, len(images), batch_size):
        chunk = images[start:start + batch_size]
        x = torch.stack([torch.from_numpy(np.ascontiguousarray(im)).permute(2, 0, 1) for im in
                         (datapipe.resize_array(im, size) if im.shape[:2] != (size, size) else im for im in chunk)])
        prob = torch.sigmoid(net(x).main_output)
        for im, p in zip(chunk, prob):
            h, w = im.shape[:2]
            if (h, w) != (size, size):
                p = F.interpolate(p[None], size=(h, w), mode="bilinear", align_corners=False)[0]
            out.append(p[0].numpy().astype(np.float64))
    return out


def evaluate_records(net, records: List[SampleRecord], input_size, threshold=0.5, with_max=False) -> MetricReport:
    probs = predict_probabilities(net, [r.image for r in records], input_size)
    return evaluate_dataset(zip(probs, (r.mask for r in records)), threshold, with_max)


def evaluate(checkpoint, dataset_root=None, split="test", records=None, input_size=None,
             threshold=None, with_max=False) -> MetricReport:
    net, cfg, _ = load_checkpoint(checkpoint)
    if records is None:
        if dataset_root is None:
            _, records = load_splits(cfg)
        else:
            records = datapipe.load_dataset(dataset_root, split, cfg.data.edge_radius)
    if not records:
        raise InputError("no records to evaluate")
    return evaluate_records(net, records, input_size or cfg.input_size,
                            cfg.threshold if threshold is None else threshold, with_max)


def predict(checkpoint, source, out_dir, input_size=None):
    """Write ``<stem>_prob.png`` and ``<stem>_mask.png`` per readable image."""
    net, cfg, _ = load_checkpoint(checkpoint)
    src = Path(source)
    paths = sorted(p for p in src.iterdir() if p.suffix.lower() in datapipe.IMAGE_EXTS) if src.is_dir() else [src]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for p in paths:
        try:
            image = datapipe.read_image(p)
        except Exception as exc:  # PIL raises a zoo of types on bad files
            log.warning("skipping unreadable image %s: %s", p, exc)
            continue
        prob = predict_probabilities(net, [image], input_size or cfg.input_size)[0]
        prob8 = np.round(prob * 255).astype(np.uint8)
        from PIL import Image
        Image.fromarray(prob8).save(out / f"{p.stem}_prob.png")
        datapipe.write_mask(out / f"{p.stem}_mask.png", prob >= 0.5)
        written.append(p.stem)
    if paths and not written:
        raise RuntimeError(f"no readable images under {source}")
    return written


# ------------------------------------------------------------------ training

def write_manifest(out: Path, cfg: RunConfig):
    (out / "config.resolved").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")


def train(cfg: RunConfig, resume: Optional[str] = None) -> Path:
    """Train per ``cfg``; returns the path of the final checkpoint."""
    cfg.validate()
    seed_everything(cfg.seed)
    out = Path(cfg.output_dir)
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    (out / "logs").mkdir(parents=True, exist_ok=True)
    write_manifest(out, cfg)

    net = build_network(cfg.network)
    if cfg.epochs == 0:
        return save_checkpoint(out / "checkpoints" / "init.pt", net, cfg, 0)

    train_recs, val_recs = load_splits(cfg)
    if cfg.augmentation is None:
        train_recs = _fit_size(train_recs, cfg.input_size)
    opt_cfg = cfg.optimizer
    optimizer = torch.optim.SGD(net.parameters(), lr=opt_cfg.max_lr, momentum=opt_cfg.momentum,
                                weight_decay=opt_cfg.weight_decay)
    start_epoch = 0
    if resume is not None:
        raw = torch.load(resume, map_location="cpu", weights_only=False)
        diff = config_diff(raw["run_config"]["network"], cfg.network.to_dict())
        if diff:
            raise ConfigurationError("cannot resume from incompatible checkpoint:\n  " + "\n  ".join(diff))
        net.load_state_dict(raw["state_dict"])
        if raw.get("optimizer"):
            optimizer.load_state_dict(raw["optimizer"])
        start_epoch = raw["epoch"]

    steps_per_epoch = math.ceil(len(train_recs) / cfg.batch_size)
    total_steps = steps_per_epoch * cfg.epochs
    loss_log = LossLogger(out / "logs" / "losses.csv")
    metrics_fh = open(out / "logs" / "metrics.csv", "w", newline="")
    metrics_csv = csv.writer(metrics_fh)
    metrics_csv.writerow(["epoch", "train_loss", "lr", "mae", "iou", "f_beta"])
    best_iou, step = -1.0, start_epoch * steps_per_epoch
    try:
        for epoch in range(start_epoch, cfg.epochs):
            net.train()
            epoch_loss = []
            for images, masks, edges in datapipe.iterate_batches(train_recs, cfg.batch_size, cfg.seed, epoch,
                                                                  cfg.augmentation):
                if images.shape[0] < 2:
                    continue  # batch statistics are undefined for a single sample at 1x1 bins
                lr = lr_at(step, total_steps, opt_cfg)
                for g in optimizer.param_groups:
                    g["lr"] = lr
                terms = total_loss(net(images), masks, edges, cfg.network.deep_supervision)
                optimizer.zero_grad()
                terms.total.backward()
                optimizer.step()
                loss_log.log(step, terms)
                epoch_loss.append(terms.total.item())
                step += 1
            report = evaluate_records(net, val_recs, cfg.input_size, cfg.threshold) if val_recs else None
            row = [epoch + 1, float(np.mean(epoch_loss)), lr]
            row += [report.mae, report.iou, report.f_beta] if report else ["", "", ""]
            metrics_csv.writerow(row)
            metrics_fh.flush()
            log.info("epoch %d loss %.4f%s", epoch + 1, row[1], f" val IoU {report.iou:.4f}" if report else "")
            if report and report.iou > best_iou:
                best_iou = report.iou
                save_checkpoint(out / "checkpoints" / "best.pt", net, cfg, epoch + 1, metrics=report.as_dict())
            if cfg.checkpoint_interval and (epoch + 1) % cfg.checkpoint_interval == 0:
                save_checkpoint(out / "checkpoints" / f"epoch{epoch + 1:04d}.pt", net, cfg, epoch + 1, optimizer)
    finally:
        loss_log.close()
        metrics_fh.close()
    return save_checkpoint(out / "checkpoints" / "final.pt", net, cfg, cfg.epochs, optimizer)


def read_loss_log(run_dir):
    with open(Path(run_dir) / "logs" / "losses.csv") as fh:
        return [float(r["total"]) for r in csv.DictReader(fh)]


# ------------------------------------------------------------------ ablation

ABLATION_COLUMNS = ["label", "MAE", "IoU", "F_beta", "Para.", "FLOPs", "FPS"]


def ablate(grid_name, base: RunConfig, fps_iters=20):
    """Train and evaluate each row of a grid under the base run's budget and seed."""
    rows = []
    base_dir = Path(base.output_dir)
    for label, net_cfg in ablation_grid(grid_name, base.network.backbone.variant,
                                        fusion_width=base.network.fusion_width):
        cfg = RunConfig.from_dict(base.to_dict())
        cfg.network = net_cfg
        cfg.output_dir = str(base_dir / grid_name / label.replace("*", "x").replace("+", "_"))
        try:
            ckpt = train(cfg)
        except Exception as exc:
            raise RuntimeError(f"ablation row {label!r} failed: {exc}") from exc
        net, _, _ = load_checkpoint(ckpt)
        _, val = load_splits(cfg)
        report = evaluate_records(net, val, cfg.input_size, cfg.threshold)
        size = inference_size(cfg.input_size)
        rows.append({
            "label": label, "MAE": report.mae, "IoU": report.iou, "F_beta": report.f_beta,
            "Para.": count_params(net), "FLOPs": count_macs(net, (size, size)),
            "FPS": benchmark_fps(net, (size, size), warmup_iters=2, timed_iters=fps_iters),
        })
    base_dir.mkdir(parents=True, exist_ok=True)
    with open(base_dir / f"ablation_{grid_name}.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, ABLATION_COLUMNS)
        w.writeheader()
        w.writerows(rows)
    return rows


def format_results(rows):
    head = f"{'row':<10} {'MAE':>7} {'IoU':>7} {'F_beta':>7} {'Para.(M)':>9} {'FLOPs(G)':>9} {'FPS':>8}"
    lines = [head]
    for r in rows:
        lines.append(f"{r['label']:<10} {r['MAE']:>7.4f} {r['IoU']:>7.4f} {r['F_beta']:>7.4f} "
                     f"{r['Para.']:>9.4f} {r['FLOPs']:>9.4f} {r['FPS']:>8.1f}")
    return "\n".join(lines)
