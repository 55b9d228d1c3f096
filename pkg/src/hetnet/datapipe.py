"""Datasets on disk, edge ground truth, augmentation and synthetic mirror scenes.

On-disk layout (one directory per split)::

    <root>/<split>/image/<id>.{jpg,png,...}
    <root>/<split>/mask/<id>.png
    <root>/<split>/manifest.txt     # optional, one id per line

Arrays use HWC float32 in [0, 1] for images and HW uint8 in {0, 1} for masks.
"""

import logging
import shutil
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image
from scipy import ndimage

from .errors import ConfigurationError, InputError

log = logging.getLogger(__name__)

IMAGE_EXTS = {".jpg", ".jpeg", ".png", ".bmp", ".tif", ".tiff"}
IMAGE_DIR_NAMES = ("image", "images", "img", "imgs", "jpegimages")
MASK_DIR_NAMES = ("mask", "masks", "gt", "label", "labels", "annotations")


@dataclass
class SampleRecord:
    image: np.ndarray
    mask: np.ndarray
    edge: np.ndarray
    id: str
    transform: Optional[Dict] = None


@dataclass
class AugmentationConfig:
    scales: Sequence[float] = (0.75, 1.0, 1.25)
    base_size: int = 352
    crop_size: int = 256
    hflip_prob: float = 0.5
    seed: int = 0

    def scaled_sizes(self):
        return [int(round(self.base_size * s)) for s in self.scales]

    def validate(self):
        if not self.scales:
            raise ConfigurationError("augmentation needs at least one scale")
        if not 0 <= self.hflip_prob <= 1:
            raise ConfigurationError(f"hflip_prob must lie in [0, 1], got {self.hflip_prob}")
        smallest = min(self.scaled_sizes())
        if self.crop_size > smallest:
            raise ConfigurationError(f"crop_size {self.crop_size} exceeds smallest scaled size {smallest}")


# ------------------------------------------------------------------ edges

def derive_edge(mask, edge_radius=2, border="ignore"):
    """Morphological gradient (dilation minus erosion) with a square element.

    ``border="ignore"`` replicates the border so the image frame never
    produces edges; ``border="constant"`` treats outside pixels as
    background, so masks touching the frame get an edge band there.
    """
    mask = np.asarray(mask).astype(np.uint8)
    size = 2 * edge_radius + 1
    if border == "ignore":
        kw = dict(mode="nearest")
    elif border == "constant":
        kw = dict(mode="constant", cval=0)
    else:
        raise ConfigurationError(f"border must be 'ignore' or 'constant', got {border!r}")
    dil = ndimage.grey_dilation(mask, size=(size, size), **kw)
    ero = ndimage.grey_erosion(mask, size=(size, size), **kw)
    return (dil - ero).astype(np.uint8)


# ------------------------------------------------------------------ disk IO

def read_image(path):
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0


def read_mask(path):
    with Image.open(path) as im:
        m = np.asarray(im.convert("L"))
    if not np.isin(m, (0, 255)).all() and not np.isin(m, (0, 1)).all():
        log.warning("mask %s is not binary; thresholding at 128", path)
    if m.max() <= 1:
        return m.astype(np.uint8)
    return (m >= 128).astype(np.uint8)


def write_image(path, image):
    Image.fromarray(np.clip(np.round(image * 255), 0, 255).astype(np.uint8)).save(path)


def write_mask(path, mask):
    Image.fromarray((np.asarray(mask) > 0).astype(np.uint8) * 255).save(path)


def _by_stem(directory):
    files = {}
    for p in sorted(Path(directory).iterdir()):
        if p.is_file() and p.suffix.lower() in IMAGE_EXTS:
            files[p.stem] = p
    return files


def load_dataset(root, split="train", edge_radius=2) -> List[SampleRecord]:
    base = Path(root) / split
    img_dir, mask_dir = base / "image", base / "mask"
    for d in (img_dir, mask_dir):
        if not d.is_dir():
            raise InputError(f"missing directory {d}")
    images, masks = _by_stem(img_dir), _by_stem(mask_dir)
    orphans = sorted(set(images) ^ set(masks))
    if orphans:
        names = [str(images.get(o) or masks.get(o)) for o in orphans]
        raise InputError(f"unmatched files: {', '.join(names)}")
    records = []
    for key in sorted(images):
        image, mask = read_image(images[key]), read_mask(masks[key])
        if image.shape[:2] != mask.shape:
            raise InputError(f"{key}: image {image.shape[:2]} and mask {mask.shape} differ in size")
        records.append(SampleRecord(image, mask, derive_edge(mask, edge_radius), key))
    return records


def write_dataset(records, root, split):
    base = Path(root) / split
    (base / "image").mkdir(parents=True, exist_ok=True)
    (base / "mask").mkdir(parents=True, exist_ok=True)
    for r in records:
        write_image(base / "image" / f"{r.id}.png", r.image)
        write_mask(base / "mask" / f"{r.id}.png", r.mask)
    (base / "manifest.txt").write_text("".join(f"{r.id}\n" for r in records))
    return base


def _find_dir(parent, names):
    for p in sorted(Path(parent).iterdir()):
        if p.is_dir() and p.name.lower() in names:
            return p
    return None


def ingest(src, dst, split):
    """Copy an archive split into the standard ``image/`` + ``mask/`` layout.

    ``src`` holds an image directory and a mask directory under any of the
    common names; files are matched by stem regardless of extension. Masks
    are rewritten as PNG.
    """
    if not Path(src).is_dir():
        raise InputError(f"{src} is not a directory")
    img_dir, mask_dir = _find_dir(src, IMAGE_DIR_NAMES), _find_dir(src, MASK_DIR_NAMES)
    if img_dir is None or mask_dir is None:
        raise InputError(f"{src}: need an image directory {IMAGE_DIR_NAMES} and a mask directory {MASK_DIR_NAMES}")
    images, masks = _by_stem(img_dir), _by_stem(mask_dir)
    orphans = sorted(set(images) ^ set(masks))
    if orphans:
        raise InputError(f"unmatched files: {', '.join(orphans)}")
    out = Path(dst) / split
    (out / "image").mkdir(parents=True, exist_ok=True)
    (out / "mask").mkdir(parents=True, exist_ok=True)
    for key in sorted(images):
        shutil.copyfile(images[key], out / "image" / f"{key}{images[key].suffix.lower()}")
        write_mask(out / "mask" / f"{key}.png", read_mask(masks[key]))
    (out / "manifest.txt").write_text("".join(f"{k}\n" for k in sorted(images)))
    return len(images)


# ------------------------------------------------------------------ augmentation

def resize_array(arr, size, nearest=False):
    """Resize an HW or HWC array to ``(size, size)``."""
    t = torch.from_numpy(np.ascontiguousarray(arr, dtype=np.float32))
    t = t.permute(2, 0, 1)[None] if t.dim() == 3 else t[None, None]
    if nearest:
        t = F.interpolate(t, size=(size, size), mode="nearest")
    else:
        t = F.interpolate(t, size=(size, size), mode="bilinear", align_corners=False)
    t = t[0].permute(1, 2, 0) if arr.ndim == 3 else t[0, 0]
    return t.numpy()


def apply_transform(arr, transform, nearest=False):
    """Replay a logged ``augment`` transform on one array."""
    out = resize_array(arr, transform["size"], nearest)
    y, x, c = transform["y"], transform["x"], transform["crop"]
    out = out[y:y + c, x:x + c]
    if transform["flip"]:
        out = out[:, ::-1]
    out = np.ascontiguousarray(out)
    return out.astype(np.uint8) if nearest else out


def augment(record: SampleRecord, config: AugmentationConfig, rng: np.random.Generator) -> SampleRecord:
    config.validate()
    size = int(round(config.base_size * config.scales[rng.integers(len(config.scales))]))
    c = config.crop_size
    y = int(rng.integers(0, size - c + 1))
    x = int(rng.integers(0, size - c + 1))
    flip = bool(rng.random() < config.hflip_prob)
    t = {"size": size, "y": y, "x": x, "crop": c, "flip": flip}
    return SampleRecord(apply_transform(record.image, t), apply_transform(record.mask, t, nearest=True),
                        apply_transform(record.edge, t, nearest=True), record.id, t)


def resize_record(record: SampleRecord, size) -> SampleRecord:
    return replace(record, image=resize_array(record.image, size),
                   mask=resize_array(record.mask, size, nearest=True).astype(np.uint8),
                   edge=resize_array(record.edge, size, nearest=True).astype(np.uint8))


def to_batch(records):
    """Stack records into (B,3,H,W) images and (B,1,H,W) mask/edge tensors."""
    images = torch.from_numpy(np.stack([r.image for r in records])).permute(0, 3, 1, 2).contiguous()
    masks = torch.from_numpy(np.stack([r.mask for r in records]).astype(np.float32))[:, None]
    edges = torch.from_numpy(np.stack([r.edge for r in records]).astype(np.float32))[:, None]
    return images, masks, edges


def iterate_batches(records, batch_size, seed, epoch, aug: Optional[AugmentationConfig] = None,
                    drop_last=False):
    """Yield shuffled, augmented batches.

    The order and each sample's augmentation depend only on
    ``(seed, epoch, index)``, never on how the loop is scheduled.
    """
    order = np.random.default_rng([seed, epoch]).permutation(len(records))
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        if drop_last and len(idx) < batch_size:
            break
        batch = []
        for i in idx:
            r = records[i]
            if aug is not None:
                r = augment(r, aug, np.random.default_rng([seed, epoch, int(i)]))
            batch.append(r)
        yield to_batch(batch)


# ------------------------------------------------------------------ synthetic scenes

FRAME = 2
MIRROR_BRIGHTNESS = 0.8


def _draw_background(rng, size):
    img = np.empty((size, size, 3), np.float32)
    img[:] = rng.uniform(0.1, 0.7, 3)
    yy, xx = np.mgrid[:size, :size]
    for _ in range(rng.integers(4, 9)):
        color = rng.uniform(0.0, 0.85, 3)
        cy, cx = rng.uniform(0, size, 2)
        ry, rx = rng.uniform(size * 0.05, size * 0.3, 2)
        if rng.random() < 0.5:
            sel = (np.abs(yy - cy) <= ry) & (np.abs(xx - cx) <= rx)
        else:
            sel = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1
        img[sel] = color
    return img


def synthetic_scene(rng, size, max_tries=100):
    """One scene and its mirror mask."""
    img = _draw_background(rng, size)
    lo, hi = max(4, int(size * 0.25)), int(size * 0.55)
    for _ in range(max_tries):
        h, w = (int(v) for v in rng.integers(lo, hi + 1, 2))
        if h + 2 * FRAME > size or w + 2 * FRAME > size:
            continue
        y0 = int(rng.integers(FRAME, size - h - FRAME + 1))
        x0 = int(rng.integers(FRAME, size - w - FRAME + 1))
        sy = int(rng.integers(0, size - h + 1))
        sx = int(rng.integers(0, size - w + 1))
        if abs(sy - y0) + abs(sx - x0) < min(h, w) // 2:
            continue
        break
    else:
        raise InputError(f"could not place a mirror in a {size}x{size} scene after {max_tries} tries")
    reflection = img[sy:sy + h, sx:sx + w, :][:, ::-1] * MIRROR_BRIGHTNESS
    img[y0 - FRAME:y0 + h + FRAME, x0 - FRAME:x0 + w + FRAME] = rng.uniform(0.9, 1.0)
    img[y0:y0 + h, x0:x0 + w] = reflection
    img = np.clip(img + rng.normal(0, 0.02, img.shape), 0, 1).astype(np.float32)
    mask = np.zeros((size, size), np.uint8)
    mask[y0:y0 + h, x0:x0 + w] = 1
    return img, mask


def generate_synthetic(n, size=64, seed=0, edge_radius=2, prefix="synth") -> List[SampleRecord]:
    """``n`` scenes, each a function of ``(seed, index)`` only."""
    if size < 32:
        raise ConfigurationError(f"synthetic scenes need size >= 32, got {size}")
    if n < 1:
        raise ConfigurationError(f"n must be positive, got {n}")
    out = []
    for i in range(n):
        img, mask = synthetic_scene(np.random.default_rng([seed, i]), size)
        out.append(SampleRecord(img, mask, derive_edge(mask, edge_radius), f"{prefix}_{seed}_{i:05d}"))
    return out
