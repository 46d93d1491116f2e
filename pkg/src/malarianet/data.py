"""Dataset ingestion, deterministic splitting, decoding, and augmentation.

Expected on-disk layout (the Kaggle cell-images convention)::

    root/
      Parasitized/*.png
      Uninfected/*.png

Class indices are fixed alphabetically: parasitized = 0, uninfected = 1.
Only PNG is decoded; resizing is point-sampled bilinear with half-pixel
centers (source coordinate of target center d is ``(d + 0.5)*S/D - 0.5``,
edge-clamped), so results are reproducible to the formula rather than to
any particular imaging library.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

from .exceptions import DataError, DecodeError
from .tensor import Tensor

CLASS_NAMES = ("parasitized", "uninfected")
TARGET_HW = 224


@dataclass(frozen=True)
class ImageRecord:
    path: Path
    label: int  # 0 = parasitized, 1 = uninfected


@dataclass
class DatasetIndex:
    records: list[ImageRecord]
    class_names: list[str] = field(default_factory=lambda: list(CLASS_NAMES))

    def __len__(self):
        return len(self.records)

    def labels(self) -> np.ndarray:
        return np.array([r.label for r in self.records], dtype=np.int64)


@dataclass
class SplitSpec:
    seed: int = 0
    fractions: tuple[float, float, float] = (0.6, 0.2, 0.2)


@dataclass
class AugmentConfig:
    rotation_deg: float = 15.0
    zoom_range: tuple[float, float] = (0.9, 1.1)
    hflip_prob: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.rotation_deg < 0:
            raise DataError(f"rotation_deg must be >= 0, got {self.rotation_deg}")
        lo, hi = self.zoom_range
        if lo > hi:
            raise DataError(f"empty zoom interval {self.zoom_range}")
        if lo != hi and not (lo <= 1.0 <= hi):
            raise DataError(f"zoom interval {self.zoom_range} must contain 1")
        if not (0.0 <= self.hflip_prob <= 1.0):
            raise DataError(f"hflip_prob must be in [0, 1], got {self.hflip_prob}")


# ---------------------------------------------------------------------------
# index building and splitting
# ---------------------------------------------------------------------------


def scan_dataset(root) -> DatasetIndex:
    """Index every .png under the two class directories, sorted by path."""
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset root {root} is not a directory")
    dirs = {}
    for child in root.iterdir():
        if child.is_dir() and child.name.lower() in CLASS_NAMES:
            dirs[child.name.lower()] = child
    missing = [name for name in CLASS_NAMES if name not in dirs]
    if missing:
        raise DataError(f"missing class directories under {root}: {', '.join(missing)}")

    records = []
    for label, name in enumerate(CLASS_NAMES):
        for p in dirs[name].iterdir():
            if p.is_file() and p.suffix.lower() == ".png":
                records.append(ImageRecord(path=p, label=label))
    records.sort(key=lambda r: str(r.path))
    if not records:
        raise DataError(f"no .png images found under {root}")
    return DatasetIndex(records=records)


def split_sizes(n: int, fractions=(0.6, 0.2, 0.2)) -> tuple[int, int, int]:
    """floor(f0*N), floor(f1*N), remainder — guarded against float dust."""
    n_train = int(math.floor(fractions[0] * n + 1e-9))
    n_val = int(math.floor(fractions[1] * n + 1e-9))
    return n_train, n_val, n - n_train - n_val


def split_dataset(
    index: DatasetIndex, spec: SplitSpec
) -> tuple[DatasetIndex, DatasetIndex, DatasetIndex]:
    """Seeded shuffle of the sorted records, then contiguous take."""
    n = len(index)
    if n < 3:
        raise DataError(f"need at least 3 records to split, got {n}")
    n_train, n_val, _ = split_sizes(n, spec.fractions)
    perm = np.random.default_rng(spec.seed).permutation(n)
    shuffled = [index.records[i] for i in perm]
    make = lambda recs: DatasetIndex(records=recs, class_names=list(index.class_names))
    return (
        make(shuffled[:n_train]),
        make(shuffled[n_train : n_train + n_val]),
        make(shuffled[n_train + n_val :]),
    )


def write_split_manifest(path, splits: dict[str, DatasetIndex]) -> None:
    """CSV `path,label,split`, UTF-8, LF — enough to replay an experiment."""
    lines = ["path,label,split"]
    for split_name, idx in splits.items():
        for r in idx.records:
            lines.append(f"{r.path},{r.label},{split_name}")
    Path(path).write_bytes(("\n".join(lines) + "\n").encode("utf-8"))


# ---------------------------------------------------------------------------
# decoding and resizing
# ---------------------------------------------------------------------------


def _linear_taps(src: int, dst: int):
    pos = (np.arange(dst) + 0.5) * (src / dst) - 0.5
    lo = np.floor(pos).astype(np.int64)
    frac = (pos - lo).astype(np.float32)
    i0 = np.clip(lo, 0, src - 1)
    i1 = np.clip(lo + 1, 0, src - 1)
    return i0, i1, frac


def bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Separable point-sampled bilinear resize of a (C, H, W) float array."""
    c, h, w = img.shape
    if (h, w) == (out_h, out_w):
        return img
    r0, r1, rf = _linear_taps(h, out_h)
    c0, c1, cf = _linear_taps(w, out_w)
    rows = img[:, r0, :] * (1.0 - rf)[None, :, None] + img[:, r1, :] * rf[None, :, None]
    out = rows[:, :, c0] * (1.0 - cf)[None, None, :] + rows[:, :, c1] * cf[None, None, :]
    return out.astype(img.dtype, copy=False)


def preprocess_image(data: bytes) -> Tensor:
    """Decode 8-bit PNG bytes to a (3, 224, 224) tensor scaled to [0, 1]."""
    try:
        img = Image.open(io.BytesIO(data))
        img.load()
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise DecodeError(f"cannot decode image bytes: {exc}") from exc
    if img.format != "PNG":
        raise DecodeError(f"only PNG input is supported, got {img.format or 'unknown format'}")
    if img.mode == "P":
        img = img.convert("RGBA")
    if img.mode == "RGBA":
        img = img.convert("RGB")  # drop alpha
    elif img.mode == "LA":
        img = img.convert("L")
    if img.mode not in ("RGB", "L"):
        raise DecodeError(f"unsupported PNG mode {img.mode!r} (need 8-bit RGB/RGBA/grayscale)")

    arr = np.asarray(img, dtype=np.float32) / 255.0
    if arr.ndim == 2:  # grayscale replicates to 3 channels
        arr = np.repeat(arr[None, :, :], 3, axis=0)
    else:
        arr = arr.transpose(2, 0, 1)
    arr = bilinear_resize(np.ascontiguousarray(arr), TARGET_HW, TARGET_HW)
    return Tensor(np.clip(arr, 0.0, 1.0), dtype="f32")


# ---------------------------------------------------------------------------
# augmentation
# ---------------------------------------------------------------------------


def _rotate_bilinear(img: np.ndarray, angle_deg: float) -> np.ndarray:
    """Rotate (C, H, W) about its center; samples outside the frame are 0.

    Coordinate map (x = col, y = row): an output pixel at center offset
    (dx, dy) samples the input at (cos*dx + sin*dy, -sin*dx + cos*dy).
    """
    c, h, w = img.shape
    theta = math.radians(angle_deg)
    cos, sin = math.cos(theta), math.sin(theta)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    dx, dy = xx - cx, yy - cy
    src_x = cos * dx + sin * dy + cx
    src_y = -sin * dx + cos * dy + cy

    x0 = np.floor(src_x).astype(np.int64)
    y0 = np.floor(src_y).astype(np.int64)
    fx = (src_x - x0).astype(img.dtype)
    fy = (src_y - y0).astype(img.dtype)

    out = np.zeros_like(img)
    for oy, ox, weight in (
        (0, 0, (1 - fy) * (1 - fx)),
        (0, 1, (1 - fy) * fx),
        (1, 0, fy * (1 - fx)),
        (1, 1, fy * fx),
    ):
        ys, xs = y0 + oy, x0 + ox
        valid = (ys >= 0) & (ys < h) & (xs >= 0) & (xs < w)
        ysc = np.clip(ys, 0, h - 1)
        xsc = np.clip(xs, 0, w - 1)
        out += img[:, ysc, xsc] * (weight * valid)[None, :, :]
    return out


def _center_zoom(img: np.ndarray, scale: float) -> np.ndarray:
    """Crop (scale > 1) or zero-pad (scale < 1) about the center, then resize back."""
    c, h, w = img.shape
    side_h = int(round(h / scale))
    side_w = int(round(w / scale))
    if (side_h, side_w) == (h, w):
        return img
    if side_h <= h:
        top = (h - side_h) // 2
        left = (w - side_w) // 2
        region = img[:, top : top + side_h, left : left + side_w]
    else:
        top = (side_h - h) // 2
        left = (side_w - w) // 2
        region = np.zeros((c, side_h, side_w), dtype=img.dtype)
        region[:, top : top + h, left : left + w] = img
    return bilinear_resize(np.ascontiguousarray(region), h, w)


def augment(t: Tensor, cfg: AugmentConfig, rng: np.random.Generator) -> Tensor:
    """Random flip -> rotation -> center zoom; identity config is bit-exact."""
    angle = rng.uniform(-cfg.rotation_deg, cfg.rotation_deg) if cfg.rotation_deg > 0 else 0.0
    lo, hi = cfg.zoom_range
    scale = rng.uniform(lo, hi) if hi > lo else float(lo)
    flip = rng.random() < cfg.hflip_prob if cfg.hflip_prob > 0 else False

    arr = t.data
    if flip:
        arr = arr[:, :, ::-1]
    if angle != 0.0:
        arr = _rotate_bilinear(np.ascontiguousarray(arr), angle)
    if scale != 1.0:
        arr = _center_zoom(np.ascontiguousarray(arr), scale)
    if arr is t.data:
        return t
    return Tensor(np.clip(arr, 0.0, 1.0).astype(t.data.dtype, copy=False))


# ---------------------------------------------------------------------------
# batch streams
# ---------------------------------------------------------------------------


def _epoch_order(n: int, shuffle: bool, seed: int, epoch: int) -> np.ndarray:
    if not shuffle:
        return np.arange(n)
    rng = np.random.default_rng(np.random.SeedSequence([seed, epoch]))
    return rng.permutation(n)


def batches(
    index: DatasetIndex,
    batch_size: int = 32,
    shuffle: bool = False,
    seed: int = 0,
    augmenting: bool = False,
    augment_cfg: Optional[AugmentConfig] = None,
    epoch: int = 0,
) -> Iterator[tuple[Tensor, np.ndarray]]:
    """Stream (images, labels) batches covering each record exactly once.

    The shuffle order is reseeded per epoch from (seed, epoch); augmentation
    draws come from (cfg.seed, epoch) so the whole epoch is a deterministic
    function of its arguments.
    """
    if batch_size < 1:
        raise DataError(f"batch_size must be >= 1, got {batch_size}")
    n = len(index)
    if n == 0:
        raise DataError("cannot stream batches from an empty index")
    cfg = augment_cfg or AugmentConfig()
    aug_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, epoch, 17]))
    order = _epoch_order(n, shuffle, seed, epoch)

    for start in range(0, n, batch_size):
        chunk = order[start : start + batch_size]
        imgs, labels = [], []
        for i in chunk:
            rec = index.records[i]
            try:
                raw = rec.path.read_bytes()
            except OSError as exc:
                raise DataError(f"cannot read {rec.path}: {exc}") from exc
            img = preprocess_image(raw)
            if augmenting:
                img = augment(img, cfg, aug_rng)
            imgs.append(img.data)
            labels.append(rec.label)
        yield Tensor(np.stack(imgs)), np.asarray(labels, dtype=np.int64)


def array_batches(
    x: np.ndarray,
    y: np.ndarray,
    batch_size: int = 32,
    shuffle: bool = False,
    seed: int = 0,
    epoch: int = 0,
) -> Iterator[tuple[Tensor, np.ndarray]]:
    """Same batching contract as :func:`batches`, over in-memory arrays."""
    n = x.shape[0]
    if n == 0:
        raise DataError("cannot stream batches from empty arrays")
    order = _epoch_order(n, shuffle, seed, epoch)
    for start in range(0, n, batch_size):
        chunk = order[start : start + batch_size]
        yield Tensor(x[chunk]), np.asarray(y[chunk], dtype=np.int64)
