"""Image ingestion, augmentation, the stratified split and batch iteration.

The dataset on disk is a root directory holding Parasitized/ and Uninfected/
subdirectories of PNG cell images. Decoded images arrive in RGB channel
order, are bilinear-resized to 130x130 and scaled into [0, 1] as float32.

Augmentation applies one affine transform (rotation, isotropic zoom and
shifts, composed about the image centre) sampled fresh per call, with
bilinear sampling and nearest-edge fill, followed by independent horizontal
and vertical coin-flip mirrors. Identical seeds reproduce identical batches.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import IngestionError, UsageError
from .metrics import CLASS_NAMES

TARGET_SIZE = (130, 130)

# directory name on disk -> class index
DIR_LABELS = {"Parasitized": 0, "Uninfected": 1}
LABEL_DIRS = {v: k for k, v in DIR_LABELS.items()}


@dataclass
class ImageRecord:
    """One decoded, preprocessed image."""

    path: str
    label: int
    pixels: np.ndarray  # (130, 130, 3) float32 in [0, 1]


@dataclass
class AugmentConfig:
    """Augmentation magnitudes; all zero with flips off is the identity."""

    rotation_deg_max: float = 10.0
    zoom_frac_max: float = 0.10
    shift_frac_max: float = 0.10
    hflip: bool = True
    vflip: bool = True
    seed: int = 0

    def is_identity(self) -> bool:
        return (self.rotation_deg_max == 0 and self.zoom_frac_max == 0
                and self.shift_frac_max == 0 and not self.hflip and not self.vflip)


@dataclass
class DatasetSplit:
    """Labelled source paths per partition, plus the seed that produced them."""

    train: list[tuple[str, int]]
    val: list[tuple[str, int]]
    seed: int
    val_frac: float = 0.2


def _bilinear_gather(img: np.ndarray, sy: np.ndarray, sx: np.ndarray) -> np.ndarray:
    """Sample img at fractional (sy, sx) grids with edge clamping."""
    h, w = img.shape[:2]
    sy = np.clip(sy, 0, h - 1)
    sx = np.clip(sx, 0, w - 1)
    y0 = np.floor(sy).astype(np.intp)
    x0 = np.floor(sx).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (sy - y0).astype(img.dtype)[..., None]
    fx = (sx - x0).astype(img.dtype)[..., None]
    top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
    bottom = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
    return top * (1 - fy) + bottom * fy


def bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize with half-pixel centre alignment and edge clamping."""
    img = np.asarray(img, dtype=np.float32)
    h, w = img.shape[:2]
    if (h, w) == (out_h, out_w):
        return img.copy()
    ys = (np.arange(out_h, dtype=np.float32) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w, dtype=np.float32) + 0.5) * (w / out_w) - 0.5
    sy, sx = np.meshgrid(ys, xs, indexing="ij")
    return _bilinear_gather(img, sy, sx)


def affine_transform(pixels: np.ndarray, rotation_deg: float, zoom: float,
                     shift_x: float, shift_y: float) -> np.ndarray:
    """Rotate, zoom and shift about the image centre in one resampling pass.

    Output pixels are pulled through the inverse map and bilinear-sampled;
    coordinates falling outside the frame clamp to the nearest edge pixel.
    """
    h, w = pixels.shape[:2]
    cy = (h - 1) / 2.0
    cx = (w - 1) / 2.0
    theta = math.radians(rotation_deg)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    inv_zoom = 1.0 / zoom
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64),
                         np.arange(w, dtype=np.float64), indexing="ij")
    u = xx - cx - shift_x
    v = yy - cy - shift_y
    sx = (cos_t * u + sin_t * v) * inv_zoom + cx
    sy = (-sin_t * u + cos_t * v) * inv_zoom + cy
    out = _bilinear_gather(pixels.astype(np.float32), sy, sx)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def infer_label(path) -> int | None:
    return DIR_LABELS.get(Path(path).parent.name)


def load_and_preprocess(path, label: int | None = None) -> ImageRecord:
    """Decode a PNG, resize to 130x130 bilinear, scale into [0, 1].

    The label comes from the parent directory name unless given explicitly.
    """
    path = Path(path)
    if label is None:
        label = infer_label(path)
        if label is None:
            raise IngestionError(
                f"cannot infer class of {path}: parent directory is not one of "
                f"{sorted(DIR_LABELS)}"
            )
    try:
        with Image.open(path) as im:
            raw = np.asarray(im.convert("RGB"), dtype=np.float32)
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise IngestionError(f"cannot decode image {path}: {exc}") from exc
    resized = bilinear_resize(raw, *TARGET_SIZE)
    return ImageRecord(str(path), label, resized / np.float32(255.0))


def augment(record: ImageRecord, config: AugmentConfig, rng) -> ImageRecord:
    """Randomly transformed copy of a record; draws come only from rng."""
    if config.is_identity():
        return ImageRecord(record.path, record.label, record.pixels.copy())
    h, w = record.pixels.shape[:2]
    theta = rng.uniform(-config.rotation_deg_max, config.rotation_deg_max)
    zoom = rng.uniform(1.0 - config.zoom_frac_max, 1.0 + config.zoom_frac_max)
    shift_x = rng.uniform(-config.shift_frac_max * w, config.shift_frac_max * w)
    shift_y = rng.uniform(-config.shift_frac_max * h, config.shift_frac_max * h)
    if theta == 0.0 and zoom == 1.0 and shift_x == 0.0 and shift_y == 0.0:
        out = record.pixels.copy()
    else:
        out = affine_transform(record.pixels, theta, zoom, shift_x, shift_y)
    if config.hflip and rng.random() < 0.5:
        out = out[:, ::-1]
    if config.vflip and rng.random() < 0.5:
        out = out[::-1]
    return ImageRecord(record.path, record.label, np.ascontiguousarray(out))


def scan_dataset(root) -> list[tuple[str, int]]:
    """All labelled image paths under root, ordered by class then filename."""
    root = Path(root)
    if not root.is_dir():
        raise IngestionError(f"dataset root {root} is not a directory")
    pairs: list[tuple[str, int]] = []
    for dirname, label in sorted(DIR_LABELS.items(), key=lambda kv: kv[1]):
        class_dir = root / dirname
        if not class_dir.is_dir():
            raise IngestionError(f"missing class directory {class_dir}")
        for p in sorted(class_dir.iterdir()):
            if p.is_file() and p.suffix.lower() == ".png":
                pairs.append((str(p), label))
    return pairs


def stratified_split(pairs, val_frac: float = 0.2, seed: int = 0) -> DatasetSplit:
    """Seeded per-class shuffle; the first ceil(val_frac * n) of each class
    become validation, the rest training."""
    if not 0.0 <= val_frac < 1.0:
        raise UsageError(f"val_frac must lie in [0, 1), got {val_frac}")
    by_class: dict[int, list[tuple[str, int]]] = {0: [], 1: []}
    for path, label in pairs:
        if label not in by_class:
            raise UsageError(f"label {label} is not a known class")
        by_class[label].append((str(path), label))
    rng = np.random.default_rng(seed)
    train: list[tuple[str, int]] = []
    val: list[tuple[str, int]] = []
    for label in sorted(by_class):
        items = by_class[label]
        if not items:
            raise UsageError(f"class {CLASS_NAMES[label]!r} has zero items")
        order = rng.permutation(len(items))
        n_val = math.ceil(val_frac * len(items))
        val.extend(items[i] for i in order[:n_val])
        train.extend(items[i] for i in order[n_val:])
    return DatasetSplit(train, val, seed, val_frac)


def stratified_subset(pairs, per_class: int, seed: int = 0) -> list[tuple[str, int]]:
    """Seeded sample of per_class items from each class."""
    if per_class < 1:
        raise UsageError(f"per_class must be >= 1, got {per_class}")
    rng = np.random.default_rng(seed)
    out: list[tuple[str, int]] = []
    for label in (0, 1):
        items = [(str(p), l) for p, l in pairs if l == label]
        if len(items) < per_class:
            raise UsageError(
                f"class {CLASS_NAMES[label]!r} has {len(items)} items, need {per_class}"
            )
        order = rng.permutation(len(items))
        out.extend(items[i] for i in order[:per_class])
    return out


class RecordStore:
    """In-memory cache of decoded and preprocessed images, keyed by path."""

    def __init__(self):
        self._pixels: dict[str, np.ndarray] = {}

    def get(self, path, label: int) -> ImageRecord:
        key = str(path)
        pixels = self._pixels.get(key)
        if pixels is None:
            pixels = load_and_preprocess(path, label).pixels
            self._pixels[key] = pixels
        return ImageRecord(key, label, pixels)

    def __len__(self) -> int:
        return len(self._pixels)


def _resolve(item, store: RecordStore) -> ImageRecord:
    if isinstance(item, ImageRecord):
        return item
    path, label = item
    return store.get(path, label)


def batch_iter(partition, batch_size: int, seed: int, epoch: int = 0,
               augment_config: AugmentConfig | None = None,
               store: RecordStore | None = None, shuffle: bool = True):
    """Deterministic batches of (pixels, labels) over one epoch.

    The epoch order is a seeded shuffle of the partition, a pure function of
    (seed, epoch). Items are ImageRecords or (path, label) pairs; pairs load
    through the store. Each image gets its own augmentation substream keyed
    by (augmentation seed, epoch, position), so batch composition never
    perturbs the draws of other images. The final batch may be short.
    """
    if batch_size < 1:
        raise UsageError(f"batch_size must be >= 1, got {batch_size}")
    items = list(partition)
    if not items:
        raise UsageError("empty partition")
    store = store if store is not None else RecordStore()
    if shuffle:
        order = np.random.default_rng((seed, epoch)).permutation(len(items))
    else:
        order = np.arange(len(items))
    for start in range(0, len(items), batch_size):
        chunk = order[start:start + batch_size]
        pixels = []
        labels = []
        for offset, idx in enumerate(chunk):
            record = _resolve(items[idx], store)
            if augment_config is not None:
                rng = np.random.default_rng(
                    (augment_config.seed, epoch, start + offset))
                record = augment(record, augment_config, rng)
            pixels.append(record.pixels)
            labels.append(record.label)
        yield np.stack(pixels), np.asarray(labels, dtype=np.int64)


def write_manifest(split: DatasetSplit, root, path) -> None:
    """Persist a split as JSON holding root-relative paths per partition."""
    root = Path(root)

    def rel(pairs):
        out = []
        for p, _ in pairs:
            try:
                out.append(str(Path(p).relative_to(root)))
            except ValueError:
                out.append(str(p))
        return out

    doc = {
        "seed": split.seed,
        "val_frac": split.val_frac,
        "root": str(root),
        "train": rel(split.train),
        "val": rel(split.val),
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def read_manifest(path, root=None) -> tuple[Path, DatasetSplit]:
    """Load a split manifest; labels come from each path's class directory."""
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise IngestionError(f"cannot read manifest {path}: {exc}") from exc
    if not isinstance(doc, dict) or "train" not in doc or "val" not in doc:
        raise IngestionError(f"manifest {path} is missing train/val lists")
    root = Path(root) if root is not None else Path(doc.get("root", "."))

    def resolve(relpaths):
        pairs = []
        for rp in relpaths:
            label = infer_label(rp)
            if label is None:
                raise IngestionError(
                    f"manifest entry {rp!r} is not under a known class directory")
            pairs.append((str(root / rp), label))
        return pairs

    split = DatasetSplit(resolve(doc["train"]), resolve(doc["val"]),
                         int(doc.get("seed", 0)), float(doc.get("val_frac", 0.2)))
    return root, split
