"""Dataset plumbing: on-disk generation, manifest ingestion, preprocessing.

The manifest is a UTF-8 CSV `path,label,split` (LF line endings); paths are
relative to the manifest's directory. Labels may be class names or integer
ids. Preprocessing resizes to the network input, scales to [0, 1], applies
the optional augmentation (seeded horizontal flip and 4-pixel-pad random
crop), then standardizes with the configured mean/std.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, FormatError
from .imageio import read_image, write_ppm
from .synth import CLASS_NAMES, class_id, generate_defect

VALID_SPLITS = ("train", "val", "test")
MANIFEST_NAME = "manifest.csv"
CROP_PAD = 4


@dataclass(frozen=True)
class SampleRecord:
    path: Path
    label: int
    split: str


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------


@dataclass
class GeneratorSpec:
    out_dir: Path
    classes: tuple = tuple(range(len(CLASS_NAMES)))
    per_class: int = 10
    size: tuple = (64, 64)
    seed: int = 0
    train_fraction: float = 0.8
    val_fraction: float = 0.0

    def __post_init__(self):
        if self.per_class < 0:
            raise ConfigError(f"per_class must be >= 0, got {self.per_class}")
        if not 0 <= self.train_fraction + self.val_fraction <= 1:
            raise ConfigError("split fractions must sum to at most 1")


def generate_dataset(spec: GeneratorSpec):
    """Write images plus a manifest; returns per-class counts.

    Per-image seeds are spec.seed + running index, so regeneration with the
    same spec is byte-identical and images are independent.
    """
    out = Path(spec.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    class_ids = [class_id(c) for c in spec.classes]
    rows = []
    counts = {}
    index = 0
    for cid in class_ids:
        slug = CLASS_NAMES[cid].lower().replace("-", "_")
        n_train = int(round(spec.per_class * spec.train_fraction))
        n_val = int(round(spec.per_class * spec.val_fraction))
        for i in range(spec.per_class):
            img = generate_defect(cid, spec.size, seed=spec.seed + index)
            name = f"{slug}_{i:04d}.ppm"
            write_ppm(out / name, img)
            split = "train" if i < n_train else ("val" if i < n_train + n_val else "test")
            rows.append((name, CLASS_NAMES[cid], split))
            index += 1
        counts[CLASS_NAMES[cid]] = spec.per_class
    with open(out / MANIFEST_NAME, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("path,label,split\n")
        for name, label, split in rows:
            fh.write(f"{name},{label},{split}\n")
    return counts


# ---------------------------------------------------------------------------
# manifest ingestion
# ---------------------------------------------------------------------------


def load_manifest(path, class_names=CLASS_NAMES) -> list[SampleRecord]:
    """Parse and validate a manifest; errors cite 1-based line numbers.

    `class_names` defines the run's label space: integer labels are dense
    positions in it, name labels are matched case-insensitively. Labels in
    the file but outside the space are data errors.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"manifest not found: {path}")
    base = path.parent
    lower = [n.lower() for n in class_names]
    records: list[SampleRecord] = []
    seen: set = set()
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty manifest, expected a path,label,split header")
        if header != ["path", "label", "split"]:
            raise DataError(f"{path} line 1: header must be path,label,split, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise DataError(f"{path} line {lineno}: expected 3 fields, got {len(row)}")
            rel, label_raw, split = row
            if split not in VALID_SPLITS:
                raise DataError(f"{path} line {lineno}: unknown split {split!r}")
            try:
                label = int(label_raw)
                if not 0 <= label < len(class_names):
                    raise DataError(
                        f"{path} line {lineno}: label {label} outside "
                        f"0..{len(class_names) - 1}"
                    )
            except ValueError:
                try:
                    label = lower.index(label_raw.strip().lower())
                except ValueError:
                    raise DataError(
                        f"{path} line {lineno}: label {label_raw!r} not in the "
                        f"run's class list"
                    ) from None
            img_path = (base / rel).resolve()
            if rel in seen:
                raise DataError(f"{path} line {lineno}: duplicate path {rel!r}")
            seen.add(rel)
            if not img_path.exists():
                raise DataError(f"{path} line {lineno}: file not found: {img_path}")
            records.append(SampleRecord(img_path, label, split))
    return records


# ---------------------------------------------------------------------------
# preprocessing
# ---------------------------------------------------------------------------


def resize_bilinear(img: np.ndarray, th: int, tw: int) -> np.ndarray:
    """Bilinear resize of (H, W, C) float arrays; identity when sizes match."""
    h, w = img.shape[:2]
    if (h, w) == (th, tw):
        return img
    ys = np.clip((np.arange(th) + 0.5) * h / th - 0.5, 0, h - 1)
    xs = np.clip((np.arange(tw) + 0.5) * w / tw - 0.5, 0, w - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None, None]
    fx = (xs - x0)[None, :, None]
    a = img[y0][:, x0]
    b = img[y0][:, x1]
    c = img[y1][:, x0]
    d = img[y1][:, x1]
    return a * (1 - fy) * (1 - fx) + b * (1 - fy) * fx + c * fy * (1 - fx) + d * fy * fx


def hflip(img: np.ndarray) -> np.ndarray:
    """Horizontal mirror (an involution)."""
    return img[:, ::-1]


def _pad_crop(img: np.ndarray, rng) -> np.ndarray:
    h, w = img.shape[:2]
    padded = np.pad(img, ((CROP_PAD, CROP_PAD), (CROP_PAD, CROP_PAD), (0, 0)), mode="edge")
    oy = int(rng.integers(0, 2 * CROP_PAD + 1))
    ox = int(rng.integers(0, 2 * CROP_PAD + 1))
    return padded[oy : oy + h, ox : ox + w]


def preprocess(
    image: np.ndarray,
    target_size,
    channels: int = 3,
    mean: float = 0.5,
    std: float = 0.5,
    augment: bool = False,
    rng=None,
) -> np.ndarray:
    """Decode-agnostic preprocessing: returns float32 (C, H, W).

    Without augmentation the output is deterministic regardless of rng; with
    it, a seeded rng yields a reproducible flip/crop sequence.
    """
    img = np.asarray(image)
    if img.ndim == 2:
        img = img[:, :, None]
    if img.ndim != 3:
        raise DataError(f"image must be (H, W) or (H, W, C), got shape {img.shape}")
    img = img.astype(np.float32) / 255.0 if img.dtype == np.uint8 else img.astype(np.float32)
    img = resize_bilinear(img, target_size[0], target_size[1]).astype(np.float32)
    if augment:
        if rng is None:
            raise ConfigError("augmentation requires an rng")
        if rng.random() < 0.5:
            img = hflip(img)
        img = _pad_crop(img, rng)
    if img.shape[2] == 1 and channels > 1:
        img = np.repeat(img, channels, axis=2)
    elif img.shape[2] != channels:
        raise DataError(f"image has {img.shape[2]} channels, network wants {channels}")
    img = (img - np.float32(mean)) / np.float32(std)
    return np.ascontiguousarray(img.transpose(2, 0, 1), dtype=np.float32)


@dataclass
class DefectDataset:
    """In-memory dataset implementing the training loop's materialize protocol."""

    images: list  # decoded uint8 arrays
    labels: np.ndarray
    target_size: tuple
    channels: int = 3
    mean: float = 0.5
    std: float = 0.5
    augment: bool = False
    class_names: tuple = CLASS_NAMES

    def __len__(self):
        return len(self.labels)

    def materialize(self, indices, rng=None):
        xs = [
            preprocess(
                self.images[i],
                self.target_size,
                self.channels,
                self.mean,
                self.std,
                augment=self.augment,
                rng=rng,
            )
            for i in indices
        ]
        return np.stack(xs), self.labels[np.asarray(indices, dtype=np.intp)]


def dataset_from_records(
    records,
    split,
    target_size,
    channels=3,
    mean=0.5,
    std=0.5,
    augment=False,
    class_names=CLASS_NAMES,
) -> DefectDataset:
    """Decode the records of one split (or all, split=None) into memory."""
    chosen = [r for r in records if split is None or r.split == split]
    images = []
    for r in chosen:
        try:
            images.append(read_image(r.path))
        except FormatError as exc:
            raise DataError(f"undecodable image {r.path}: {exc}") from exc
    labels = np.array([r.label for r in chosen], dtype=np.intp)
    return DefectDataset(
        images, labels, tuple(target_size), channels, mean, std, augment, class_names
    )
