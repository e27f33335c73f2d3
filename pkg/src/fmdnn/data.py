"""Image files, class-per-directory datasets, splitting and augmentation."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DatasetError, InputError

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".ppm", ".png")


def read_image(path) -> np.ndarray:
    """Load an image file as an (H, W, 3) uint8 array."""
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()
    except (OSError, ValueError) as exc:
        raise DatasetError(f"cannot read image {path}: {exc}") from exc


def write_ppm(path, rgb) -> None:
    """Write an (H, W, 3) uint8 array as binary PPM (P6)."""
    rgb = np.asarray(rgb)
    if rgb.dtype != np.uint8 or rgb.ndim != 3 or rgb.shape[2] != 3:
        raise InputError(f"expected (H, W, 3) uint8 raster, got {rgb.dtype} {rgb.shape}")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(rgb, "RGB").save(path, format="PPM")


def write_gray_ppm(path, values) -> None:
    """Write a [0, 1] map as a P6 raster with equal RGB channels."""
    v = np.round(np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0) * 255).astype(np.uint8)
    write_ppm(path, np.repeat(v[..., None], 3, axis=2))


@dataclass
class Dataset:
    root: Path
    classes: list[str]
    samples: list[tuple[Path, int]]
    seed: int = 0
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    def __len__(self) -> int:
        return len(self.samples)

    def labels(self) -> np.ndarray:
        return np.array([label for _, label in self.samples], dtype=np.int64)

    def image(self, i: int) -> np.ndarray:
        path = self.samples[i][0]
        if path not in self._cache:
            self._cache[path] = read_image(path)
        return self._cache[path]

    def subset(self, indices) -> "Dataset":
        return Dataset(self.root, self.classes, [self.samples[i] for i in indices], self.seed,
                       self._cache)


def load_dataset(root, seed: int = 0) -> Dataset:
    """Scan ``root/<class>/*.ppm|*.png``; classes and samples sorted for determinism."""
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset root {root} is not a directory")
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not class_dirs:
        raise DatasetError(f"dataset root {root} has no class directories")
    samples = []
    for label, d in enumerate(class_dirs):
        files = sorted(p for p in d.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
        if not files:
            raise DatasetError(f"class {d.name!r} has no .ppm/.png images")
        samples.extend((p, label) for p in files)
    return Dataset(root, [d.name for d in class_dirs], samples, seed)


def _largest_remainder(sizes: list[int], ratio: float) -> list[int]:
    """Per-class counts summing to floor(total * ratio), each floor or ceil of its share."""
    shares = [n * ratio for n in sizes]
    counts = [math.floor(x + 1e-9) for x in shares]
    missing = math.floor(sum(sizes) * ratio + 1e-9) - sum(counts)
    order = sorted(range(len(sizes)), key=lambda k: (-(shares[k] - counts[k]), k))
    for k in order[:max(missing, 0)]:
        counts[k] += 1
    return counts


def split_dataset(ds: Dataset, ratios=(0.7, 0.15, 0.15), seed: int = 0) -> tuple[Dataset, Dataset, Dataset]:
    """Stratified train/val/test split.

    Val and test receive floor(n * ratio) samples overall, spread over classes
    by largest remainder after a seeded per-class shuffle; train gets the
    rest. A class with fewer samples than non-empty splits is put entirely in
    train, with a warning.
    """
    if len(ratios) != 3 or min(ratios) < 0 or abs(sum(ratios) - 1) > 1e-9:
        raise InputError(f"split ratios must be 3 non-negative values summing to 1, got {ratios}")
    rng = np.random.default_rng(seed)
    labels = ds.labels()
    parts: list[list[int]] = [[], [], []]
    active = sum(r > 0 for r in ratios)
    pools = []
    for k in range(ds.num_classes):
        idx = np.flatnonzero(labels == k)
        idx = idx[rng.permutation(len(idx))]
        if len(idx) < active:
            logger.warning("class %r has %d samples for %d splits; all go to train",
                           ds.classes[k], len(idx), active)
            parts[0].extend(idx.tolist())
        else:
            pools.append(idx)
    sizes = [len(idx) for idx in pools]
    n_val = _largest_remainder(sizes, ratios[1])
    n_test = _largest_remainder(sizes, ratios[2])
    for idx, v, t in zip(pools, n_val, n_test):
        t = min(t, len(idx) - v)  # both rounded up on a tiny class
        n_train = len(idx) - v - t
        parts[0].extend(idx[:n_train].tolist())
        parts[1].extend(idx[n_train:n_train + v].tolist())
        parts[2].extend(idx[n_train + v:].tolist())
    return tuple(ds.subset(sorted(p)) for p in parts)


def augment(image: np.ndarray, rng: np.random.Generator, size: int | None = None,
            pad: int = 4) -> np.ndarray:
    """Random crop (after reflect padding), horizontal flip (p=0.5), right-angle rotation.

    The output is ``size`` x ``size`` (default: the input's smaller side).
    """
    H, W = image.shape[:2]
    size = min(H, W) if size is None else size
    if H < size or W < size:
        raise InputError(f"image {H}x{W} smaller than target {size}")
    padded = np.pad(image, ((pad, pad), (pad, pad), (0, 0)), mode="reflect") if pad else image
    y = int(rng.integers(0, padded.shape[0] - size + 1))
    x = int(rng.integers(0, padded.shape[1] - size + 1))
    out = padded[y:y + size, x:x + size]
    if rng.random() < 0.5:
        out = out[:, ::-1]
    out = np.rot90(out, k=int(rng.integers(0, 4)))
    return np.ascontiguousarray(out)


def to_batch(images) -> np.ndarray:
    """uint8 (H, W, 3) images -> float64 (B, 3, H, W) in [0, 1]."""
    return np.stack([np.asarray(im, dtype=np.float64).transpose(2, 0, 1) / 255.0 for im in images])


# ---------------------------------------------------------------------------
# synthetic textures

_BACKGROUND = np.array([232.0, 190.0, 214.0])
_NUCLEUS = np.array([92.0, 50.0, 140.0])
_PATTERNS = [
    # count, radius range, elongation, orientation (radians)
    (7, (7.0, 10.0), 1.0, 0.0),
    (45, (1.5, 2.5), 1.0, 0.0),
    (14, (2.0, 3.0), 3.0, 0.0),
    (14, (2.0, 3.0), 3.0, math.pi / 2),
]


def synthetic_image(label: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """One stain-coloured texture: blobs whose count, size and elongation depend on ``label``."""
    count, (rmin, rmax), elong, theta = _PATTERNS[label]
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    density = np.zeros((size, size))
    for _ in range(count + int(rng.integers(-count // 5, count // 5 + 1))):
        cy, cx = rng.uniform(0, size, 2)
        radius = rng.uniform(rmin, rmax)
        angle = theta + rng.normal(0.0, 0.15)
        dy, dx = yy - cy, xx - cx
        u = dx * math.cos(angle) + dy * math.sin(angle)
        v = -dx * math.sin(angle) + dy * math.cos(angle)
        density = np.maximum(density, np.exp(-((u / (radius * elong)) ** 2 + (v / radius) ** 2)))
    density = np.clip(density + rng.normal(0.0, 0.05, density.shape), 0.0, 1.0)
    rgb = _BACKGROUND + density[..., None] * (_NUCLEUS - _BACKGROUND)
    rgb *= rng.uniform(0.97, 1.03)
    return np.clip(np.round(rgb), 0, 255).astype(np.uint8)


def make_synthetic_dataset(root, num_classes: int = 2, per_class: int = 40, size: int = 64,
                           seed: int = 0) -> Dataset:
    """Write a seeded texture dataset to ``root/class_<k>/*.ppm`` and load it."""
    if not 2 <= num_classes <= len(_PATTERNS):
        raise InputError(f"num_classes must be in [2, {len(_PATTERNS)}], got {num_classes}")
    rng = np.random.default_rng(seed)
    root = Path(root)
    for k in range(num_classes):
        for i in range(per_class):
            write_ppm(root / f"class_{k}" / f"{i:04d}.ppm", synthetic_image(k, size, rng))
    return load_dataset(root, seed)
