"""Dataset ingestion and augmentation.

Images come either from a class-per-subdirectory folder or from a built-in
deterministic synthetic shapes corpus (10 geometric classes) sized for CPU
runs. Augmentation follows the two-stage recipe: random area crop of
80-100% (stage 1 adds aspect jitter 0.75-1.33), resize to target, and
horizontal flips; outputs live in [-1, 1].
"""

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Tuple

import numpy as np
import torch
from PIL import Image


class DataError(ValueError):
    pass


@dataclass
class DatasetSpec:
    root: str = ""                  # empty -> synthetic corpus
    resolution: int = 256
    synthetic_classes: int = 10
    synthetic_per_class: int = 48
    augment: bool = True
    horizontal_flip: bool = True

    def __post_init__(self):
        if self.resolution < 1:
            raise DataError("resolution must be positive")
        if self.synthetic_classes < 1 or self.synthetic_per_class < 1:
            raise DataError("synthetic corpus sizes must be positive")


@dataclass
class ArrayDataset:
    images: np.ndarray   # (N, H, W, 3) uint8
    labels: np.ndarray   # (N,) int64
    num_classes: int

    def __post_init__(self):
        if self.images.ndim != 4 or self.images.shape[3] != 3:
            raise DataError(f"expected (N, H, W, 3) images, got {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise DataError("image/label count mismatch")
        if self.num_classes < 1:
            raise DataError("need at least one class")

    def __len__(self) -> int:
        return len(self.images)


# --------------------------------------------------------------------------- #
# synthetic shapes corpus
# --------------------------------------------------------------------------- #

def _shape_mask(cls: int, res: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[0:res, 0:res].astype(np.float64)
    cx = res * (0.5 + rng.uniform(-0.12, 0.12))
    cy = res * (0.5 + rng.uniform(-0.12, 0.12))
    r = res * rng.uniform(0.22, 0.34)
    dx, dy = xx - cx, yy - cy
    if cls == 0:                       # disk
        return dx ** 2 + dy ** 2 <= r ** 2
    if cls == 1:                       # square
        return (np.abs(dx) <= r) & (np.abs(dy) <= r)
    if cls == 2:                       # upward triangle
        return (dy <= r) & (dy >= -r) & (np.abs(dx) <= (dy + r) / 2)
    if cls == 3:                       # ring
        d2 = dx ** 2 + dy ** 2
        return (d2 <= r ** 2) & (d2 >= (0.55 * r) ** 2)
    if cls == 4:                       # plus sign
        arm = 0.4 * r
        return ((np.abs(dx) <= arm) & (np.abs(dy) <= r)) | \
               ((np.abs(dy) <= arm) & (np.abs(dx) <= r))
    if cls == 5:                       # horizontal stripes
        period = max(4.0, res * rng.uniform(0.12, 0.2))
        return (yy // (period / 2)) % 2 == 0
    if cls == 6:                       # vertical stripes
        period = max(4.0, res * rng.uniform(0.12, 0.2))
        return (xx // (period / 2)) % 2 == 0
    if cls == 7:                       # checkerboard
        cell = max(4.0, res * rng.uniform(0.1, 0.16))
        return ((xx // cell) + (yy // cell)) % 2 == 0
    if cls == 8:                       # diamond
        return np.abs(dx) + np.abs(dy) <= 1.3 * r
    if cls == 9:                       # dot grid
        period = max(6.0, res * rng.uniform(0.2, 0.3))
        px = (xx % period) - period / 2
        py = (yy % period) - period / 2
        return px ** 2 + py ** 2 <= (0.28 * period) ** 2
    raise DataError(f"no shape defined for class {cls}")


def synthetic_shapes(num_classes: int = 10, per_class: int = 48,
                     resolution: int = 64, seed: int = 0) -> ArrayDataset:
    """Deterministic colored-geometry corpus; class identity is the shape."""
    if not 1 <= num_classes <= 10:
        raise DataError("synthetic corpus defines at most 10 classes")
    images = np.empty((num_classes * per_class, resolution, resolution, 3), np.uint8)
    labels = np.empty(num_classes * per_class, np.int64)
    i = 0
    for cls in range(num_classes):
        for idx in range(per_class):
            rng = np.random.default_rng([seed, cls, idx])
            bg = rng.integers(20, 110, size=3)
            fg = rng.integers(145, 250, size=3)
            mask = _shape_mask(cls, resolution, rng)
            img = np.where(mask[..., None], fg, bg).astype(np.uint8)
            noise = rng.integers(-8, 9, size=img.shape)
            images[i] = np.clip(img.astype(np.int16) + noise, 0, 255).astype(np.uint8)
            labels[i] = cls
            i += 1
    return ArrayDataset(images, labels, num_classes)


# --------------------------------------------------------------------------- #
# image folders
# --------------------------------------------------------------------------- #

_IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".webp"}


def load_image_folder(root, resolution: int) -> ArrayDataset:
    """Eagerly load root/<class>/<image> into memory at the target size."""
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset root {root} is not a directory")
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not class_dirs:
        raise DataError(f"no class subdirectories under {root}")
    images, labels = [], []
    for label, class_dir in enumerate(class_dirs):
        files = sorted(p for p in class_dir.iterdir()
                       if p.suffix.lower() in _IMAGE_SUFFIXES)
        if not files:
            raise DataError(f"class directory {class_dir} holds no images")
        for path in files:
            try:
                with Image.open(path) as img:
                    arr = np.asarray(img.convert("RGB"))
            except OSError as exc:
                raise DataError(f"cannot decode {path}: {exc}") from exc
            images.append(center_crop_resize(arr, resolution))
            labels.append(label)
    return ArrayDataset(np.stack(images), np.asarray(labels, np.int64),
                        len(class_dirs))


def make_dataset(spec: DatasetSpec, seed: int = 0) -> ArrayDataset:
    if spec.root:
        return load_image_folder(spec.root, spec.resolution)
    return synthetic_shapes(spec.synthetic_classes, spec.synthetic_per_class,
                            spec.resolution, seed)


# --------------------------------------------------------------------------- #
# augmentation
# --------------------------------------------------------------------------- #

def random_crop_params(height: int, width: int, rng: np.random.Generator,
                       aspect_jitter: bool) -> Tuple[int, int, int, int]:
    """(top, left, crop_h, crop_w) with crop area in 80-100% of the image and,
    for stage 1, aspect drawn from [0.75, 1.33]. Ceiling rounding keeps the
    realized area fraction inside [0.8, 1.0].
    """
    area = height * width
    for _ in range(10):
        target = area * rng.uniform(0.8, 1.0)
        aspect = rng.uniform(0.75, 1.33) if aspect_jitter else 1.0
        cw = math.ceil(math.sqrt(target * aspect))
        ch = math.ceil(math.sqrt(target / aspect))
        if cw <= width and ch <= height:
            top = int(rng.integers(0, height - ch + 1))
            left = int(rng.integers(0, width - cw + 1))
            return top, left, ch, cw
    side = min(height, width)
    return (height - side) // 2, (width - side) // 2, side, side


def resized_crop(image: np.ndarray, top: int, left: int, crop_h: int,
                 crop_w: int, target: int) -> np.ndarray:
    crop = image[top:top + crop_h, left:left + crop_w]
    return np.asarray(Image.fromarray(crop).resize((target, target),
                                                   Image.BILINEAR))


def horizontal_flip(image: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(image[:, ::-1])


def augment(image: np.ndarray, stage: int, rng: np.random.Generator,
            target: int, flip: bool = True) -> torch.Tensor:
    """One augmented training view as a (3, target, target) tensor in [-1, 1]."""
    if image.ndim != 3 or image.shape[2] != 3 or image.dtype != np.uint8:
        raise DataError("augment expects an (H, W, 3) uint8 image")
    if stage not in (1, 2):
        raise DataError(f"unknown training stage {stage}")
    if min(image.shape[:2]) < 2:
        raise DataError("image too small to crop")
    top, left, ch, cw = random_crop_params(image.shape[0], image.shape[1], rng,
                                           aspect_jitter=(stage == 1))
    view = resized_crop(image, top, left, ch, cw, target)
    if flip and rng.random() < 0.5:
        view = horizontal_flip(view)
    return to_float_image(view)


def center_crop_resize(image: np.ndarray, size: int) -> np.ndarray:
    """Shorter-edge resize then center crop (zero-shot eval preprocessing)."""
    h, w = image.shape[:2]
    scale = size / min(h, w)
    nh, nw = max(size, round(h * scale)), max(size, round(w * scale))
    resized = np.asarray(Image.fromarray(image).resize((nw, nh), Image.BILINEAR))
    top, left = (nh - size) // 2, (nw - size) // 2
    return resized[top:top + size, left:left + size]


def _writable_contiguous(arr: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(arr)
    # PIL hands back read-only arrays; copy so torch.from_numpy stays safe
    return out if out.flags.writeable else out.copy()


def to_float_image(image: np.ndarray) -> torch.Tensor:
    """(H, W, 3) uint8 -> (3, H, W) float32 in [-1, 1]."""
    t = torch.from_numpy(_writable_contiguous(image)).permute(2, 0, 1).float()
    return t / 127.5 - 1.0


def to_float_batch(images: np.ndarray) -> torch.Tensor:
    t = torch.from_numpy(_writable_contiguous(images)).permute(0, 3, 1, 2).float()
    return t / 127.5 - 1.0


def sample_batch(dataset: ArrayDataset, batch_size: int, rng: torch.Generator,
                 spec: DatasetSpec, stage: int = 1) -> Tuple[torch.Tensor, torch.Tensor]:
    """Random batch drawn with the supplied generator; augmentation RNG is
    derived from the same generator so checkpointed state replays batches.
    """
    idx = torch.randint(len(dataset), (batch_size,), generator=rng)
    labels = torch.from_numpy(dataset.labels[idx.numpy()])
    if not spec.augment:
        return to_float_batch(dataset.images[idx.numpy()]), labels
    aug_seed = int(torch.randint(2 ** 31 - 1, (1,), generator=rng))
    views = []
    for j, i in enumerate(idx.tolist()):
        view_rng = np.random.default_rng([aug_seed, j])
        views.append(augment(dataset.images[i], stage, view_rng,
                             spec.resolution, spec.horizontal_flip))
    return torch.stack(views), labels


def iterate_eval_batches(dataset: ArrayDataset, batch_size: int) -> Iterator[torch.Tensor]:
    """Deterministic pass over the dataset without augmentation."""
    for start in range(0, len(dataset), batch_size):
        yield to_float_batch(dataset.images[start:start + batch_size])
