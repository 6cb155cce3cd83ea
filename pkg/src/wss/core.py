"""Shared data model: taxonomy, images, labels, masks, score maps, manifests.

All container types are treated as immutable after construction; operations
return new objects and never mutate their inputs.
"""

import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image

IGNORE = 255

SOURCE_RETRIEVED = "retrieved"
SOURCE_TARGET = "target"

PASCAL_CLASSES = (
    "background", "aeroplane", "bicycle", "bird", "boat", "bottle", "bus",
    "car", "cat", "chair", "cow", "diningtable", "dog", "horse", "motorbike",
    "person", "pottedplant", "sheep", "sofa", "train", "tvmonitor",
)


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class ClassTaxonomy:
    """Ordered class names; index 0 is always the background class."""

    names: tuple

    background_index = 0

    def __post_init__(self):
        names = tuple(self.names)
        object.__setattr__(self, "names", names)
        if len(names) < 2:
            raise ValueError("taxonomy needs background plus at least one class")
        if names[0] != "background":
            raise ValueError("class index 0 must be named 'background'")
        if any(not n for n in names):
            raise ValueError("class names must be non-empty")
        if len(set(names)) != len(names):
            raise ValueError("class names must be unique")

    @property
    def count(self):
        return len(self.names)

    def index_of(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise ManifestError(
                f"unknown class name {name!r}; valid names: {', '.join(self.names)}"
            ) from None


def pascal_taxonomy() -> ClassTaxonomy:
    return ClassTaxonomy(PASCAL_CLASSES)


@dataclass(frozen=True)
class ImageRecord:
    """One image: pixels are HxWx3 uint8, source marks provenance."""

    id: str
    pixels: np.ndarray
    source: str = SOURCE_TARGET
    query_class: int | None = None

    def __post_init__(self):
        px = self.pixels
        if px.ndim != 3 or px.shape[2] != 3 or px.dtype != np.uint8:
            raise ValueError(f"pixels must be HxWx3 uint8, got {px.shape} {px.dtype}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError("image must be at least 1x1")
        if self.source not in (SOURCE_RETRIEVED, SOURCE_TARGET):
            raise ValueError(f"bad source {self.source!r}")
        if self.source == SOURCE_RETRIEVED:
            if self.query_class is None or self.query_class == ClassTaxonomy.background_index:
                raise ValueError("retrieved images need a non-background query_class")

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def width(self):
        return self.pixels.shape[1]


@dataclass(frozen=True)
class LabelVector:
    """Per-image class presence vector; background is always present."""

    present: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.present, dtype=bool)
        object.__setattr__(self, "present", p)
        if p.ndim != 1 or p.shape[0] < 2:
            raise ValueError("label vector must be 1-D with length >= 2")
        if not p[ClassTaxonomy.background_index]:
            raise ValueError("background must always be marked present")

    @classmethod
    def from_indices(cls, indices, count: int) -> "LabelVector":
        p = np.zeros(count, dtype=bool)
        p[ClassTaxonomy.background_index] = True
        for i in indices:
            if not 0 <= i < count:
                raise ValueError(f"class index {i} out of range for C={count}")
            p[i] = True
        return cls(p)

    def indices(self):
        return tuple(int(i) for i in np.flatnonzero(self.present))


@dataclass(frozen=True)
class Mask:
    """HxW class-index raster; value 255 marks ignored pixels."""

    labels: np.ndarray

    def __post_init__(self):
        lab = np.asarray(self.labels)
        if lab.ndim != 2:
            raise ValueError("mask must be HxW")
        if lab.dtype != np.uint8:
            if lab.min(initial=0) < 0 or lab.max(initial=0) > 255:
                raise ValueError("mask values must fit in uint8")
            lab = lab.astype(np.uint8)
        object.__setattr__(self, "labels", lab)

    @property
    def shape(self):
        return self.labels.shape


@dataclass(frozen=True)
class ScoreMap:
    """Dense per-pixel per-class scores, HxWxC, tagged logits or probabilities."""

    scores: np.ndarray
    space: str = "logits"

    def __post_init__(self):
        s = self.scores
        if s.ndim != 3:
            raise ValueError("score map must be HxWxC")
        if self.space not in ("logits", "probabilities"):
            raise ValueError(f"bad score space {self.space!r}")
        if not np.isfinite(s).all():
            raise ValueError("score map contains non-finite values")
        if self.space == "probabilities":
            if s.min() < 0:
                raise ValueError("probabilities must be nonnegative")
            sums = s.sum(axis=2)
            if np.abs(sums - 1.0).max() > 1e-5:
                raise ValueError("probabilities must sum to 1 per pixel")

    @property
    def num_classes(self):
        return self.scores.shape[2]


@dataclass(frozen=True)
class ManifestEntry:
    image_path: str
    mask_path: str | None = None
    label_indices: tuple | None = None


@dataclass(frozen=True)
class DatasetManifest:
    """Validated list of dataset entries; paths are relative to `root`."""

    entries: tuple
    split: str = "train"
    root: Path = field(default_factory=Path)

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        object.__setattr__(self, "root", Path(self.root))
        if self.split not in ("train", "val", "test"):
            raise ValueError(f"bad split {self.split!r}")

    def __len__(self):
        return len(self.entries)

    def resolve(self, rel: str) -> Path:
        p = Path(rel)
        return p if p.is_absolute() else self.root / p


# ---------------------------------------------------------------------------
# raster IO

def read_image(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def write_image(pixels: np.ndarray, path):
    Image.fromarray(pixels, mode="RGB").save(path)


def read_mask(path) -> Mask:
    with Image.open(path) as im:
        if im.mode not in ("L", "P"):
            im = im.convert("L")
        return Mask(np.asarray(im, dtype=np.uint8))


def write_mask(mask: Mask, path):
    Image.fromarray(mask.labels, mode="L").save(path)


# ---------------------------------------------------------------------------
# geometric primitives

def _round_half_up(x) -> int:
    return int(np.floor(x + 0.5))


def bilinear_resize(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize HxW[xC] array with half-pixel-center bilinear sampling (float64 out)."""
    arr = np.asarray(arr, dtype=np.float64)
    h, w = arr.shape[:2]
    if (h, w) == (out_h, out_w):
        return arr.copy()
    ys = np.clip((np.arange(out_h) + 0.5) * (h / out_h) - 0.5, 0, h - 1)
    xs = np.clip((np.arange(out_w) + 0.5) * (w / out_w) - 0.5, 0, w - 1)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0).reshape(-1, 1)
    fx = (xs - x0).reshape(1, -1)
    if arr.ndim == 3:
        fy = fy[..., None]
        fx = fx[..., None]
    top = arr[y0][:, x0] * (1 - fx) + arr[y0][:, x1] * fx
    bot = arr[y1][:, x0] * (1 - fx) + arr[y1][:, x1] * fx
    return top * (1 - fy) + bot * fy


def nearest_resize(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize HxW[xC] array by nearest-neighbor sampling (dtype preserved)."""
    h, w = arr.shape[:2]
    if (h, w) == (out_h, out_w):
        return arr.copy()
    ys = np.minimum((np.arange(out_h) + 0.5) * (h / out_h), h - 1).astype(np.intp)
    xs = np.minimum((np.arange(out_w) + 0.5) * (w / out_w), w - 1).astype(np.intp)
    return arr[ys][:, xs].copy()


def resize_max_dim(image: ImageRecord, max_dim: int, mask: Mask | None = None):
    """Cap the larger image dimension at max_dim, preserving aspect ratio.

    Images are never upscaled. The image is resampled bilinearly and the mask,
    when given, nearest-neighbor so labels stay categorical.
    """
    if max_dim < 1:
        raise ValueError("max_dim must be >= 1")
    if mask is not None and mask.shape != (image.height, image.width):
        raise ValueError("image and mask shapes differ")
    h, w = image.height, image.width
    if max(h, w) <= max_dim:
        return image, mask
    if h >= w:
        out_h = max_dim
        out_w = max(1, _round_half_up(w * max_dim / h))
    else:
        out_w = max_dim
        out_h = max(1, _round_half_up(h * max_dim / w))
    px = bilinear_resize(image.pixels, out_h, out_w)
    px = np.clip(np.floor(px + 0.5), 0, 255).astype(np.uint8)
    out_img = replace(image, pixels=px)
    out_mask = None
    if mask is not None:
        out_mask = Mask(nearest_resize(mask.labels, out_h, out_w))
    return out_img, out_mask


def _as_rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def random_crop_pair(image: ImageRecord, mask: Mask, crop: int, rng,
                     pad_rgb=None):
    """Crop a random crop x crop window from an aligned image/mask pair.

    Inputs smaller than the crop are padded bottom/right first, the image with
    pad_rgb (per-channel dataset mean; defaults to this image's channel means)
    and the mask with IGNORE. The offset is drawn uniformly over valid
    positions, deterministic given the seed.
    """
    if crop < 1:
        raise ValueError("crop must be >= 1")
    if mask.shape != (image.height, image.width):
        raise ValueError("image and mask shapes differ")
    rng = _as_rng(rng)
    px = image.pixels
    lab = mask.labels
    h, w = px.shape[:2]
    if h < crop or w < crop:
        if pad_rgb is None:
            pad_rgb = px.reshape(-1, 3).mean(axis=0)
        fill = np.clip(np.floor(np.asarray(pad_rgb, dtype=np.float64) + 0.5), 0, 255)
        fill = fill.astype(np.uint8)
        ph, pw = max(h, crop), max(w, crop)
        canvas = np.empty((ph, pw, 3), dtype=np.uint8)
        canvas[:] = fill
        canvas[:h, :w] = px
        lab_canvas = np.full((ph, pw), IGNORE, dtype=np.uint8)
        lab_canvas[:h, :w] = lab
        px, lab = canvas, lab_canvas
        h, w = ph, pw
    oy = int(rng.integers(0, h - crop + 1))
    ox = int(rng.integers(0, w - crop + 1))
    out_img = replace(image, pixels=px[oy:oy + crop, ox:ox + crop].copy())
    out_mask = Mask(lab[oy:oy + crop, ox:ox + crop].copy())
    return out_img, out_mask


def label_vector_from_mask(mask: Mask, taxonomy: ClassTaxonomy) -> LabelVector:
    """Class presence implied by a mask; background is always marked present."""
    vals = np.unique(mask.labels)
    vals = vals[vals != IGNORE]
    if vals.size and vals.max() >= taxonomy.count:
        raise ValueError(f"mask value {vals.max()} out of range for C={taxonomy.count}")
    present = np.zeros(taxonomy.count, dtype=bool)
    present[vals] = True
    present[ClassTaxonomy.background_index] = True
    return LabelVector(present)


# ---------------------------------------------------------------------------
# manifest format: one record per line,
#   <image-path> TAB <mask-path-or-dash> TAB <comma-separated-class-names-or-dash>

def load_manifest(path, taxonomy: ClassTaxonomy, split: str = "train") -> DatasetManifest:
    """Parse and validate a manifest file; label names are mapped to indices."""
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest file not found: {path}")
    root = path.parent
    entries = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ManifestError(
                    f"{path}:{lineno}: expected 3 tab-separated fields, got {len(parts)}"
                )
            img_rel, mask_rel, label_str = parts
            img_path = root / img_rel if not Path(img_rel).is_absolute() else Path(img_rel)
            if not img_path.is_file():
                raise ManifestError(f"{path}:{lineno}: image not readable: {img_path}")
            mask_field = None
            if mask_rel != "-":
                mask_field = mask_rel
                mp = root / mask_rel if not Path(mask_rel).is_absolute() else Path(mask_rel)
                if not mp.is_file():
                    raise ManifestError(f"{path}:{lineno}: mask not readable: {mp}")
            labels = None
            if label_str != "-":
                try:
                    labels = tuple(taxonomy.index_of(n) for n in label_str.split(","))
                except ManifestError as exc:
                    raise ManifestError(f"{path}:{lineno}: {exc}") from None
            entries.append(ManifestEntry(img_rel, mask_field, labels))
    return DatasetManifest(tuple(entries), split=split, root=root)


def write_manifest(manifest: DatasetManifest, path, taxonomy: ClassTaxonomy):
    """Write entries in the manifest text format, order preserved."""
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        for e in manifest.entries:
            mask_field = e.mask_path if e.mask_path is not None else "-"
            if e.label_indices is None:
                label_field = "-"
            else:
                label_field = ",".join(taxonomy.names[i] for i in e.label_indices)
            fh.write(f"{e.image_path}\t{mask_field}\t{label_field}\n")
