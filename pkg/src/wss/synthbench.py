"""Deterministic synthetic shapes benchmark.

Three foreground classes (disk, square, triangle) with disjoint color
families on textured gray backgrounds. Retrieved-style images hold a single
large shape whose size range deliberately straddles the 20% foreground bound
so the fraction filter has something to reject. Target-style images hold one
to three smaller shapes of distinct classes plus, when clutter is on,
palette-colored impostor rings that only ever count as background: they give
the label constraint and the multi-label branch false positives to suppress,
and they never appear in retrieved images, creating a domain gap between the
two training stages.
"""

import dataclasses
from pathlib import Path

import numpy as np

from .core import (SOURCE_RETRIEVED, ClassTaxonomy, DatasetManifest,
                   ImageRecord, ManifestEntry, Mask, write_image, write_mask)
from .ingest import ClassGroup

DISK, SQUARE, TRIANGLE = 1, 2, 3

# (low, high) per channel, indexed by class: saturated primary families
_PALETTES = {
    DISK: ((170, 255), (0, 80), (0, 80)),
    SQUARE: ((0, 80), (170, 255), (0, 80)),
    TRIANGLE: ((0, 80), (0, 80), (170, 255)),
}

# shape size ranges as canvas fractions; retrieved shapes are large enough
# that part of each class's range falls under a 20% foreground share
_RETRIEVED_SIZES = {
    DISK: (0.23, 0.40),       # radius
    SQUARE: (0.40, 0.69),     # side
    TRIANGLE: (0.57, 0.88),   # base and height
}
_TARGET_SIZES = {
    DISK: (0.10, 0.23),
    SQUARE: (0.19, 0.40),
    TRIANGLE: (0.25, 0.54),
}


def synth_taxonomy() -> ClassTaxonomy:
    return ClassTaxonomy(("background", "disk", "square", "triangle"))


@dataclasses.dataclass(frozen=True)
class SynthSpec:
    """Benchmark shape: image count, canvas size, noise, clutter, seed.

    num_images counts images per class for retrieved groups and total images
    for a target set.
    """

    num_images: int
    canvas: int = 96
    noise_level: float = 0.15
    clutter: bool = True
    rng_seed: int = 0

    def __post_init__(self):
        if self.num_images < 1:
            raise ValueError("num_images must be >= 1")
        if self.canvas < 32:
            raise ValueError("canvas must be >= 32")
        if not 0 <= self.noise_level <= 1:
            raise ValueError("noise_level must lie in [0, 1]")


def _pick_color(rng, class_index):
    return np.array([rng.integers(lo, hi + 1) for lo, hi in
                     _PALETTES[class_index]], dtype=np.float64)


def _shape_mask(rng, class_index, canvas, size_range):
    """Boolean inside-mask for one randomly placed, fully visible shape."""
    yy, xx = np.mgrid[0:canvas, 0:canvas]
    lo, hi = size_range
    if class_index == DISK:
        r = min(rng.uniform(lo, hi) * canvas, (canvas - 2) / 2)
        cy = rng.uniform(r + 1, canvas - r - 1)
        cx = rng.uniform(r + 1, canvas - r - 1)
        return (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
    if class_index == SQUARE:
        half = rng.uniform(lo, hi) * canvas / 2
        half = min(half, (canvas - 2) / 2)
        cy = rng.uniform(half + 1, canvas - half - 1)
        cx = rng.uniform(half + 1, canvas - half - 1)
        return (np.abs(yy - cy) <= half) & (np.abs(xx - cx) <= half)
    if class_index == TRIANGLE:
        h = min(rng.uniform(lo, hi) * canvas, canvas - 2.0)
        b = min(rng.uniform(lo, hi) * canvas, canvas - 2.0)
        y0 = rng.uniform(1, canvas - h - 1)
        cx = rng.uniform(b / 2 + 1, canvas - b / 2 - 1)
        t = (yy - y0) / h
        return (t >= 0) & (t <= 1) & (np.abs(xx - cx) <= t * b / 2)
    raise ValueError(f"unknown shape class {class_index}")


def _background(rng, canvas, clutter):
    base = rng.uniform(120, 180)
    img = np.full((canvas, canvas, 3), base, dtype=np.float64)
    if clutter:
        for _ in range(rng.integers(1, 3)):
            bh = rng.integers(canvas // 4, canvas // 2)
            bw = rng.integers(canvas // 4, canvas // 2)
            y0 = rng.integers(0, canvas - bh)
            x0 = rng.integers(0, canvas - bw)
            yy, xx = np.mgrid[0:bh, 0:bw]
            stripes = ((yy + xx) // 4) % 2
            tone = np.where(stripes, base + 25, base - 25)
            img[y0:y0 + bh, x0:x0 + bw] = tone[:, :, None]
    return img


def _impostor_rings(rng, img, canvas):
    for _ in range(rng.integers(1, 3)):
        r_out = rng.uniform(0.08, 0.15) * canvas
        r_in = r_out - rng.uniform(2, 3.5)
        cy = rng.uniform(r_out + 1, canvas - r_out - 1)
        cx = rng.uniform(r_out + 1, canvas - r_out - 1)
        yy, xx = np.mgrid[0:canvas, 0:canvas]
        d2 = (yy - cy) ** 2 + (xx - cx) ** 2
        ring = (d2 <= r_out ** 2) & (d2 >= r_in ** 2)
        img[ring] = _pick_color(rng, rng.integers(1, 4))
    return img


def _finish(rng, img, noise_level):
    noisy = img + rng.normal(0, noise_level * 40, img.shape)
    return np.clip(np.floor(noisy + 0.5), 0, 255).astype(np.uint8)


def generate_retrieved_groups(spec: SynthSpec):
    """Per-class single-shape groups plus exact sidecar foreground masks.

    Returns (groups, sidecars) with sidecars mapping image id to a {0,1}
    uint8 mask matching the drawn geometry exactly.
    """
    taxonomy = synth_taxonomy()
    groups = []
    sidecars = {}
    for cls in (DISK, SQUARE, TRIANGLE):
        records = []
        for i in range(spec.num_images):
            rng = np.random.default_rng(
                np.random.SeedSequence((spec.rng_seed, 1, cls, i)))
            img = _background(rng, spec.canvas, spec.clutter)
            inside = _shape_mask(rng, cls, spec.canvas, _RETRIEVED_SIZES[cls])
            img[inside] = _pick_color(rng, cls)
            pixels = _finish(rng, img, spec.noise_level)
            rec_id = f"ret_{taxonomy.names[cls]}_{i:04d}"
            records.append(ImageRecord(id=rec_id, pixels=pixels,
                                       source=SOURCE_RETRIEVED, query_class=cls))
            sidecars[rec_id] = inside.astype(np.uint8)
        groups.append(ClassGroup(class_index=cls, records=tuple(records)))
    return groups, sidecars


def generate_target_set(spec: SynthSpec, out_dir, split: str = "train",
                        tag: str = "tgt") -> DatasetManifest:
    """Multi-shape target images with full ground truth, written to out_dir.

    Each image holds 1-3 shapes of distinct classes (draw order is z-order)
    and, with clutter on, impostor rings that remain background in the
    ground truth. Entries carry both the gt mask path and the image-level
    labels, so callers choose which supervision to expose.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(spec.num_images):
        rng = np.random.default_rng(
            np.random.SeedSequence((spec.rng_seed, 2, i)))
        img = _background(rng, spec.canvas, spec.clutter)
        if spec.clutter:
            img = _impostor_rings(rng, img, spec.canvas)
        gt = np.zeros((spec.canvas, spec.canvas), dtype=np.uint8)
        n_shapes = rng.integers(1, 4)
        classes = rng.choice([DISK, SQUARE, TRIANGLE], size=n_shapes,
                             replace=False)
        for cls in classes:
            inside = _shape_mask(rng, int(cls), spec.canvas, _TARGET_SIZES[int(cls)])
            img[inside] = _pick_color(rng, int(cls))
            gt[inside] = cls
        pixels = _finish(rng, img, spec.noise_level)
        name = f"{tag}_{i:04d}"
        write_image(pixels, out_dir / f"{name}.png")
        write_mask(Mask(gt), out_dir / f"{name}.mask.png")
        labels = tuple(int(v) for v in np.unique(gt) if v != 0)
        entries.append(ManifestEntry(image_path=f"{name}.png",
                                     mask_path=f"{name}.mask.png",
                                     label_indices=labels))
    return DatasetManifest(entries=tuple(entries), split=split, root=out_dir)


def materialize_retrieved(groups, sidecars, out_dir):
    """Write groups as per-class folders plus a sidecar folder.

    Layout: out_dir/<class-name>/<id>.png for images and
    out_dir/sidecars/<id>.mask.png for oracle masks. Returns
    (class_dirs dict keyed by class index, sidecar_dir).
    """
    taxonomy = synth_taxonomy()
    out_dir = Path(out_dir)
    sidecar_dir = out_dir / "sidecars"
    sidecar_dir.mkdir(parents=True, exist_ok=True)
    class_dirs = {}
    for group in groups:
        cdir = out_dir / taxonomy.names[group.class_index]
        cdir.mkdir(parents=True, exist_ok=True)
        class_dirs[group.class_index] = cdir
        for rec in group.records:
            write_image(rec.pixels, cdir / f"{rec.id}.png")
            write_mask(Mask(sidecars[rec.id] * 255), sidecar_dir / f"{rec.id}.mask.png")
    return class_dirs, sidecar_dir
