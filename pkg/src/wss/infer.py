"""Score-to-mask inference: constrained argmax, multi-scale fusion, CRF."""

import warnings
from pathlib import Path

import numpy as np

from .config import CrfSettings, PipelineConfig
from .core import (DatasetManifest, ImageRecord, LabelVector, ManifestEntry,
                   Mask, ScoreMap, _round_half_up, bilinear_resize, read_image,
                   write_mask)
from .crf import crf_refine
from .model import MIN_INPUT_DIM, NetworkParams, forward_segmentation


def softmax_probs(scores: ScoreMap) -> ScoreMap:
    """Convert per-pixel logits to a probability score map."""
    if scores.space != "logits":
        raise ValueError("softmax_probs expects logits")
    z = scores.scores.astype(np.float64)
    z = z - z.max(axis=2, keepdims=True)
    e = np.exp(z)
    return ScoreMap(e / e.sum(axis=2, keepdims=True), "probabilities")


def constrained_argmax(probs: ScoreMap, y: LabelVector) -> Mask:
    """Per-pixel argmax restricted to the classes marked present in y.

    Probabilities are nonnegative, so masking absent classes to -1 removes
    them without disturbing the ordering of the rest; ties resolve to the
    lowest class index.
    """
    if probs.space != "probabilities":
        raise ValueError("constrained_argmax needs probabilities; apply "
                         "softmax_probs to logits first")
    if y.present.shape[0] != probs.num_classes:
        raise ValueError(f"label vector length {y.present.shape[0]} != "
                         f"{probs.num_classes} classes")
    masked = np.where(y.present[None, None, :], probs.scores, -1.0)
    return Mask(masked.argmax(axis=2).astype(np.uint8))


def _scaled_record(image: ImageRecord, scale: float):
    h, w = image.pixels.shape[:2]
    if scale == 1.0:
        return image
    oh = max(1, _round_half_up(h * scale))
    ow = max(1, _round_half_up(w * scale))
    px = bilinear_resize(image.pixels, oh, ow)
    px = np.clip(np.floor(px + 0.5), 0, 255).astype(np.uint8)
    return ImageRecord(id=image.id, pixels=px, source=image.source,
                       query_class=image.query_class)


def multiscale_probs(image: ImageRecord, params: NetworkParams,
                     scales) -> ScoreMap:
    """Average softmax probabilities over rescaled forward passes.

    Each scale's probabilities are bilinearly upsampled to the input
    resolution before averaging; the mean is renormalized per pixel. Scales
    that shrink the image below the network minimum are skipped with a
    warning.
    """
    scales = list(scales)
    if not scales:
        raise ValueError("need at least one inference scale")
    if any(s <= 0 for s in scales):
        raise ValueError("inference scales must be positive")
    h, w = image.pixels.shape[:2]
    total = np.zeros((h, w, params.num_classes), dtype=np.float64)
    used = 0
    for s in scales:
        rec = _scaled_record(image, s)
        if min(rec.pixels.shape[:2]) < MIN_INPUT_DIM:
            warnings.warn(f"scale {s} shrinks image below the network "
                          f"minimum of {MIN_INPUT_DIM}px; skipping")
            continue
        probs = softmax_probs(forward_segmentation(rec, params))
        total += bilinear_resize(probs.scores, h, w)
        used += 1
    if used == 0:
        raise ValueError("every inference scale fell below the network minimum")
    mean = total / used
    return ScoreMap(mean / mean.sum(axis=2, keepdims=True), "probabilities")


def predict_mask(image: ImageRecord, params: NetworkParams,
                 y: LabelVector | None = None, scales=(1.0,),
                 crf: CrfSettings | None = None) -> Mask:
    """Full inference path: multi-scale fusion, optional CRF, constrained argmax."""
    probs = multiscale_probs(image, params, scales)
    if crf is not None:
        probs = crf_refine(image, probs, crf)
    if y is None:
        y = LabelVector(np.ones(params.num_classes, dtype=bool))
    return constrained_argmax(probs, y)


def generate_target_masks(manifest: DatasetManifest, params: NetworkParams,
                          config: PipelineConfig, out_dir) -> DatasetManifest:
    """Predict a label-constrained mask for every manifest entry.

    Masks land in out_dir as <image-stem>.png and the returned manifest pairs
    each image with its mask, rooted at out_dir. CRF refinement here follows
    config.genmask_crf (off by default; final-model outputs are where the CRF
    is normally applied).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    crf = config.crf() if config.genmask_crf else None
    entries = []
    for e in manifest.entries:
        if not e.label_indices:
            raise ValueError(f"mask generation needs image-level labels "
                             f"({e.image_path} has none)")
        src = manifest.resolve(e.image_path)
        rec = ImageRecord(id=Path(e.image_path).stem, pixels=read_image(src))
        y = LabelVector.from_indices(e.label_indices, params.num_classes)
        mask = predict_mask(rec, params, y, config.inference_scales, crf)
        mask_name = f"{Path(e.image_path).stem}.png"
        write_mask(mask, out_dir / mask_name)
        entries.append(ManifestEntry(image_path=str(src.resolve()),
                                     mask_path=mask_name,
                                     label_indices=e.label_indices))
    return DatasetManifest(entries=tuple(entries), split=manifest.split,
                           root=out_dir)
