"""IoU evaluation: confusion matrices, per-class/mean IoU, ablation table."""

import csv
import dataclasses
from pathlib import Path

import numpy as np

from .core import (IGNORE, ClassTaxonomy, DatasetManifest, ImageRecord, Mask,
                   read_image, read_mask)
from .config import PipelineConfig
from .infer import predict_mask
from .model import NetworkParams
from .train import STAGE_FINAL, STAGE_INITIAL, train_stage


@dataclasses.dataclass(frozen=True)
class ConfusionMatrix:
    """counts[a][b] = pixels with ground truth a predicted b (IGNORE excluded)."""

    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.int64)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise ValueError("confusion matrix must be square")
        if (c < 0).any():
            raise ValueError("confusion counts must be nonnegative")
        object.__setattr__(self, "counts", c)

    @classmethod
    def empty(cls, num_classes: int) -> "ConfusionMatrix":
        return cls(np.zeros((num_classes, num_classes), dtype=np.int64))

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def accumulate(cm: ConfusionMatrix, gt: Mask, pred: Mask) -> ConfusionMatrix:
    """Add the joint label counts of one (gt, pred) pair, skipping IGNORE gt."""
    if gt.shape != pred.shape:
        raise ValueError(f"gt {gt.shape} and pred {pred.shape} shapes differ")
    C = cm.num_classes
    g = gt.labels.ravel()
    p = pred.labels.ravel()
    if (p >= C).any():
        raise ValueError("prediction contains labels outside the taxonomy")
    valid = g != IGNORE
    g = g[valid]
    p = p[valid]
    if (g >= C).any():
        raise ValueError("ground truth contains labels outside the taxonomy")
    joint = np.bincount(g.astype(np.int64) * C + p, minlength=C * C)
    return ConfusionMatrix(cm.counts + joint.reshape(C, C))


def per_class_iou(cm: ConfusionMatrix) -> np.ndarray:
    """Per-class intersection over union; NaN marks classes absent from both sides."""
    c = cm.counts.astype(np.float64)
    inter = np.diag(c)
    union = c.sum(axis=1) + c.sum(axis=0) - inter
    out = np.full(cm.num_classes, np.nan)
    defined = union > 0
    out[defined] = inter[defined] / union[defined]
    return out


def mean_iou(cm: ConfusionMatrix) -> float:
    ious = per_class_iou(cm)
    if np.isnan(ious).all():
        raise ValueError("no class is present in ground truth or predictions")
    return float(np.nanmean(ious))


def write_iou_report(taxonomy: ClassTaxonomy, cm: ConfusionMatrix, path):
    """CSV report: one (class, IoU) row per class, then the mean row.

    Classes undefined on this data (absent from both gt and predictions)
    appear as empty cells and are excluded from the mean.
    """
    ious = per_class_iou(cm)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["class", "iou"])
        for name, v in zip(taxonomy.names, ious):
            w.writerow([name, "" if np.isnan(v) else repr(float(v))])
        w.writerow(["mean", repr(mean_iou(cm))])


def read_iou_report(path):
    """Return ({class: iou-or-None}, mean) parsed from write_iou_report output."""
    per_class = {}
    mean = None
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            if row["class"] == "mean":
                mean = float(row["iou"])
            else:
                per_class[row["class"]] = float(row["iou"]) if row["iou"] else None
    if mean is None:
        raise ValueError(f"{path} has no mean row")
    return per_class, mean


def evaluate_predictions(gt_manifest: DatasetManifest, pred_dir,
                         num_classes: int) -> ConfusionMatrix:
    """Accumulate IoU counts for <image-stem>.png predictions in pred_dir."""
    pred_dir = Path(pred_dir)
    cm = ConfusionMatrix.empty(num_classes)
    for e in gt_manifest.entries:
        if e.mask_path is None:
            raise ValueError(f"evaluation needs a gt mask for {e.image_path}")
        gt = read_mask(gt_manifest.resolve(e.mask_path))
        pred_path = pred_dir / f"{Path(e.image_path).stem}.png"
        if not pred_path.exists():
            raise FileNotFoundError(f"no prediction for {e.image_path} "
                                    f"(expected {pred_path})")
        cm = accumulate(cm, gt, read_mask(pred_path))
    return cm


def evaluate_model(params: NetworkParams, gt_manifest: DatasetManifest,
                   scales=(1.0,), crf=None) -> ConfusionMatrix:
    """Predict every manifest image (unconstrained argmax) and score against gt."""
    cm = ConfusionMatrix.empty(params.num_classes)
    for e in gt_manifest.entries:
        if e.mask_path is None:
            raise ValueError(f"evaluation needs a gt mask for {e.image_path}")
        rec = ImageRecord(id=Path(e.image_path).stem,
                          pixels=read_image(gt_manifest.resolve(e.image_path)))
        pred = predict_mask(rec, params, None, scales, crf)
        cm = accumulate(cm, read_mask(gt_manifest.resolve(e.mask_path)), pred)
    return cm


ABLATION_ROWS = ("initial generator", "simple final", "final + multilabel",
                 "final + multilabel + ms + crf")


def ablation_run(initial_params: NetworkParams, generated: DatasetManifest,
                 val: DatasetManifest, config: PipelineConfig, rng_seed: int,
                 taxonomy: ClassTaxonomy, final_params: NetworkParams | None = None):
    """Four-configuration comparison on the validation set.

    Rows: the stage-1 generator itself; a final model trained on the
    generated masks without the multi-label branch; the dual-branch final
    model; and that same model with multi-scale inference plus CRF. Returns
    [(row_name, mean_iou), ...] in that order. Passing final_params reuses
    an already trained dual-branch model for the last two rows instead of
    retraining one.
    """
    rows = []
    rows.append((ABLATION_ROWS[0],
                 mean_iou(evaluate_model(initial_params, val))))

    plain_cfg = dataclasses.replace(config, stage1_iters=config.stage2_iters)
    simple_params, _ = train_stage(generated, plain_cfg, STAGE_INITIAL,
                                   rng_seed, taxonomy)
    rows.append((ABLATION_ROWS[1], mean_iou(evaluate_model(simple_params, val))))

    if final_params is None:
        final_params, _ = train_stage(generated, config, STAGE_FINAL, rng_seed,
                                      taxonomy)
    rows.append((ABLATION_ROWS[2], mean_iou(evaluate_model(final_params, val))))
    rows.append((ABLATION_ROWS[3],
                 mean_iou(evaluate_model(final_params, val,
                                         scales=config.inference_scales,
                                         crf=config.crf()))))
    return rows


def write_ablation_table(rows, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["setting", "mean_iou"])
        for name, miou in rows:
            w.writerow([name, repr(float(miou))])
