"""Two-stage SGD training on manifest data.

The batch objective is the sum of per-image losses, so the configured
learning rate is calibrated against the batch sum, not the mean. Logged loss
columns are batch means so their scale is independent of batch size.
"""

import csv
from pathlib import Path

import numpy as np

from .core import (IGNORE, ClassTaxonomy, DatasetManifest, ImageRecord,
                   LabelVector, Mask, ScoreMap, nearest_resize, random_crop_pair,
                   read_image, read_mask)
from .config import PipelineConfig
from .losses import multilabel_bce_loss, sgd_step, softmax_nll_loss
from .model import (TOY, MultiLabelScores, NetworkParams, batch_backward,
                    batch_forward, build_backbone, save_checkpoint)

STAGE_INITIAL = "initial"
STAGE_FINAL = "final"


def dataset_channel_mean(images) -> np.ndarray:
    """Per-channel mean intensity over a list of HxWx3 uint8 arrays."""
    total = np.zeros(3, dtype=np.float64)
    count = 0
    for px in images:
        total += px.reshape(-1, 3).sum(axis=0)
        count += px.shape[0] * px.shape[1]
    if count == 0:
        raise ValueError("cannot compute channel mean of an empty dataset")
    return (total / count).astype(np.float32)


def _load_samples(manifest: DatasetManifest, taxonomy: ClassTaxonomy, stage: str):
    if len(manifest) == 0:
        raise ValueError("empty training manifest")
    samples = []
    for e in manifest.entries:
        if e.mask_path is None:
            raise ValueError(f"stage {stage!r} needs a mask for every entry "
                             f"({e.image_path} has none)")
        pixels = read_image(manifest.resolve(e.image_path))
        mask = read_mask(manifest.resolve(e.mask_path))
        if mask.shape != pixels.shape[:2]:
            raise ValueError(f"image/mask shape mismatch for {e.image_path}")
        label_vec = None
        if stage == STAGE_FINAL:
            if not e.label_indices:
                raise ValueError(f"stage 'final' needs image-level labels "
                                 f"({e.image_path} has none)")
            label_vec = LabelVector.from_indices(e.label_indices, taxonomy.count)
        rec = ImageRecord(id=Path(e.image_path).stem, pixels=pixels)
        samples.append((rec, mask, label_vec))
    return samples


def _lr_at(iteration, total, base, factor):
    drop_after = max(1, int(np.floor(0.8 * total)))
    return base if iteration <= drop_after else base / factor


def train_stage(manifest: DatasetManifest, config: PipelineConfig, stage: str,
                rng_seed: int, taxonomy: ClassTaxonomy, log_csv=None,
                checkpoint_dir=None, branch_hidden: int = 64):
    """Train one stage and return (params, log_rows).

    Stage "initial" trains a single-branch net on (image, mask) pairs with the
    segmentation loss only, for config.stage1_iters iterations. Stage "final"
    trains a dual-branch net on (image, labels, mask) triples with the
    combined objective, for config.stage2_iters iterations. The learning rate
    drops once by config.lr_drop_factor after 80% of the iterations.

    Augmentation draws (crop offset, flip coin) come from per-sample seeds
    derived from (rng_seed, sample counter), so the result is independent of
    how data loading is parallelized.
    """
    if stage not in (STAGE_INITIAL, STAGE_FINAL):
        raise ValueError(f"unknown stage {stage!r}")
    dual = stage == STAGE_FINAL
    total_iters = config.stage2_iters if dual else config.stage1_iters
    samples = _load_samples(manifest, taxonomy, stage)
    mean = dataset_channel_mean([rec.pixels for rec, _, _ in samples])

    params = build_backbone(TOY, taxonomy.count, dual_branch=dual,
                            rng_seed=rng_seed, branch_hidden=branch_hidden)
    new_p = dict(params.parameters)
    new_p["input_mean"] = mean
    params = NetworkParams(new_p, params.architecture_id)

    shuffle_rng = np.random.default_rng(np.random.SeedSequence((rng_seed, 0)))
    velocity = {}
    order = []
    sample_counter = 0
    log_rows = []
    crop = config.crop_size

    for it in range(1, total_iters + 1):
        lr = _lr_at(it, total_iters, config.learning_rate, config.lr_drop_factor)
        batch_x = np.empty((config.batch_size, 3, crop, crop), dtype=np.float32)
        batch_masks = []
        batch_labels = []
        for b in range(config.batch_size):
            if not order:
                order = list(shuffle_rng.permutation(len(samples)))
            rec, mask, label_vec = samples[order.pop(0)]
            aug = np.random.default_rng(
                np.random.SeedSequence((rng_seed, 1, sample_counter)))
            sample_counter += 1
            rec_c, mask_c = random_crop_pair(rec, mask, crop, aug, pad_rgb=mean)
            px = rec_c.pixels
            lab = mask_c.labels
            if config.hflip and aug.random() < 0.5:
                px = px[:, ::-1]
                lab = lab[:, ::-1]
            batch_x[b] = (px.astype(np.float32) - mean).transpose(2, 0, 1)
            batch_masks.append(lab)
            batch_labels.append(label_vec)

        logits, branch_logits, cache = batch_forward(params, batch_x, train=True)
        n, C, ho, wo = logits.shape
        dlogits = np.zeros_like(logits)
        seg_sum = 0.0
        for b in range(n):
            small = nearest_resize(batch_masks[b], ho, wo)
            if not (small != IGNORE).any():
                continue  # fully padded crop carries no supervision
            sm = ScoreMap(logits[b].transpose(1, 2, 0).astype(np.float64), "logits")
            seg, grad = softmax_nll_loss(sm, Mask(small))
            seg_sum += seg
            dlogits[b] = grad.transpose(2, 0, 1).astype(logits.dtype)

        ml_sum = 0.0
        dbranch = None
        if dual:
            dbranch = np.zeros_like(branch_logits)
            for b in range(n):
                ml, gml = multilabel_bce_loss(
                    MultiLabelScores(branch_logits[b].astype(np.float64)),
                    batch_labels[b])
                ml_sum += ml
                dbranch[b] = (config.lambda_balance * gml).astype(branch_logits.dtype)

        grads = batch_backward(params, cache, dlogits, dbranch)
        params, velocity = sgd_step(params, grads, lr, config.momentum,
                                    config.weight_decay, velocity)

        seg_mean = seg_sum / n
        ml_mean = ml_sum / n
        log_rows.append((it, seg_mean, ml_mean,
                         seg_mean + config.lambda_balance * ml_mean, lr))
        if checkpoint_dir and it % config.checkpoint_every == 0:
            save_checkpoint(params, Path(checkpoint_dir) / f"iter{it:06d}.npz")

    if log_csv:
        write_training_log(log_rows, log_csv)
    return params, log_rows


def write_training_log(rows, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "seg_loss", "multilabel_loss", "combined", "lr"])
        for row in rows:
            w.writerow([row[0], repr(row[1]), repr(row[2]), repr(row[3]), repr(row[4])])
