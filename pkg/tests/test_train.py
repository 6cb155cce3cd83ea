"""Training loop: determinism, schedules, stage wiring, logging."""

import csv

import numpy as np
import pytest

from wss.config import PipelineConfig
from wss.core import (DatasetManifest, ManifestEntry, Mask, write_image,
                      write_mask)
from wss.model import load_checkpoint
from wss.train import (STAGE_FINAL, STAGE_INITIAL, dataset_channel_mean,
                       train_stage, write_training_log)


def _tiny_config(iters, **overrides):
    base = dict(batch_size=2, crop_size=16, learning_rate=1e-3,
                stage1_iters=iters, stage2_iters=iters, checkpoint_every=2)
    base.update(overrides)
    return PipelineConfig(**base)


@pytest.fixture()
def dataset(rng, tmp_path, taxonomy4):
    """Four 24x24 images, each half background, half one foreground class."""
    entries = []
    for i in range(4):
        cls = 1 + i % 3
        px = rng.integers(60, 120, (24, 24, 3), dtype=np.uint8)
        px[:, 12:] = (200 if cls == 1 else 40, 200 if cls == 2 else 40,
                      200 if cls == 3 else 40)
        gt = np.zeros((24, 24), dtype=np.uint8)
        gt[:, 12:] = cls
        write_image(px, tmp_path / f"im_{i}.png")
        write_mask(Mask(gt), tmp_path / f"im_{i}.mask.png")
        entries.append(ManifestEntry(image_path=f"im_{i}.png",
                                     mask_path=f"im_{i}.mask.png",
                                     label_indices=(cls,)))
    return DatasetManifest(entries=tuple(entries), root=tmp_path)


class TestChannelMean:
    def test_hand_computed_mean(self):
        a = np.zeros((2, 2, 3), dtype=np.uint8)
        b = np.full((2, 2, 3), 100, dtype=np.uint8)
        mean = dataset_channel_mean([a, b])
        assert np.allclose(mean, 50.0)
        assert mean.dtype == np.float32

    def test_weighs_by_pixel_count(self):
        a = np.zeros((1, 1, 3), dtype=np.uint8)
        b = np.full((3, 1, 3), 40, dtype=np.uint8)
        assert np.allclose(dataset_channel_mean([a, b]), 30.0)

    def test_empty_dataset(self):
        with pytest.raises(ValueError, match="empty"):
            dataset_channel_mean([])


class TestTrainStage:
    def test_deterministic_given_seed(self, dataset, taxonomy4):
        cfg = _tiny_config(5)
        a, log_a = train_stage(dataset, cfg, STAGE_INITIAL, 3, taxonomy4)
        b, log_b = train_stage(dataset, cfg, STAGE_INITIAL, 3, taxonomy4)
        assert log_a == log_b
        for k in a.parameters:
            assert np.array_equal(a.parameters[k], b.parameters[k]), k

    def test_seed_changes_the_outcome(self, dataset, taxonomy4):
        cfg = _tiny_config(3)
        a, _ = train_stage(dataset, cfg, STAGE_INITIAL, 0, taxonomy4)
        b, _ = train_stage(dataset, cfg, STAGE_INITIAL, 1, taxonomy4)
        assert not np.array_equal(a.parameters["stem.w"],
                                  b.parameters["stem.w"])

    def test_stage_picks_architecture(self, dataset, taxonomy4):
        cfg = _tiny_config(2)
        initial, _ = train_stage(dataset, cfg, STAGE_INITIAL, 0, taxonomy4)
        final, _ = train_stage(dataset, cfg, STAGE_FINAL, 0, taxonomy4)
        assert not initial.dual_branch
        assert final.dual_branch
        assert initial.num_classes == final.num_classes == 4

    def test_branch_hidden_zero_final_model(self, dataset, taxonomy4):
        final, _ = train_stage(dataset, _tiny_config(2), STAGE_FINAL, 0,
                               taxonomy4, branch_hidden=0)
        assert "branch.fc1.w" not in final.parameters
        assert "branch.fc2.w" in final.parameters

    def test_input_mean_comes_from_the_dataset(self, dataset, taxonomy4):
        params, _ = train_stage(dataset, _tiny_config(1), STAGE_INITIAL, 0,
                                taxonomy4)
        import wss.core as core
        want = dataset_channel_mean(
            [core.read_image(dataset.resolve(e.image_path))
             for e in dataset.entries])
        assert np.array_equal(params.parameters["input_mean"], want)

    def test_zero_lambda_final_trains_the_same_trunk_as_initial(
            self, dataset, taxonomy4):
        """With the branch objective switched off, the shared trunk must
        follow exactly the path the single-branch stage takes."""
        cfg = _tiny_config(4, lambda_balance=0.0)
        initial, _ = train_stage(dataset, cfg, STAGE_INITIAL, 2, taxonomy4)
        final, _ = train_stage(dataset, cfg, STAGE_FINAL, 2, taxonomy4)
        for k, v in initial.parameters.items():
            assert np.array_equal(v, final.parameters[k]), k

    def test_positive_lambda_changes_the_trunk(self, dataset, taxonomy4):
        cfg0 = _tiny_config(4, lambda_balance=0.0)
        cfg1 = _tiny_config(4, lambda_balance=1.0)
        a, _ = train_stage(dataset, cfg0, STAGE_FINAL, 2, taxonomy4)
        b, _ = train_stage(dataset, cfg1, STAGE_FINAL, 2, taxonomy4)
        assert not np.array_equal(a.parameters["stem.w"],
                                  b.parameters["stem.w"])

    def test_learning_rate_drops_after_eighty_percent(self, dataset,
                                                      taxonomy4):
        cfg = _tiny_config(10, learning_rate=1e-3, lr_drop_factor=10.0)
        _, rows = train_stage(dataset, cfg, STAGE_INITIAL, 0, taxonomy4)
        lrs = [r[4] for r in rows]
        assert lrs == [1e-3] * 8 + [1e-4] * 2

    def test_log_rows_cover_every_iteration(self, dataset, taxonomy4):
        cfg = _tiny_config(6)
        _, rows = train_stage(dataset, cfg, STAGE_FINAL, 0, taxonomy4)
        assert [r[0] for r in rows] == list(range(1, 7))
        for _, seg, ml, combined, _ in rows:
            assert combined == seg + cfg.lambda_balance * ml
            assert ml > 0  # dual stage always scores the branch

    def test_initial_stage_has_no_multilabel_loss(self, dataset, taxonomy4):
        _, rows = train_stage(dataset, _tiny_config(3), STAGE_INITIAL, 0,
                              taxonomy4)
        assert all(r[2] == 0.0 for r in rows)

    def test_checkpoints_land_on_schedule(self, dataset, taxonomy4, tmp_path):
        ckpt = tmp_path / "ckpts"
        ckpt.mkdir()
        train_stage(dataset, _tiny_config(4), STAGE_INITIAL, 0, taxonomy4,
                    checkpoint_dir=ckpt)
        names = sorted(p.name for p in ckpt.glob("*.npz"))
        assert names == ["iter000002.npz", "iter000004.npz"]
        load_checkpoint(ckpt / "iter000004.npz")  # loadable

    def test_training_log_csv(self, dataset, taxonomy4, tmp_path):
        log = tmp_path / "log.csv"
        _, rows = train_stage(dataset, _tiny_config(3), STAGE_FINAL, 0,
                              taxonomy4, log_csv=log)
        with open(log, newline="", encoding="utf-8") as fh:
            parsed = list(csv.DictReader(fh))
        assert len(parsed) == 3
        for row, want in zip(parsed, rows):
            assert int(row["iteration"]) == want[0]
            assert float(row["seg_loss"]) == want[1]
            assert float(row["multilabel_loss"]) == want[2]
            assert float(row["combined"]) == want[3]
            assert float(row["lr"]) == want[4]


class TestValidation:
    def test_unknown_stage(self, dataset, taxonomy4):
        with pytest.raises(ValueError, match="unknown stage"):
            train_stage(dataset, _tiny_config(1), "warmup", 0, taxonomy4)

    def test_empty_manifest(self, taxonomy4, tmp_path):
        manifest = DatasetManifest(entries=(), root=tmp_path)
        with pytest.raises(ValueError, match="empty"):
            train_stage(manifest, _tiny_config(1), STAGE_INITIAL, 0,
                        taxonomy4)

    def test_missing_mask(self, rng, taxonomy4, tmp_path):
        write_image(rng.integers(0, 256, (16, 16, 3), dtype=np.uint8),
                    tmp_path / "x.png")
        manifest = DatasetManifest(
            entries=(ManifestEntry(image_path="x.png", label_indices=(1,)),),
            root=tmp_path)
        with pytest.raises(ValueError, match="needs a mask"):
            train_stage(manifest, _tiny_config(1), STAGE_INITIAL, 0,
                        taxonomy4)

    def test_final_stage_needs_labels(self, rng, taxonomy4, tmp_path):
        write_image(rng.integers(0, 256, (16, 16, 3), dtype=np.uint8),
                    tmp_path / "x.png")
        write_mask(Mask(np.zeros((16, 16), dtype=np.uint8)),
                   tmp_path / "x.mask.png")
        manifest = DatasetManifest(
            entries=(ManifestEntry(image_path="x.png",
                                   mask_path="x.mask.png"),),
            root=tmp_path)
        with pytest.raises(ValueError, match="image-level labels"):
            train_stage(manifest, _tiny_config(1), STAGE_FINAL, 0, taxonomy4)
        # the initial stage is happy without labels
        train_stage(manifest, _tiny_config(1), STAGE_INITIAL, 0, taxonomy4)

    def test_image_mask_shape_mismatch(self, rng, taxonomy4, tmp_path):
        write_image(rng.integers(0, 256, (16, 16, 3), dtype=np.uint8),
                    tmp_path / "x.png")
        write_mask(Mask(np.zeros((8, 8), dtype=np.uint8)),
                   tmp_path / "x.mask.png")
        manifest = DatasetManifest(
            entries=(ManifestEntry(image_path="x.png", mask_path="x.mask.png",
                                   label_indices=(1,)),),
            root=tmp_path)
        with pytest.raises(ValueError, match="mismatch"):
            train_stage(manifest, _tiny_config(1), STAGE_INITIAL, 0,
                        taxonomy4)


class TestTrainingLogWriter:
    def test_round_trips_full_precision(self, tmp_path):
        rows = [(1, 0.123456789012345678, 0.0, 0.123456789012345678, 1e-3)]
        path = tmp_path / "log.csv"
        write_training_log(rows, path)
        with open(path, newline="", encoding="utf-8") as fh:
            parsed = list(csv.DictReader(fh))
        assert float(parsed[0]["seg_loss"]) == rows[0][1]
