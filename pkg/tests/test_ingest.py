"""Fetchers, corpus construction, and target preparation."""

import numpy as np
import pytest

from wss.config import PipelineConfig
from wss.core import (SOURCE_RETRIEVED, DatasetManifest, ImageRecord,
                      ManifestEntry, Mask, load_manifest, read_image,
                      read_mask, write_image, write_mask)
from wss.ingest import (ClassGroup, DirectoryFetcher, FetchRequest,
                        UrlListFetcher, build_retrieved_corpus,
                        fetch_class_images, group_from_files,
                        prepare_target_images)


def _write_images(rng, folder, names, size=(20, 30)):
    folder.mkdir(parents=True, exist_ok=True)
    for name in names:
        write_image(rng.integers(0, 256, (*size, 3), dtype=np.uint8),
                    folder / name)


class TestFetchRequest:
    def test_rejects_empty_query(self, tmp_path):
        with pytest.raises(ValueError, match="query"):
            FetchRequest(query="", max_results=5, destination=tmp_path)

    def test_rejects_nonpositive_max_results(self, tmp_path):
        with pytest.raises(ValueError, match="max_results"):
            FetchRequest(query="disk", max_results=0, destination=tmp_path)


class TestClassGroup:
    def test_rejects_background_group(self):
        with pytest.raises(ValueError, match="background"):
            ClassGroup(class_index=0, records=())

    def test_rejects_records_of_other_classes(self, rng):
        rec = ImageRecord("x", rng.integers(0, 256, (8, 8, 3), dtype=np.uint8),
                          source=SOURCE_RETRIEVED, query_class=2)
        with pytest.raises(ValueError, match="belong"):
            ClassGroup(class_index=1, records=(rec,))


class TestDirectoryFetcher:
    def test_candidates_are_sorted_images_only(self, rng, tmp_path):
        _write_images(rng, tmp_path / "src", ["b.png", "a.png", "c.jpg"])
        (tmp_path / "src" / "notes.txt").write_text("not an image")
        fetcher = DirectoryFetcher(tmp_path / "src")
        req = FetchRequest("disk", 10, tmp_path / "dst")
        names = [p.name for p in fetcher.candidates(req)]
        assert names == ["a.png", "b.png", "c.jpg"]

    def test_missing_directory(self, tmp_path):
        fetcher = DirectoryFetcher(tmp_path / "nope")
        with pytest.raises(ValueError, match="not a directory"):
            fetcher.candidates(FetchRequest("disk", 1, tmp_path))


class TestFetchClassImages:
    def test_truncates_to_max_results(self, rng, tmp_path):
        _write_images(rng, tmp_path / "src",
                      [f"im_{i}.png" for i in range(6)])
        req = FetchRequest("disk", 4, tmp_path / "dst")
        files = fetch_class_images(req, DirectoryFetcher(tmp_path / "src"))
        assert len(files) == 4
        assert all(f.exists() for f in files)

    def test_preserves_source_basenames(self, rng, tmp_path):
        _write_images(rng, tmp_path / "src", ["apple.png", "pear.png"])
        req = FetchRequest("disk", 10, tmp_path / "dst")
        files = fetch_class_images(req, DirectoryFetcher(tmp_path / "src"))
        assert sorted(f.name for f in files) == ["apple.png", "pear.png"]

    def test_corrupt_files_are_skipped_with_warning(self, rng, tmp_path):
        _write_images(rng, tmp_path / "src", ["good_a.png", "good_b.png"])
        (tmp_path / "src" / "broken.png").write_bytes(b"not a png at all")
        req = FetchRequest("disk", 10, tmp_path / "dst")
        with pytest.warns(UserWarning, match="skipping"):
            files = fetch_class_images(req, DirectoryFetcher(tmp_path / "src"))
        assert sorted(f.name for f in files) == ["good_a.png", "good_b.png"]
        assert not (tmp_path / "dst" / "broken.png").exists()

    def test_basename_collisions_get_suffixes(self, rng, tmp_path):
        _write_images(rng, tmp_path / "a", ["same.png"])
        _write_images(rng, tmp_path / "b", ["same.png"])
        urls = tmp_path / "urls.txt"
        urls.write_text(f"# crawl list\nfile://{tmp_path}/a/same.png\n\n"
                        f"file://{tmp_path}/b/same.png\n", encoding="utf-8")
        req = FetchRequest("disk", 10, tmp_path / "dst")
        files = fetch_class_images(req, UrlListFetcher(urls))
        assert len(files) == 2
        assert files[0].name == "same.png"
        assert files[1].name == "same_00001.png"

    def test_unreachable_urls_are_skipped(self, rng, tmp_path):
        _write_images(rng, tmp_path / "a", ["ok.png"])
        urls = tmp_path / "urls.txt"
        urls.write_text(f"file://{tmp_path}/missing.png\n"
                        f"file://{tmp_path}/a/ok.png\n", encoding="utf-8")
        req = FetchRequest("disk", 10, tmp_path / "dst")
        with pytest.warns(UserWarning, match="skipping"):
            files = fetch_class_images(req, UrlListFetcher(urls))
        assert [f.name for f in files] == ["ok.png"]


class TestGroupFromFiles:
    def test_builds_records_with_stem_ids(self, rng, tmp_path, taxonomy4):
        _write_images(rng, tmp_path, ["one.png", "two.png"])
        group = group_from_files(2, [tmp_path / "one.png",
                                     tmp_path / "two.png"], taxonomy4)
        assert group.class_index == 2
        assert [r.id for r in group.records] == ["one", "two"]
        assert all(r.query_class == 2 for r in group.records)

    def test_rejects_background_or_out_of_range(self, tmp_path, taxonomy4):
        with pytest.raises(ValueError, match="class index"):
            group_from_files(0, [], taxonomy4)
        with pytest.raises(ValueError, match="class index"):
            group_from_files(9, [], taxonomy4)


class TestBuildRetrievedCorpus:
    def _group(self, rng, cls, ids, size):
        records = tuple(
            ImageRecord(id, rng.integers(0, 256, (*size, 3), dtype=np.uint8),
                        source=SOURCE_RETRIEVED, query_class=cls)
            for id in ids)
        return ClassGroup(class_index=cls, records=records)

    def test_resizes_orders_and_labels(self, rng, tmp_path, taxonomy4):
        config = PipelineConfig(retrieved_max_dim=24)
        groups = [self._group(rng, 2, ["zz", "aa"], (48, 36)),
                  self._group(rng, 1, ["mm"], (10, 12))]
        manifest = build_retrieved_corpus(groups, config, tmp_path / "corpus")
        assert [e.image_path for e in manifest.entries] == \
            ["mm.png", "aa.png", "zz.png"]
        assert [e.label_indices for e in manifest.entries] == \
            [(1,), (2,), (2,)]
        big = read_image(manifest.resolve("aa.png"))
        assert big.shape == (24, 18, 3)  # longest side capped
        small = read_image(manifest.resolve("mm.png"))
        assert small.shape == (10, 12, 3)  # never upscaled
        # round-trips through manifest io
        from wss.core import write_manifest
        write_manifest(manifest, tmp_path / "corpus" / "manifest.tsv",
                       taxonomy4)
        again = load_manifest(tmp_path / "corpus" / "manifest.tsv", taxonomy4)
        assert [e.image_path for e in again.entries] == \
            [e.image_path for e in manifest.entries]

    def test_empty_groups_are_dropped_with_warning(self, rng, tmp_path):
        groups = [ClassGroup(class_index=1, records=()),
                  self._group(rng, 2, ["x"], (12, 12))]
        with pytest.warns(UserWarning, match="empty"):
            manifest = build_retrieved_corpus(groups, PipelineConfig(),
                                              tmp_path / "corpus")
        assert len(manifest) == 1

    def test_deterministic_output_bytes(self, rng, tmp_path):
        groups = [self._group(rng, 1, ["p", "q"], (40, 30))]
        a = build_retrieved_corpus(groups, PipelineConfig(retrieved_max_dim=20),
                                   tmp_path / "one")
        b = build_retrieved_corpus(groups, PipelineConfig(retrieved_max_dim=20),
                                   tmp_path / "two")
        for e in a.entries:
            assert (a.resolve(e.image_path).read_bytes() ==
                    b.resolve(e.image_path).read_bytes())


class TestPrepareTargetImages:
    def test_resizes_images_and_masks_consistently(self, rng, tmp_path):
        src = tmp_path / "raw"
        src.mkdir()
        write_image(rng.integers(0, 256, (60, 40, 3), dtype=np.uint8),
                    src / "t0.png")
        write_mask(Mask(rng.integers(0, 3, (60, 40)).astype(np.uint8)),
                   src / "t0.mask.png")
        manifest = DatasetManifest(entries=(ManifestEntry(
            image_path="t0.png", mask_path="t0.mask.png",
            label_indices=(1, 2)),), root=src)
        out = prepare_target_images(manifest, PipelineConfig(target_max_dim=30),
                                    tmp_path / "prep")
        img = read_image(out.resolve(out.entries[0].image_path))
        mask = read_mask(out.resolve(out.entries[0].mask_path))
        assert img.shape == (30, 20, 3)
        assert mask.shape == (30, 20)
        assert out.entries[0].label_indices == (1, 2)

    def test_entries_without_masks_stay_maskless(self, rng, tmp_path):
        src = tmp_path / "raw"
        src.mkdir()
        write_image(rng.integers(0, 256, (20, 20, 3), dtype=np.uint8),
                    src / "t1.png")
        manifest = DatasetManifest(entries=(ManifestEntry(
            image_path="t1.png", label_indices=(1,)),), root=src)
        out = prepare_target_images(manifest, PipelineConfig(),
                                    tmp_path / "prep")
        assert out.entries[0].mask_path is None
