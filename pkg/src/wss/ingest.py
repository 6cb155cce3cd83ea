"""Retrieved-corpus construction: pluggable fetchers plus resize/normalize.

Fetchers only move bytes; anything that fails to decode as an image is
skipped with a warning so one bad file never sinks a batch. Tests and the
synthetic benchmark use DirectoryFetcher, which keeps the suite hermetic;
UrlListFetcher covers real crawl lists (file:// URLs work offline).
"""

import dataclasses
import shutil
import urllib.parse
import urllib.request
import warnings
from pathlib import Path

from .config import PipelineConfig
from .core import (SOURCE_RETRIEVED, ClassTaxonomy, DatasetManifest,
                   ImageRecord, ManifestEntry, read_image, read_mask,
                   resize_max_dim, write_image, write_mask)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".gif")


@dataclasses.dataclass(frozen=True)
class FetchRequest:
    """One class-name query; the query must name a foreground taxonomy class."""

    query: str
    max_results: int
    destination: Path

    def __post_init__(self):
        object.__setattr__(self, "destination", Path(self.destination))
        if not self.query:
            raise ValueError("empty query")
        if self.max_results < 1:
            raise ValueError("max_results must be >= 1")


@dataclasses.dataclass(frozen=True)
class ClassGroup:
    """All retrieved images fetched for one foreground class."""

    class_index: int
    records: tuple

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        if self.class_index == ClassTaxonomy.background_index:
            raise ValueError("a class group cannot be the background class")
        for r in self.records:
            if r.source != SOURCE_RETRIEVED or r.query_class != self.class_index:
                raise ValueError(f"record {r.id!r} does not belong to class "
                                 f"{self.class_index}")


class DirectoryFetcher:
    """Copies images out of a local folder, in sorted filename order."""

    def __init__(self, src_dir):
        self.src_dir = Path(src_dir)

    def candidates(self, request: FetchRequest):
        if not self.src_dir.is_dir():
            raise ValueError(f"{self.src_dir} is not a directory")
        return sorted(p for p in self.src_dir.iterdir()
                      if p.suffix.lower() in IMAGE_SUFFIXES)

    def retrieve(self, candidate: Path, dest: Path):
        shutil.copyfile(candidate, dest)

    @staticmethod
    def name_for(candidate: Path) -> str:
        return candidate.name


class UrlListFetcher:
    """Fetches each URL from a text file (one per line, # comments allowed)."""

    def __init__(self, url_file):
        lines = Path(url_file).read_text(encoding="utf-8").splitlines()
        self.urls = [ln.strip() for ln in lines
                     if ln.strip() and not ln.lstrip().startswith("#")]

    def candidates(self, request: FetchRequest):
        return list(self.urls)

    def retrieve(self, candidate: str, dest: Path):
        with urllib.request.urlopen(candidate) as resp:
            dest.write_bytes(resp.read())

    @staticmethod
    def name_for(candidate: str) -> str:
        name = Path(urllib.parse.urlparse(candidate).path).name
        return name or "download"


def fetch_class_images(request: FetchRequest, fetcher) -> list:
    """Fetch up to max_results decodable images into request.destination.

    Transport failures and corrupt files are warned about and skipped, never
    fatal. Returns the list of written file paths.
    """
    request.destination.mkdir(parents=True, exist_ok=True)
    fetched = []
    for i, cand in enumerate(fetcher.candidates(request)):
        if len(fetched) >= request.max_results:
            break
        name = fetcher.name_for(cand)
        # keep the source basename so sidecar files stay matchable by stem
        dest = request.destination / name
        if dest.exists():
            dest = request.destination / f"{Path(name).stem}_{i:05d}{Path(name).suffix}"
        try:
            fetcher.retrieve(cand, dest)
            read_image(dest)  # decodability check; content is not kept here
        except Exception as exc:
            warnings.warn(f"skipping {cand}: {exc}")
            dest.unlink(missing_ok=True)
            continue
        fetched.append(dest)
    return fetched


def group_from_files(class_index: int, files, taxonomy: ClassTaxonomy) -> ClassGroup:
    """Load fetched files into a ClassGroup (decode failures already filtered)."""
    if not 0 < class_index < taxonomy.count:
        raise ValueError(f"bad foreground class index {class_index}")
    records = tuple(
        ImageRecord(id=Path(f).stem, pixels=read_image(f),
                    source=SOURCE_RETRIEVED, query_class=class_index)
        for f in files)
    return ClassGroup(class_index=class_index, records=records)


def build_retrieved_corpus(groups, config: PipelineConfig, out_dir) -> DatasetManifest:
    """Resize every group image to the retrieved max dimension and manifest it.

    Entries carry the query class as the sole image-level label. Order is
    deterministic: ascending class index, then record id. Empty groups are
    dropped with a warning.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for group in sorted(groups, key=lambda g: g.class_index):
        if not group.records:
            warnings.warn(f"class group {group.class_index} is empty; dropped")
            continue
        for rec in sorted(group.records, key=lambda r: r.id):
            resized, _ = resize_max_dim(rec, config.retrieved_max_dim)
            fname = f"{rec.id}.png"
            write_image(resized.pixels, out_dir / fname)
            entries.append(ManifestEntry(image_path=fname,
                                         label_indices=(group.class_index,)))
    return DatasetManifest(entries=tuple(entries), split="train", root=out_dir)


def prepare_target_images(manifest: DatasetManifest, config: PipelineConfig,
                          out_dir) -> DatasetManifest:
    """Resize target images (and any masks) to the target max dimension."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for e in manifest.entries:
        rec = ImageRecord(id=Path(e.image_path).stem,
                          pixels=read_image(manifest.resolve(e.image_path)))
        mask = None
        if e.mask_path is not None:
            mask = read_mask(manifest.resolve(e.mask_path))
        resized, rmask = resize_max_dim(rec, config.target_max_dim, mask)
        img_name = f"{rec.id}.png"
        write_image(resized.pixels, out_dir / img_name)
        mask_name = None
        if rmask is not None:
            mask_name = f"{rec.id}.mask.png"
            write_mask(rmask, out_dir / mask_name)
        entries.append(ManifestEntry(image_path=img_name, mask_path=mask_name,
                                     label_indices=e.label_indices))
    return DatasetManifest(entries=tuple(entries), split=manifest.split,
                           root=out_dir)
