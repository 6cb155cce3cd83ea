"""Group mask sources and the foreground-fraction filter.

Two interchangeable sources produce binary foreground masks for a class
group: OracleSource reads sidecar ground truth (synthetic benchmark, tests)
and ConsensusBaseline is a deliberately simple color-consensus stand-in for
a real co-segmentation method: a centered prior box seeds a group-pooled
foreground/background color-histogram model which is refined by a few rounds
of per-pixel reassignment, then cleaned up to the largest connected
component. It is an approximation, not a faithful reimplementation of any
published co-segmentation algorithm.
"""

import dataclasses
import warnings
from pathlib import Path

import numpy as np
from scipy import ndimage

from .core import (IGNORE, SOURCE_RETRIEVED, ClassTaxonomy, DatasetManifest,
                   ImageRecord, ManifestEntry, Mask, read_image, read_mask,
                   write_mask)
from .ingest import ClassGroup


@dataclasses.dataclass(frozen=True)
class GroupMaskResult:
    """Binary foreground mask for one group image plus its exact fg fraction."""

    image_id: str
    binary_mask: np.ndarray
    fg_fraction: float

    def __post_init__(self):
        m = np.asarray(self.binary_mask, dtype=np.uint8)
        if m.ndim != 2:
            raise ValueError("binary mask must be HxW")
        if not np.isin(m, (0, 1)).all():
            raise ValueError("binary mask values must be 0 or 1")
        object.__setattr__(self, "binary_mask", m)
        expect = foreground_fraction(m)
        if self.fg_fraction != expect:
            raise ValueError(f"fg_fraction {self.fg_fraction} does not match "
                             f"mask ({expect})")

    @classmethod
    def from_mask(cls, image_id: str, binary_mask: np.ndarray) -> "GroupMaskResult":
        m = np.asarray(binary_mask, dtype=np.uint8)
        return cls(image_id, m, foreground_fraction(m))


def foreground_fraction(mask: np.ndarray) -> float:
    """Exact ratio of foreground (nonzero) pixels to total pixels."""
    m = np.asarray(mask)
    if m.ndim != 2:
        raise ValueError("binary mask must be HxW")
    return int(np.count_nonzero(m)) / m.size


def filter_by_foreground(results, fg_min: float, fg_max: float):
    """Keep results whose fraction lies in [fg_min, fg_max], bounds inclusive."""
    if not 0 <= fg_min < fg_max <= 1:
        raise ValueError(f"bad foreground band [{fg_min}, {fg_max}]")
    return [r for r in results if fg_min <= r.fg_fraction <= fg_max]


def binary_to_class_mask(result: GroupMaskResult, class_index: int) -> Mask:
    """Relabel foreground as class_index over a background of zeros."""
    if class_index == ClassTaxonomy.background_index:
        raise ValueError("cannot relabel foreground as the background class")
    if not 0 < class_index < IGNORE:
        raise ValueError(f"bad class index {class_index}")
    return Mask((result.binary_mask * class_index).astype(np.uint8))


class OracleSource:
    """Reads per-image sidecar masks `<image-id>.mask.png` (255 = foreground)."""

    def __init__(self, sidecar_dir):
        self.sidecar_dir = Path(sidecar_dir)

    def cosegment_group(self, group: ClassGroup):
        if not group.records:
            raise ValueError("cannot cosegment an empty group")
        out = []
        for rec in group.records:
            path = self.sidecar_dir / f"{rec.id}.mask.png"
            if not path.exists():
                raise FileNotFoundError(f"no sidecar mask for {rec.id!r} "
                                        f"(expected {path})")
            raw = read_mask(path).labels
            if not np.isin(raw, (0, 255)).all():
                raise ValueError(f"sidecar {path} is not a 0/255 binary mask")
            if raw.shape != rec.pixels.shape[:2]:
                raise ValueError(f"sidecar {path} shape {raw.shape} does not "
                                 f"match image {rec.pixels.shape[:2]}")
            out.append(GroupMaskResult.from_mask(rec.id, raw == 255))
        return out


class ConsensusBaseline:
    """Group color-consensus foreground extraction.

    Every image seeds its foreground with a centered box covering
    prior_fraction of each side; fg/bg color histograms (bins per channel)
    are pooled over the whole group, each pixel is reassigned to the likelier
    model, and the loop repeats for `rounds`. The final mask keeps only the
    largest 4-connected foreground component.
    """

    def __init__(self, rounds: int = 5, bins: int = 32,
                 prior_fraction: float = 0.6, smoothing: float = 1.0):
        if rounds < 1 or bins < 2 or not 0 < prior_fraction < 1:
            raise ValueError("bad consensus parameters")
        self.rounds = rounds
        self.bins = bins
        self.prior_fraction = prior_fraction
        self.smoothing = smoothing

    def _binned(self, pixels: np.ndarray) -> np.ndarray:
        step = 256 / self.bins
        return np.minimum((pixels / step).astype(np.intp), self.bins - 1)

    def _log_model(self, binned_list, fg_list, want_fg: bool) -> np.ndarray:
        counts = np.zeros((3, self.bins), dtype=np.float64)
        for binned, fg in zip(binned_list, fg_list):
            sel = fg if want_fg else ~fg
            for c in range(3):
                counts[c] += np.bincount(binned[:, :, c][sel].ravel(),
                                         minlength=self.bins)
        counts += self.smoothing
        return np.log(counts / counts.sum(axis=1, keepdims=True))

    def cosegment_group(self, group: ClassGroup):
        if not group.records:
            raise ValueError("cannot cosegment an empty group")
        binned_list = [self._binned(r.pixels) for r in group.records]
        fg_list = []
        for rec in group.records:
            h, w = rec.pixels.shape[:2]
            lo = (1 - self.prior_fraction) / 2
            hi = 1 - lo
            fg = np.zeros((h, w), dtype=bool)
            fg[int(round(lo * h)):int(round(hi * h)),
               int(round(lo * w)):int(round(hi * w))] = True
            fg_list.append(fg)

        for _ in range(self.rounds):
            log_fg = self._log_model(binned_list, fg_list, True)
            log_bg = self._log_model(binned_list, fg_list, False)
            fg_list = [
                (log_fg[0][b[:, :, 0]] + log_fg[1][b[:, :, 1]] + log_fg[2][b[:, :, 2]])
                > (log_bg[0][b[:, :, 0]] + log_bg[1][b[:, :, 1]] + log_bg[2][b[:, :, 2]])
                for b in binned_list
            ]

        out = []
        for rec, fg in zip(group.records, fg_list):
            out.append(GroupMaskResult.from_mask(rec.id, _largest_component(fg)))
        return out


def _largest_component(fg: np.ndarray) -> np.ndarray:
    if not fg.any():
        return np.zeros_like(fg, dtype=np.uint8)
    labeled, n = ndimage.label(fg)
    sizes = np.bincount(labeled.ravel())
    sizes[0] = 0  # slot 0 is background
    return (labeled == sizes.argmax()).astype(np.uint8)


def cosegment_manifest(manifest: DatasetManifest, source, fg_min: float,
                       fg_max: float, out_dir, taxonomy: ClassTaxonomy,
                       loader=None) -> DatasetManifest:
    """Run a mask source over a retrieved manifest, filter, and materialize.

    Entries are grouped by their single class label, cosegmented per group,
    foreground-filtered, relabeled to class masks, and written to out_dir.
    The returned manifest pairs the surviving images with their masks.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    by_class = {}
    entry_by_id = {}
    for e in manifest.entries:
        if not e.label_indices or len(e.label_indices) != 1:
            raise ValueError(f"retrieved entry {e.image_path} must have "
                             f"exactly one class label")
        cls = e.label_indices[0]
        if not 0 < cls < taxonomy.count:
            raise ValueError(f"entry {e.image_path} has class index {cls} "
                             f"outside the taxonomy")
        rec = ImageRecord(id=Path(e.image_path).stem,
                          pixels=read_image(manifest.resolve(e.image_path)),
                          source=SOURCE_RETRIEVED, query_class=cls)
        by_class.setdefault(cls, []).append(rec)
        entry_by_id[rec.id] = e
    entries = []
    dropped = 0
    for cls in sorted(by_class):
        group = ClassGroup(class_index=cls, records=tuple(by_class[cls]))
        results = source.cosegment_group(group)
        kept = filter_by_foreground(results, fg_min, fg_max)
        dropped += len(results) - len(kept)
        for res in kept:
            mask = binary_to_class_mask(res, cls)
            mask_name = f"{res.image_id}.png"
            write_mask(mask, out_dir / mask_name)
            src = entry_by_id[res.image_id]
            entries.append(ManifestEntry(
                image_path=str(manifest.resolve(src.image_path).resolve()),
                mask_path=mask_name, label_indices=src.label_indices))
    if dropped:
        warnings.warn(f"foreground filter dropped {dropped} mask(s)")
    return DatasetManifest(entries=tuple(entries), split="train", root=out_dir)
