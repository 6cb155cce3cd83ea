import numpy as np
import pytest

from wss.core import ClassTaxonomy, ImageRecord, Mask


@pytest.fixture
def taxonomy4():
    return ClassTaxonomy(("background", "disk", "square", "triangle"))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_image(rng, h=24, w=32, **kwargs):
    px = rng.integers(0, 256, (h, w, 3), dtype=np.uint8)
    return ImageRecord(id=kwargs.pop("id", "img"), pixels=px, **kwargs)


def random_mask(rng, h=24, w=32, num_classes=4, ignore_frac=0.0):
    lab = rng.integers(0, num_classes, (h, w)).astype(np.uint8)
    if ignore_frac > 0:
        lab[rng.random((h, w)) < ignore_frac] = 255
    return Mask(lab)
