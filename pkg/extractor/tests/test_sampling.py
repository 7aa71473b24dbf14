import math

import numpy as np

from patchfeat.sampling import _overlaps, sample_patches


def test_patches_respect_ring_and_image():
    rng = np.random.default_rng(1)
    entity = (40.0, 40.0, 20.0, 20.0)
    radius = 0.5 * math.hypot(20, 20)
    cx, cy = 50.0, 50.0
    boxes = sample_patches(entity, 100, 100, 50, (0.5, 1.0), rng)
    assert boxes
    for px, py, pw, ph in boxes:
        assert px >= 0 and py >= 0 and px + pw <= 100 and py + ph <= 100
        assert 0.5 * 20 <= pw <= 20 and 0.5 * 20 <= ph <= 20
        dist = math.hypot(px + pw / 2 - cx, py + ph / 2 - cy)
        assert 0.5 * radius - 1e-9 <= dist <= 1.5 * radius + 1e-9
        assert not _overlaps((px, py, pw, ph), entity)


def test_whole_image_entity_yields_no_patches():
    rng = np.random.default_rng(2)
    assert sample_patches((0.0, 0.0, 100.0, 100.0), 100, 100, 5, (0.5, 1.0), rng) == []


def test_sampling_deterministic():
    entity = (10.0, 10.0, 12.0, 8.0)
    a = sample_patches(entity, 64, 64, 4, (0.5, 1.0), np.random.default_rng(7))
    b = sample_patches(entity, 64, 64, 4, (0.5, 1.0), np.random.default_rng(7))
    assert a == b


def test_overlap_predicate():
    assert _overlaps((0, 0, 10, 10), (5, 5, 10, 10))
    assert not _overlaps((0, 0, 10, 10), (10, 0, 5, 5))  # touching edges don't overlap
    assert not _overlaps((0, 0, 4, 4), (5, 5, 2, 2))
