"""Shared helpers for the test suite."""

import numpy as np
import pytest

from restyleadv.core import Video


def make_video(t=2, h=8, w=8, seed=0):
    rng = np.random.default_rng(seed)
    return Video(rng.uniform(0.0, 1.0, size=(t, h, w, 3)))


def strip_regions(areas):
    """Disjoint masks laid out on a 1 x sum(areas) strip, one per area."""
    from restyleadv.segmentation import RegionSet

    total = int(sum(areas))
    masks = []
    start = 0
    for a in areas:
        m = np.zeros((1, total), dtype=bool)
        m[0, start:start + a] = True
        masks.append(m)
        start += a
    return RegionSet(masks, list(range(len(areas))))


@pytest.fixture
def rng():
    return np.random.default_rng(0)
