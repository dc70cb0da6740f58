import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from range_al.projection import IGNORE, RangeImage, SensorConfig
from range_al.uncertainty import McProbTensor


def random_prob_tensor(gen, height=None, width=None, num_classes=None, mc_iterations=None):
    """Random valid McProbTensor with Dirichlet-ish rows."""
    h = int(gen.integers(1, 17)) if height is None else height
    w = int(gen.integers(1, 17)) if width is None else width
    c = int(gen.integers(2, 6)) if num_classes is None else num_classes
    t = int(gen.integers(1, 9)) if mc_iterations is None else mc_iterations
    raw = gen.random((h, w, c, t)) + 1e-3
    probs = (raw / raw.sum(axis=2, keepdims=True)).astype(np.float32)
    valid = gen.random((h, w)) < 0.9
    return McProbTensor(probs=probs, valid=valid)


def tensor_from_slices(slices, valid=None):
    """1x1 pixel tensor from a list of per-pass probability vectors.

    Kept in float64 so analytic fixtures (ln C, 0.25, ...) are exact.
    """
    arr = np.array(slices, dtype=np.float64).T  # (C, T)
    probs = arr[None, None, :, :]
    v = np.ones((1, 1), dtype=bool) if valid is None else valid
    return McProbTensor(probs=probs, valid=v)


def checkerboard_image(height=8, width=8, classes=(0, 1), r_value=5.0):
    """Small dense RangeImage with alternating labels."""
    img = RangeImage(
        channels=np.zeros((height, width, 4), dtype=np.float32),
        labels=np.full((height, width), IGNORE, dtype=np.int32),
        valid=np.ones((height, width), dtype=bool),
        point_index=np.arange(height * width, dtype=np.int32).reshape(height, width),
        instance=np.zeros((height, width), dtype=np.int32),
    )
    vv, uu = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
    img.labels = np.where((vv + uu) % 2 == 0, classes[0], classes[1]).astype(np.int32)
    img.channels[..., 0] = 1.0
    img.channels[..., 2] = r_value
    img.channels[..., 3] = np.where(img.labels == classes[0], 0.2, 0.8)
    return img


@pytest.fixture
def gen():
    return np.random.default_rng(42)
