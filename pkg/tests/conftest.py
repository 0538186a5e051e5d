import numpy as np
import pytest

from ehpi_action.pose_core import Skeleton


def make_skeleton(xy, scores=1.0):
    xy = np.asarray(xy, dtype=float).reshape(15, 2)
    s = np.broadcast_to(np.asarray(scores, dtype=float), (15,))
    return Skeleton(np.column_stack([xy, s]))


def random_skeleton(rng, center=(200.0, 200.0), size=100.0, p_missing=0.0):
    xy = np.asarray(center) + rng.uniform(-size / 2, size / 2, (15, 2))
    scores = rng.uniform(0.5, 1.0, 15)
    scores[rng.random(15) < p_missing] = rng.uniform(0.0, 0.39)
    return Skeleton(np.column_stack([xy, scores]))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
