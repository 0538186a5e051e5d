import numpy as np

from ehpi_action.ehpi import Ehpi, normalize


def random_raw_ehpi(rng, p_absent=0.1, leading_empty=0):
    values = np.zeros((32, 15, 3))
    values[..., 0] = rng.uniform(0, 1280, (32, 15))
    values[..., 1] = rng.uniform(0, 720, (32, 15))
    present = rng.random((32, 15)) >= p_absent
    present[:leading_empty] = False
    present[-1, 0] = True
    values[~present] = 0.0
    return Ehpi(values, present)


def random_ehpi(rng, **kw):
    return normalize(random_raw_ehpi(rng, **kw))
