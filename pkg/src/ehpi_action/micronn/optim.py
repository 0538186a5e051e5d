from __future__ import annotations

import math

import numpy as np

from ..errors import EmptyClass


def sgd_step(params, grads, velocity, lr, momentum=0.9, weight_decay=0.0, decay_mask=None):
    """In-place SGD with momentum and L2 weight decay.

    v <- momentum * v + (grad + wd * param);  param <- param - lr * v.
    Parameters whose ``decay_mask`` entry is False skip the decay term.
    ``velocity`` entries are created on first use.
    """
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} does not match {name} {p.shape}")
        if weight_decay and (decay_mask is None or decay_mask.get(name, True)):
            g = g + weight_decay * p
        v = velocity.get(name)
        if v is None:
            v = velocity[name] = np.zeros_like(p)
        v *= momentum
        v += g
        p -= lr * v


def lr_at_epoch(epoch: int, lr0: float, step: int, gamma: float) -> float:
    """Step schedule with 0-based epochs: lr0 * gamma ** (epoch // step)."""
    return lr0 * gamma ** math.floor(epoch / step)


def balanced_sampler(labels, rng: np.random.Generator, num_classes: int | None = None) -> np.ndarray:
    """One epoch of sample indices with every class equally represented.

    Each class contributes K indices, K being the size of the largest class.
    Smaller classes cycle through shuffled copies of their samples. The
    combined sequence is shuffled.
    """
    labels = np.asarray(labels)
    classes = np.arange(num_classes) if num_classes is not None else np.unique(labels)
    members = [np.flatnonzero(labels == c) for c in classes]
    empty = [int(c) for c, m in zip(classes, members) if len(m) == 0]
    if empty or len(members) == 0:
        raise EmptyClass(f"classes without samples: {empty}")
    k = max(len(m) for m in members)
    picks = []
    for m in members:
        reps = -(-k // len(m))
        picks.append(np.concatenate([rng.permutation(m) for _ in range(reps)])[:k])
    return rng.permutation(np.concatenate(picks))
