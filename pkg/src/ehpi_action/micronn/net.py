"""The six-layer EHPI classifier.

Layout: [conv-bn-relu] x2, maxpool, [conv-bn-relu] x2, maxpool,
[conv-bn-relu] x2, global average pool, fully connected. All convolutions
are 3x3 with stride 1 and padding 1, so a 32x15 input shrinks only at the
two pooling layers (32x15 -> 16x7 -> 8x3).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ops

INPUT_SHAPE = (3, 32, 15)
POOL_AFTER = (1, 3)


@dataclass(frozen=True)
class NetConfig:
    num_classes: int = 3
    channels: tuple[int, ...] = (64, 64, 128, 128, 256, 256)

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if len(self.channels) != 6:
            raise ValueError("the classifier has exactly six convolution layers")
        if self.num_classes < 2 or min(self.channels) < 1:
            raise ValueError("num_classes must be >= 2 and channel widths positive")


def parameter_count(cfg: NetConfig) -> int:
    total = 0
    c_in = INPUT_SHAPE[0]
    for c in cfg.channels:
        total += c_in * c * 9 + c  # conv weight + bias
        total += 2 * c  # batch norm scale + shift
        c_in = c
    return total + c_in * cfg.num_classes + cfg.num_classes


@dataclass
class EhpiNet:
    cfg: NetConfig
    params: dict[str, np.ndarray]
    buffers: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def create(cls, cfg: NetConfig, rng: np.random.Generator, dtype=np.float32) -> "EhpiNet":
        params: dict[str, np.ndarray] = {}
        buffers: dict[str, np.ndarray] = {}
        c_in = INPUT_SHAPE[0]
        for i, c in enumerate(cfg.channels):
            params[f"conv{i}.weight"] = ops.xavier_init((c, c_in, 3, 3), rng, dtype)
            params[f"conv{i}.bias"] = np.zeros(c, dtype)
            params[f"bn{i}.gamma"] = np.ones(c, dtype)
            params[f"bn{i}.beta"] = np.zeros(c, dtype)
            buffers[f"bn{i}.running_mean"] = np.zeros(c, dtype)
            buffers[f"bn{i}.running_var"] = np.ones(c, dtype)
            c_in = c
        params["fc.weight"] = ops.xavier_init((cfg.num_classes, c_in), rng, dtype)
        params["fc.bias"] = np.zeros(cfg.num_classes, dtype)
        return cls(cfg, params, buffers)

    @property
    def dtype(self):
        return self.params["fc.weight"].dtype

    def decay_mask(self) -> dict[str, bool]:
        """Weight decay applies to conv and fc weights only."""
        return {k: k.endswith(".weight") for k in self.params}

    def forward(self, x: np.ndarray, train: bool = False):
        """Logits for a (N, 3, 32, 15) batch.

        In train mode the batch statistics update the running buffers and the
        returned cache feeds :meth:`backward`.
        """
        if x.ndim != 4 or x.shape[1:] != INPUT_SHAPE:
            raise ValueError(f"expected (N, 3, 32, 15) input, got {x.shape}")
        h = np.ascontiguousarray(x.transpose(0, 2, 3, 1), dtype=self.dtype)
        caches = []
        p, b = self.params, self.buffers
        for i in range(len(self.cfg.channels)):
            h, c_conv = ops.conv2d_forward_nhwc(h, p[f"conv{i}.weight"], p[f"conv{i}.bias"])
            h, c_bn = ops.batchnorm_forward_nhwc(
                h, p[f"bn{i}.gamma"], p[f"bn{i}.beta"],
                b[f"bn{i}.running_mean"], b[f"bn{i}.running_var"], train,
            )
            h, c_relu = ops.relu_forward(h)
            c_pool = None
            if i in POOL_AFTER:
                h, c_pool = ops.maxpool2x2_forward_nhwc(h)
            caches.append((c_conv, c_bn, c_relu, c_pool))
        pooled_shape = h.shape
        feat = h.mean(axis=(1, 2))
        logits, c_fc = ops.linear_forward(feat, p["fc.weight"], p["fc.bias"])
        return logits, (caches, pooled_shape, c_fc)

    def backward(self, dlogits: np.ndarray, cache) -> dict[str, np.ndarray]:
        caches, pooled_shape, c_fc = cache
        grads: dict[str, np.ndarray] = {}
        dfeat, grads["fc.weight"], grads["fc.bias"] = ops.linear_backward(dlogits, c_fc)
        n, hh, ww, c = pooled_shape
        dh = np.broadcast_to((dfeat / (hh * ww))[:, None, None, :], pooled_shape)
        for i in range(len(self.cfg.channels) - 1, -1, -1):
            c_conv, c_bn, c_relu, c_pool = caches[i]
            if c_pool is not None:
                dh = ops.maxpool2x2_backward_nhwc(dh, c_pool)
            dh = ops.relu_backward(dh, c_relu)
            dh, grads[f"bn{i}.gamma"], grads[f"bn{i}.beta"] = ops.batchnorm_backward_nhwc(dh, c_bn)
            dh, grads[f"conv{i}.weight"], grads[f"conv{i}.bias"] = ops.conv2d_backward_nhwc(
                dh, c_conv, need_dx=i > 0
            )
        return grads

    def predict_proba(self, x: np.ndarray, chunk: int = 256) -> np.ndarray:
        """Eval-mode class probabilities, computed in chunks."""
        out = [
            ops.softmax(self.forward(x[i:i + chunk], train=False)[0])
            for i in range(0, len(x), chunk)
        ]
        if not out:
            return np.zeros((0, self.cfg.num_classes), dtype=self.dtype)
        return np.concatenate(out)

    def state_dict(self) -> dict[str, np.ndarray]:
        return {**self.params, **self.buffers}

    def copy(self) -> "EhpiNet":
        return EhpiNet(
            self.cfg,
            {k: v.copy() for k, v in self.params.items()},
            {k: v.copy() for k, v in self.buffers.items()},
        )
