"""Sparse pyramidal Lucas-Kanade point tracking on grayscale frames.

Images are 2D float arrays (height, width) with luminance in [0, 1].
Points are (x, y) pixel coordinates; x indexes columns, y indexes rows.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import correlate1d

from .errors import ImageSizeMismatch, TooManyLevels

_PYR_KERNEL = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0


@dataclass(frozen=True)
class FlowConfig:
    pyramid_levels: int = 3
    window_radius: int = 7
    max_iterations: int = 30
    epsilon: float = 0.01
    min_eigen_threshold: float = 1e-4

    def __post_init__(self):
        if self.pyramid_levels < 1:
            raise ValueError("pyramid_levels must be >= 1")
        if self.window_radius < 1:
            raise ValueError("window_radius must be >= 1")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")


def _as_image(img) -> np.ndarray:
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2D grayscale image, got shape {arr.shape}")
    return arr


def build_pyramid(img, levels: int) -> list[np.ndarray]:
    """Gaussian pyramid: level 0 is the input, each further level is low-passed
    with the 5-tap binomial kernel and decimated 2:1 (odd sizes round up)."""
    base = _as_image(img)
    if levels < 1:
        raise ValueError("levels must be >= 1")
    h, w = base.shape
    for _ in range(levels - 1):
        h, w = (h + 1) // 2, (w + 1) // 2
    if h < 2 or w < 2:
        raise TooManyLevels(f"{levels} levels would shrink {base.shape} below 2x2")

    pyramid = [base]
    for _ in range(levels - 1):
        prev = pyramid[-1]
        smooth = correlate1d(prev, _PYR_KERNEL, axis=0, mode="nearest")
        smooth = correlate1d(smooth, _PYR_KERNEL, axis=1, mode="nearest")
        pyramid.append(np.ascontiguousarray(smooth[::2, ::2]))
    return pyramid


def _gradients(img: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    padded = np.pad(img, 1, mode="edge")
    gx = (padded[1:-1, 2:] - padded[1:-1, :-2]) * 0.5
    gy = (padded[2:, 1:-1] - padded[:-2, 1:-1]) * 0.5
    return gx, gy


def _bilinear(img: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Sample ``img`` at fractional positions, clamping to the border."""
    h, w = img.shape
    x = np.clip(x, 0.0, w - 1.0)
    y = np.clip(y, 0.0, h - 1.0)
    x0 = np.floor(x).astype(np.intp)
    y0 = np.floor(y).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    ax = x - x0
    ay = y - y0
    top = img[y0, x0] * (1 - ax) + img[y0, x1] * ax
    bottom = img[y1, x0] * (1 - ax) + img[y1, x1] * ax
    return top * (1 - ay) + bottom * ay


def track_points(prev, next, points, cfg: FlowConfig | None = None):
    """Track ``points`` from ``prev`` into ``next``.

    Returns ``(positions, ok)``: an (N, 2) array of tracked coordinates and a
    boolean status per point, in input order. A point fails when the
    structure tensor of its window is near singular at full resolution or
    when its tracked position leaves the image.
    """
    cfg = cfg or FlowConfig()
    prev = _as_image(prev)
    next = _as_image(next)
    if prev.shape != next.shape:
        raise ImageSizeMismatch(f"{prev.shape} vs {next.shape}")
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    n = len(pts)
    if n == 0:
        return np.zeros((0, 2)), np.zeros(0, dtype=bool)

    pyr_prev = build_pyramid(prev, cfg.pyramid_levels)
    pyr_next = build_pyramid(next, cfg.pyramid_levels)

    r = cfg.window_radius
    span = np.arange(-r, r + 1, dtype=np.float64)
    off_y, off_x = np.meshgrid(span, span, indexing="ij")
    off_x = off_x.ravel()[None, :]
    off_y = off_y.ravel()[None, :]
    area = off_x.size

    guess = np.zeros((n, 2))
    flow = np.zeros((n, 2))
    textured = np.ones(n, dtype=bool)

    for level in range(cfg.pyramid_levels - 1, -1, -1):
        img_i = pyr_prev[level]
        img_j = pyr_next[level]
        gx, gy = _gradients(img_i)
        p = pts / (2.0**level)
        wx = p[:, :1] + off_x
        wy = p[:, 1:] + off_y
        ival = _bilinear(img_i, wx, wy)
        ix = _bilinear(gx, wx, wy)
        iy = _bilinear(gy, wx, wy)
        gxx = (ix * ix).sum(axis=1)
        gxy = (ix * iy).sum(axis=1)
        gyy = (iy * iy).sum(axis=1)
        half_tr = 0.5 * (gxx + gyy)
        min_eig = half_tr - np.sqrt((0.5 * (gxx - gyy)) ** 2 + gxy**2)
        good = min_eig / area >= cfg.min_eigen_threshold
        det = gxx * gyy - gxy**2
        det = np.where(good, det, 1.0)

        v = np.zeros((n, 2))
        active = good.copy()
        for _ in range(cfg.max_iterations):
            if not active.any():
                break
            idx = np.flatnonzero(active)
            shift = guess[idx] + v[idx]
            jval = _bilinear(img_j, wx[idx] + shift[:, :1], wy[idx] + shift[:, 1:])
            diff = ival[idx] - jval
            bx = (diff * ix[idx]).sum(axis=1)
            by = (diff * iy[idx]).sum(axis=1)
            d = det[idx]
            ex = (gyy[idx] * bx - gxy[idx] * by) / d
            ey = (gxx[idx] * by - gxy[idx] * bx) / d
            v[idx, 0] += ex
            v[idx, 1] += ey
            active[idx] = np.hypot(ex, ey) >= cfg.epsilon

        if level == 0:
            flow = guess + v
            textured = good
        else:
            guess = 2.0 * (guess + v)

    out = pts + flow
    h, w = prev.shape
    inside = (
        np.all(np.isfinite(out), axis=1)
        & (out[:, 0] >= 0)
        & (out[:, 0] <= w - 1)
        & (out[:, 1] >= 0)
        & (out[:, 1] <= h - 1)
    )
    return out, textured & inside


_PGM_TOKEN = re.compile(rb"(?:\s*(?:#[^\n]*\n)*\s*)(\S+)")


def read_pgm(path) -> np.ndarray:
    """Read an 8-bit binary (P5) PGM into a float image in [0, 1]."""
    raw = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        m = _PGM_TOKEN.match(raw, pos)
        if m is None:
            raise ValueError(f"{path}: truncated PGM header")
        tokens.append(m.group(1))
        pos = m.end()
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM (P5) file")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PGM supported (maxval {maxval})")
    pos += 1  # single whitespace byte after maxval
    data = np.frombuffer(raw, dtype=np.uint8, count=w * h, offset=pos)
    return data.reshape(h, w).astype(np.float64) / 255.0


def write_pgm(path, img) -> None:
    arr = np.clip(np.rint(_as_image(img) * 255.0), 0, 255).astype(np.uint8)
    h, w = arr.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + arr.tobytes())
