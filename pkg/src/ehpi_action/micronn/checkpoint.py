"""Binary checkpoint files.

Layout (all integers unsigned 32-bit little-endian)::

    b"EHPINET1"
    repeated until EOF:
        name_len, name (UTF-8), rank, dims[rank], values (float32 LE, row-major)

The network configuration travels as two tensors, ``config.num_classes``
and ``config.channels``.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import BadMagic, TruncatedFile
from .net import EhpiNet, NetConfig

MAGIC = b"EHPINET1"


def _record(name: str, arr: np.ndarray) -> bytes:
    raw = name.encode("utf-8")
    arr = np.asarray(arr)
    head = struct.pack(f"<I{len(raw)}sI{arr.ndim}I", len(raw), raw, arr.ndim, *arr.shape)
    return head + np.ascontiguousarray(arr, dtype="<f4").tobytes()


def save_checkpoint(net: EhpiNet, path) -> None:
    parts = [MAGIC]
    parts.append(_record("config.num_classes", np.array([net.cfg.num_classes])))
    parts.append(_record("config.channels", np.array(net.cfg.channels)))
    for name, arr in net.state_dict().items():
        parts.append(_record(name, arr))
    Path(path).write_bytes(b"".join(parts))


def read_tensors(path) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    if data[: len(MAGIC)] != MAGIC:
        raise BadMagic(f"{path}: not an EHPINET1 checkpoint")
    pos = len(MAGIC)
    out: dict[str, np.ndarray] = {}

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise TruncatedFile(f"{path}: unexpected end of file at byte {pos}")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    while pos < len(data):
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        count = int(np.prod(dims)) if rank else 1
        out[name] = np.frombuffer(take(4 * count), dtype="<f4").reshape(dims).copy()
    return out


def load_checkpoint(path, dtype=np.float32) -> EhpiNet:
    tensors = read_tensors(path)
    try:
        cfg = NetConfig(
            num_classes=int(tensors.pop("config.num_classes")[0]),
            channels=tuple(int(c) for c in tensors.pop("config.channels")),
        )
    except KeyError as exc:
        raise BadMagic(f"{path}: checkpoint lacks network configuration") from exc
    template = EhpiNet.create(cfg, np.random.default_rng(0), dtype)
    params = {}
    buffers = {}
    for name, ref in template.params.items():
        params[name] = tensors[name].astype(dtype).reshape(ref.shape)
    for name, ref in template.buffers.items():
        buffers[name] = tensors[name].astype(dtype).reshape(ref.shape)
    return EhpiNet(cfg, params, buffers)
