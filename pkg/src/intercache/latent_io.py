"""Binary latent blobs.

Each record is the magic ``b"CHRL"``, then little-endian uint32 version,
frames, grid_h, grid_w and d, then ``frames*grid_h*grid_w*d`` little-endian
float32 values in (frame, row, col, channel) order.  A trajectory file is a
plain concatenation of records.
"""
from __future__ import annotations

import struct
from typing import BinaryIO

import numpy as np

MAGIC = b"CHRL"
VERSION = 1
_HEADER = struct.Struct("<4s5I")


class CacheFormatError(ValueError):
    pass


def write_latent(fh: BinaryIO, latent: np.ndarray, dims: tuple[int, int, int, int]) -> None:
    frames, gh, gw, d = dims
    arr = np.asarray(latent)
    if arr.size != frames * gh * gw * d:
        raise ValueError(f"latent of size {arr.size} does not match dims {dims}")
    fh.write(_HEADER.pack(MAGIC, VERSION, frames, gh, gw, d))
    fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_latent(fh: BinaryIO) -> tuple[tuple[int, int, int, int], np.ndarray] | None:
    """Read one record; returns ``None`` at a clean end of file."""
    head = fh.read(_HEADER.size)
    if not head:
        return None
    if len(head) != _HEADER.size:
        raise CacheFormatError("incompatible cache format: truncated header")
    magic, version, frames, gh, gw, d = _HEADER.unpack(head)
    if magic != MAGIC or version != VERSION:
        raise CacheFormatError("incompatible cache format")
    count = frames * gh * gw * d
    body = fh.read(4 * count)
    if len(body) != 4 * count:
        raise CacheFormatError("incompatible cache format: truncated body")
    data = np.frombuffer(body, dtype="<f4").reshape(frames * gh * gw, d)
    return (frames, gh, gw, d), data


def write_trajectory(path, trajectory: np.ndarray, dims) -> None:
    with open(path, "wb") as fh:
        for latent in trajectory:
            write_latent(fh, latent, dims)


def read_trajectory(path, dtype=np.float32) -> tuple[tuple[int, int, int, int], np.ndarray]:
    latents, dims = [], None
    with open(path, "rb") as fh:
        while (rec := read_latent(fh)) is not None:
            rec_dims, data = rec
            if dims is not None and rec_dims != dims:
                raise CacheFormatError("incompatible cache format: mixed latent shapes")
            dims = rec_dims
            latents.append(data)
    if not latents:
        raise CacheFormatError("incompatible cache format: empty trajectory")
    return dims, np.stack(latents).astype(dtype)
