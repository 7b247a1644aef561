"""Binary checkpoint format for FlowModel (little-endian throughout).

    offset  field
    ------  -----------------------------------------------------------
    0       magic              4 bytes  b"GTCK"
    4       version            u32      (currently 1)
    8       layer_count        u32
    12      per layer, in order:
              in_dim           u32
              out_dim          u32
              weight           f32[in_dim * out_dim], row-major (in, out)
              bias             f32[out_dim]
    ...     trailer:
              magic            4 bytes  b"GTTR"
              chunk_dim        u32      D
              cond_dim         u32      C
              horizon          u32      H (actions per chunk)
              action_dim       u32      (D == H * action_dim)
              num_steps        u32      default sampler step count
              cond_mean        f32[C]
              cond_std         f32[C]
              config_digest    32 bytes sha256 of the training config

The file ends exactly after the digest; trailing bytes are an error.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .flow import FlowModel
from .nn import Layer, MlpParams

MAGIC = b"GTCK"
TRAILER_MAGIC = b"GTTR"
VERSION = 1


class CheckpointError(ValueError):
    pass


def to_bytes(model: FlowModel) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(model.net.layers))]
    for layer in model.net.layers:
        parts.append(struct.pack("<II", layer.in_dim, layer.out_dim))
        parts.append(np.ascontiguousarray(layer.weight, dtype="<f4").tobytes())
        parts.append(np.ascontiguousarray(layer.bias, dtype="<f4").tobytes())
    digest = bytes(model.config_digest)
    if len(digest) != 32:
        raise CheckpointError("config digest must be 32 bytes")
    parts += [
        TRAILER_MAGIC,
        struct.pack("<5I", model.chunk_dim, model.cond_dim, model.horizon, model.action_dim, model.num_steps),
        model.cond_mean.astype("<f4").tobytes(),
        model.cond_std.astype("<f4").tobytes(),
        digest,
    ]
    return b"".join(parts)


def from_bytes(data: bytes) -> FlowModel:
    if len(data) < 12 or data[:4] != MAGIC:
        raise CheckpointError("bad checkpoint header: expected magic b'GTCK'")
    version, n_layers = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise CheckpointError(f"bad checkpoint header: unsupported version {version}")
    off = 12
    layers = []
    try:
        for _ in range(n_layers):
            in_dim, out_dim = struct.unpack_from("<II", data, off)
            off += 8
            w = np.frombuffer(data, "<f4", in_dim * out_dim, off).reshape(in_dim, out_dim)
            off += 4 * in_dim * out_dim
            b = np.frombuffer(data, "<f4", out_dim, off)
            off += 4 * out_dim
            layers.append(Layer(w.astype(np.float32), b.astype(np.float32)))
        if data[off : off + 4] != TRAILER_MAGIC:
            raise CheckpointError("corrupt checkpoint: trailer magic missing")
        off += 4
        d, c, h, a, steps = struct.unpack_from("<5I", data, off)
        off += 20
        mean = np.frombuffer(data, "<f4", c, off).astype(np.float32)
        off += 4 * c
        std = np.frombuffer(data, "<f4", c, off).astype(np.float32)
        off += 4 * c
        digest = data[off : off + 32]
        off += 32
    except (struct.error, ValueError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"corrupt checkpoint: truncated ({exc})") from exc
    if len(digest) != 32 or off != len(data):
        raise CheckpointError("corrupt checkpoint: unexpected length")
    try:
        return FlowModel(MlpParams(layers), d, c, h, a, mean, std, steps, digest)
    except ValueError as exc:
        raise CheckpointError(f"corrupt checkpoint: {exc}") from exc


def save(model: FlowModel, path) -> None:
    Path(path).write_bytes(to_bytes(model))


def load(path) -> FlowModel:
    return from_bytes(Path(path).read_bytes())
