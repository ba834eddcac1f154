"""Binary model checkpoints.

Little-endian layout:

    magic "QDNN" | version u16 | precision u8 (0 fp32, 1 fp16)
    | activation u8 | input_bias u8 | layer_count u32
    | per layer: kind u8, in_dim u32, out_dim u32, has_bn u8,
                 W row-major, b, then (if BN) gamma, beta,
                 running_mean, running_var
    | crc32 u32 over everything before it

Arrays are stored at the payload precision; loading upcasts to float32.
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from .network import BatchNorm, Dense, DenoiserModel

MAGIC = b"QDNN"
FORMAT_VERSION = 1

_KIND_CODES = {
    "input_fc": 0,
    "residual_inner": 1,
    "residual_outer": 2,
    "output_linear": 3,
    "hidden": 4,
}
_KIND_NAMES = {v: k for k, v in _KIND_CODES.items()}
_ACT_CODES = {"relu": 0, "tanh": 1, "sigmoid": 2}
_ACT_NAMES = {v: k for k, v in _ACT_CODES.items()}


class CheckpointError(Exception):
    """Corrupt or incompatible checkpoint file."""


def _payload_dtype(precision: str) -> np.dtype:
    return np.dtype("<f2") if precision == "fp16" else np.dtype("<f4")


def parameter_payload_bytes(model: DenoiserModel) -> int:
    """Bytes the parameter arrays occupy in a checkpoint of this model."""
    itemsize = _payload_dtype(model.precision).itemsize
    return model.parameter_count() * itemsize


def save_checkpoint(model: DenoiserModel, path: str | Path) -> None:
    dtype = _payload_dtype(model.precision)
    chunks = [
        MAGIC,
        struct.pack("<HBBB", FORMAT_VERSION, 1 if model.precision == "fp16" else 0,
                    _ACT_CODES[model.activation], 1 if model.input_bias else 0),
        struct.pack("<I", model.depth),
    ]
    for spec, layer, bn in zip(model.layer_specs(), model.dense, model.norms):
        chunks.append(
            struct.pack(
                "<BIIB", _KIND_CODES[spec.kind], spec.in_dim, spec.out_dim,
                1 if bn is not None else 0,
            )
        )
        chunks.append(np.ascontiguousarray(layer.w).astype(dtype).tobytes())
        chunks.append(layer.b.astype(dtype).tobytes())
        if bn is not None:
            for arr in (bn.gamma, bn.beta, bn.running_mean, bn.running_var):
                chunks.append(arr.astype(dtype).tobytes())
    body = b"".join(chunks)
    blob = body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)
    Path(path).write_bytes(blob)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError("truncated checkpoint file")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def array(self, count: int, dtype: np.dtype) -> np.ndarray:
        raw = self.take(count * dtype.itemsize)
        return np.frombuffer(raw, dtype=dtype).astype(np.float32)


def load_checkpoint(path: str | Path) -> DenoiserModel:
    blob = Path(path).read_bytes()
    if len(blob) < len(MAGIC) + 4:
        raise CheckpointError("truncated checkpoint file")
    body, (crc_stored,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc_stored:
        raise CheckpointError("checksum mismatch; file is corrupt")
    r = _Reader(body)
    if r.take(4) != MAGIC:
        raise CheckpointError("bad magic; not a model checkpoint")
    version, precision_flag, act_code, bias_flag = r.unpack("<HBBB")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    if precision_flag not in (0, 1):
        raise CheckpointError(f"unknown precision flag {precision_flag}")
    if act_code not in _ACT_NAMES:
        raise CheckpointError(f"unknown activation code {act_code}")
    precision = "fp16" if precision_flag == 1 else "fp32"
    dtype = _payload_dtype(precision)
    (layer_count,) = r.unpack("<I")
    if layer_count < 2:
        raise CheckpointError(f"implausible layer count {layer_count}")

    dense: list[Dense] = []
    norms: list[BatchNorm | None] = []
    kinds: list[str] = []
    prev_out: int | None = None
    for _ in range(layer_count):
        kind_code, in_dim, out_dim, has_bn = r.unpack("<BIIB")
        if kind_code not in _KIND_NAMES:
            raise CheckpointError(f"unknown layer kind {kind_code}")
        if in_dim < 1 or out_dim < 1:
            raise CheckpointError("non-positive layer dimension")
        if prev_out is not None and in_dim != prev_out:
            raise CheckpointError(
                f"layer dimension chain broken: {prev_out} feeds {in_dim}"
            )
        prev_out = out_dim
        kinds.append(_KIND_NAMES[kind_code])
        w = r.array(in_dim * out_dim, dtype).reshape(in_dim, out_dim)
        b = r.array(out_dim, dtype)
        dense.append(Dense(w=w, b=b))
        if has_bn:
            gamma = r.array(out_dim, dtype)
            beta = r.array(out_dim, dtype)
            rmean = r.array(out_dim, dtype)
            rvar = r.array(out_dim, dtype)
            norms.append(BatchNorm(gamma, beta, rmean, rvar))
        else:
            norms.append(None)
    if r.pos != len(body):
        raise CheckpointError("trailing bytes after the last layer")
    return DenoiserModel(
        dense=dense,
        norms=norms,
        activation=_ACT_NAMES[act_code],
        input_bias=bool(bias_flag),
        use_residual="residual_inner" in kinds,
        precision=precision,
    )
