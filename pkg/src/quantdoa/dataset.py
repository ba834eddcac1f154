"""Training/test record generation and the on-disk dataset format.

A record is one snapshot: the quantized observation as the network
input, the clean signal as the target, both in real-stacked layout,
plus enough metadata (SNR, true angles, per-record seed) to regenerate
the record in isolation.  SNR values round-robin across the configured
list so every SNR gets an equal share.

File layout (little-endian):

    magic "QDST" | version u16 | M u32 | K u32 | record_count u64
    | snr_list_len u32 | snr values f64...
    | quantizer bits u8 | full_scale f64
    | records: input f32 x 2M, target f32 x 2M, snr f64,
               angles f64 x K, record_seed u64
    | crc32 u32 over everything before it
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import DOMAIN_TEST_DATA, DOMAIN_TRAIN_DATA, ScenarioConfig, derived_seed
from .quantizer import QuantizerSpec, quantize_complex
from .signal_model import ArrayGeometry, NoiseSpec, SourceSet, draw_source_angles, synthesize, to_real_interleaved

MAGIC = b"QDST"
FORMAT_VERSION = 1


class DatasetFormatError(Exception):
    """Corrupt or incompatible dataset file."""


@dataclass
class Dataset:
    """In-memory column store of records plus generation metadata."""

    inputs: np.ndarray        # (n, 2M) float32, quantized observations
    targets: np.ndarray       # (n, 2M) float32, clean signals
    snr_db: np.ndarray        # (n,) float64
    angles_deg: np.ndarray    # (n, K) float64
    record_seeds: np.ndarray  # (n,) uint64
    snr_list: list[float]
    bits: int
    full_scale: float

    @property
    def count(self) -> int:
        return int(self.inputs.shape[0])

    @property
    def num_sensors(self) -> int:
        return int(self.inputs.shape[1] // 2)

    @property
    def num_sources(self) -> int:
        return int(self.angles_deg.shape[1])

    @property
    def quantizer_spec(self) -> QuantizerSpec:
        return QuantizerSpec(bits=self.bits, full_scale=self.full_scale)

    def snr_buckets(self) -> dict[float, np.ndarray]:
        """Record indices grouped by SNR, in first-seen order."""
        buckets: dict[float, np.ndarray] = {}
        for snr in dict.fromkeys(self.snr_db.tolist()):
            buckets[snr] = np.flatnonzero(self.snr_db == snr)
        return buckets


def generate_record(
    record_seed: int,
    *,
    geom: ArrayGeometry,
    num_sources: int,
    angle_range: tuple[float, float],
    min_sep: float,
    snr_db: float,
    qspec: QuantizerSpec,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One (input, target, angles) triple, fully determined by its seed."""
    rng = np.random.default_rng(record_seed)
    angles = draw_source_angles(num_sources, angle_range, min_sep, rng)
    clean = synthesize(SourceSet(angles), geom, NoiseSpec(snr_db), 1, rng)
    column = clean.data[:, 0]
    quantized = quantize_complex(column, qspec)
    return (
        to_real_interleaved(quantized).astype(np.float32),
        to_real_interleaved(column).astype(np.float32),
        angles,
    )


def build_dataset(config: ScenarioConfig, split: str) -> Dataset:
    if split == "train":
        count = config.data.train_count
        base = derived_seed(config.seed, DOMAIN_TRAIN_DATA)
    elif split == "test":
        count = config.data.test_count
        base = derived_seed(config.seed, DOMAIN_TEST_DATA)
    else:
        raise ValueError(f"split must be 'train' or 'test', got {split!r}")
    geom = config.geometry()
    qspec = config.quantizer_spec()
    k = config.sources.count
    two_m = 2 * geom.num_sensors
    snr_list = [float(v) for v in config.snr_db]

    inputs = np.empty((count, two_m), dtype=np.float32)
    targets = np.empty((count, two_m), dtype=np.float32)
    snrs = np.empty(count, dtype=np.float64)
    angles = np.empty((count, k), dtype=np.float64)
    seeds = np.empty(count, dtype=np.uint64)
    for i in range(count):
        snr = snr_list[i % len(snr_list)]
        seed = (base ^ i) & 0xFFFFFFFFFFFFFFFF
        inp, tgt, ang = generate_record(
            seed,
            geom=geom,
            num_sources=k,
            angle_range=config.angle_range(),
            min_sep=config.sources.min_sep,
            snr_db=snr,
            qspec=qspec,
        )
        inputs[i] = inp
        targets[i] = tgt
        snrs[i] = snr
        angles[i] = ang
        seeds[i] = seed
    return Dataset(
        inputs=inputs,
        targets=targets,
        snr_db=snrs,
        angles_deg=angles,
        record_seeds=seeds,
        snr_list=snr_list,
        bits=qspec.bits,
        full_scale=qspec.full_scale,
    )


def save_dataset(ds: Dataset, path: str | Path) -> None:
    chunks = [
        MAGIC,
        struct.pack(
            "<HIIQ", FORMAT_VERSION, ds.num_sensors, ds.num_sources, ds.count
        ),
        struct.pack("<I", len(ds.snr_list)),
        np.asarray(ds.snr_list, dtype="<f8").tobytes(),
        struct.pack("<Bd", ds.bits, ds.full_scale),
    ]
    for i in range(ds.count):
        chunks.append(ds.inputs[i].astype("<f4").tobytes())
        chunks.append(ds.targets[i].astype("<f4").tobytes())
        chunks.append(struct.pack("<d", ds.snr_db[i]))
        chunks.append(ds.angles_deg[i].astype("<f8").tobytes())
        chunks.append(struct.pack("<Q", int(ds.record_seeds[i])))
    body = b"".join(chunks)
    blob = body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)
    Path(path).write_bytes(blob)


def load_dataset(path: str | Path) -> Dataset:
    blob = Path(path).read_bytes()
    if len(blob) < len(MAGIC) + 4:
        raise DatasetFormatError("truncated dataset file")
    body, (crc_stored,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc_stored:
        raise DatasetFormatError("checksum mismatch; file is corrupt")
    pos = 0

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(body):
            raise DatasetFormatError("truncated dataset file")
        out = body[pos : pos + n]
        pos += n
        return out

    if take(4) != MAGIC:
        raise DatasetFormatError("bad magic; not a dataset file")
    version, m, k, count = struct.unpack("<HIIQ", take(18))
    if version != FORMAT_VERSION:
        raise DatasetFormatError(f"unsupported dataset version {version}")
    (snr_len,) = struct.unpack("<I", take(4))
    snr_list = np.frombuffer(take(8 * snr_len), dtype="<f8").tolist()
    bits, full_scale = struct.unpack("<Bd", take(9))
    two_m = 2 * m

    inputs = np.empty((count, two_m), dtype=np.float32)
    targets = np.empty((count, two_m), dtype=np.float32)
    snrs = np.empty(count, dtype=np.float64)
    angles = np.empty((count, k), dtype=np.float64)
    seeds = np.empty(count, dtype=np.uint64)
    for i in range(count):
        inputs[i] = np.frombuffer(take(4 * two_m), dtype="<f4")
        targets[i] = np.frombuffer(take(4 * two_m), dtype="<f4")
        (snrs[i],) = struct.unpack("<d", take(8))
        angles[i] = np.frombuffer(take(8 * k), dtype="<f8")
        (seed,) = struct.unpack("<Q", take(8))
        seeds[i] = seed
    if pos != len(body):
        raise DatasetFormatError("trailing bytes after the last record")
    return Dataset(
        inputs=inputs,
        targets=targets,
        snr_db=snrs,
        angles_deg=angles,
        record_seeds=seeds,
        snr_list=snr_list,
        bits=int(bits),
        full_scale=float(full_scale),
    )
