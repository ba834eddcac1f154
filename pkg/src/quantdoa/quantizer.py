"""B-bit rounding ADC applied separately to real and imaginary parts.

The quantizer saturates at the full-scale voltage V, then rounds to the
nearest level on the grid k*step for integer k, step = 2V/2^B.  That
grid has 2^B + 1 levels covering [-V, V]; exact half-step ties round
away from zero so the level set stays symmetric.  For in-range inputs
the error never exceeds step/2.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .signal_model import SnapshotMatrix


@dataclass(frozen=True)
class QuantizerSpec:
    """Bit depth and full-scale voltage; the step size is derived."""

    bits: int
    full_scale: float

    def __post_init__(self) -> None:
        if int(self.bits) != self.bits or self.bits < 1:
            raise ValueError(f"bits must be a positive integer, got {self.bits}")
        if not self.full_scale > 0:
            raise ValueError(f"full_scale must be > 0, got {self.full_scale}")

    @property
    def step(self) -> float:
        return 2.0 * self.full_scale / (2.0 ** self.bits)

    @property
    def num_levels(self) -> int:
        return 2 ** self.bits + 1

    def levels(self) -> np.ndarray:
        """All representable outputs k*step, k = -2^(B-1) .. 2^(B-1)."""
        half = 2 ** (self.bits - 1)
        return np.arange(-half, half + 1, dtype=float) * self.step


def quantize_real(values: np.ndarray, spec: QuantizerSpec) -> np.ndarray:
    """Saturating round-to-nearest on a real array; ties away from zero."""
    x = np.clip(np.asarray(values, dtype=float), -spec.full_scale, spec.full_scale)
    # np.round would tie to even; floor(|x|/step + 0.5) ties away from zero.
    k = np.floor(np.abs(x) / spec.step + 0.5)
    return np.sign(x) * k * spec.step


def quantize_scalar(value: float, spec: QuantizerSpec) -> float:
    if not np.isfinite(value):
        raise ValueError(f"quantizer input must be finite, got {value}")
    return float(quantize_real(np.asarray(value), spec))


def quantize_complex(data: np.ndarray, spec: QuantizerSpec) -> np.ndarray:
    """Quantize real and imaginary parts independently."""
    data = np.asarray(data, dtype=complex)
    return quantize_real(data.real, spec) + 1j * quantize_real(data.imag, spec)


def quantize_snapshots(snapshots: SnapshotMatrix, spec: QuantizerSpec) -> SnapshotMatrix:
    """y(n) = x(n) + q(n): the observation the low-cost ADC delivers."""
    return SnapshotMatrix(data=quantize_complex(snapshots.data, spec), kind="quantized")


def quantization_noise(snapshots: SnapshotMatrix, spec: QuantizerSpec) -> SnapshotMatrix:
    """q(n) = quantized minus clean, componentwise."""
    return SnapshotMatrix(
        data=quantize_complex(snapshots.data, spec) - snapshots.data, kind="noise"
    )


def clipping_rate(snapshots: SnapshotMatrix | np.ndarray, spec: QuantizerSpec) -> float:
    """Fraction of real components beyond full scale (saturated)."""
    data = snapshots.data if isinstance(snapshots, SnapshotMatrix) else np.asarray(snapshots)
    parts = np.concatenate([np.ravel(data.real), np.ravel(data.imag)])
    return float(np.mean(np.abs(parts) > spec.full_scale))


def default_full_scale(
    num_sources: int,
    snr_db: float | Iterable[float],
    amplitude: float = 1.0,
) -> float:
    """Full scale covering the component range with negligible clipping.

    V = K*A_max + 4*sigma, where sigma is the worst-case (lowest SNR)
    per-real-component noise deviation.  A component's signal part is a
    sum of K unit phasors, so its magnitude never exceeds K*A_max; the
    4-sigma margin keeps the per-component clipping probability below
    1e-4.
    """
    if num_sources < 1:
        raise ValueError("num_sources must be >= 1")
    snrs = np.atleast_1d(np.asarray(snr_db, dtype=float))
    if snrs.size == 0:
        raise ValueError("need at least one SNR value")
    worst_var = float(np.max(10.0 ** (-snrs / 10.0)))
    sigma_component = np.sqrt(worst_var / 2.0)
    return num_sources * amplitude + 4.0 * sigma_component
