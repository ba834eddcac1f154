"""Uniform-linear-array snapshot synthesis.

Narrowband far-field model: each snapshot is a superposition of K
unit-modulus source phasors steered across the array plus circular
complex Gaussian noise,

    x(n) = sum_k s_k(n) a(theta_k) + e(n),

with a(theta)_m = exp(j 2 pi (d/lambda) m sin theta) for sensor index
m = 0..M-1.  Angles are degrees at every interface; radians appear only
inside the trig calls.  The denoising network consumes the real-stacked
view of a snapshot: all M real parts followed by all M imaginary parts.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SNAPSHOT_KINDS = ("clean", "quantized", "reconstructed", "noise")


@dataclass(frozen=True)
class ArrayGeometry:
    """ULA with ``num_sensors`` elements spaced ``spacing`` wavelengths apart."""

    num_sensors: int
    spacing: float = 0.5

    def __post_init__(self) -> None:
        if self.num_sensors < 2:
            raise ValueError(f"num_sensors must be >= 2, got {self.num_sensors}")
        if not self.spacing > 0:
            raise ValueError(f"spacing (d/lambda) must be > 0, got {self.spacing}")


@dataclass(frozen=True)
class NoiseSpec:
    """Additive complex Gaussian noise level, given as SNR in dB.

    With unit-modulus sources the per-source per-sensor SNR is 1/sigma^2,
    so sigma^2 = 10**(-snr_db/10).  ``snr_db = inf`` means noiseless.
    """

    snr_db: float

    @property
    def noise_variance(self) -> float:
        """Variance per complex sample (each real component carries half)."""
        return float(10.0 ** (-self.snr_db / 10.0))


@dataclass
class SourceSet:
    """K far-field sources: angles plus optional per-snapshot amplitudes.

    ``amplitudes`` has shape (K, N); when ``None``, :func:`synthesize`
    draws unit-modulus phasors with i.i.d. uniform phase per source per
    snapshot.
    """

    angles_deg: np.ndarray
    amplitudes: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.angles_deg = np.atleast_1d(np.asarray(self.angles_deg, dtype=float))
        if self.angles_deg.size < 1:
            raise ValueError("at least one source angle required")
        if np.any(np.abs(self.angles_deg) >= 90.0):
            raise ValueError("source angles must lie strictly inside (-90, 90) degrees")
        if self.amplitudes is not None:
            self.amplitudes = np.atleast_2d(np.asarray(self.amplitudes, dtype=complex))
            if self.amplitudes.shape[0] != self.angles_deg.size:
                raise ValueError("amplitudes must have one row per source")

    @property
    def num_sources(self) -> int:
        return int(self.angles_deg.size)


@dataclass
class SnapshotMatrix:
    """Complex M x N array observations with a provenance tag."""

    data: np.ndarray
    kind: str = "clean"

    def __post_init__(self) -> None:
        self.data = np.atleast_2d(np.asarray(self.data, dtype=complex))
        if self.kind not in SNAPSHOT_KINDS:
            raise ValueError(f"kind must be one of {SNAPSHOT_KINDS}, got {self.kind!r}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("snapshot entries must be finite")

    @property
    def num_sensors(self) -> int:
        return int(self.data.shape[0])

    @property
    def num_snapshots(self) -> int:
        return int(self.data.shape[1])


def steering_vector(theta_deg: float, geom: ArrayGeometry) -> np.ndarray:
    """Steering vector a(theta): unit-modulus phase ramp across the array.

    Element m equals exp(j 2 pi (d/lambda) m sin theta); element 0 is
    exactly 1.  Rejects |theta| >= 90 because sin is ambiguous outside
    the front half-space.
    """
    if not abs(theta_deg) < 90.0:
        raise ValueError(f"theta must satisfy |theta| < 90 degrees, got {theta_deg}")
    m = np.arange(geom.num_sensors)
    phase = 2.0 * np.pi * geom.spacing * m * np.sin(np.deg2rad(theta_deg))
    return np.exp(1j * phase)


def steering_matrix(thetas_deg: np.ndarray, geom: ArrayGeometry) -> np.ndarray:
    """Stack steering vectors column-wise: shape (M, len(thetas))."""
    thetas = np.atleast_1d(np.asarray(thetas_deg, dtype=float))
    if thetas.size and not np.all(np.abs(thetas) < 90.0):
        raise ValueError("all angles must satisfy |theta| < 90 degrees")
    m = np.arange(geom.num_sensors)[:, None]
    phase = 2.0 * np.pi * geom.spacing * m * np.sin(np.deg2rad(thetas))[None, :]
    return np.exp(1j * phase)


def draw_source_angles(
    num_sources: int,
    angle_range: tuple[float, float],
    min_sep: float,
    rng: np.random.Generator,
    max_tries: int = 10_000,
) -> np.ndarray:
    """Draw K i.i.d. uniform angles, rejection-resampled for separation.

    Resamples the whole set until every pairwise gap is at least
    ``min_sep`` degrees, then returns the angles sorted ascending.
    """
    lo, hi = float(angle_range[0]), float(angle_range[1])
    if num_sources < 1:
        raise ValueError("num_sources must be >= 1")
    if hi <= lo:
        raise ValueError(f"empty angle range [{lo}, {hi}]")
    if min_sep < 0:
        raise ValueError("min_sep must be >= 0")
    if hi - lo < (num_sources - 1) * min_sep:
        raise ValueError(
            f"range [{lo}, {hi}] cannot hold {num_sources} angles "
            f"separated by {min_sep} degrees"
        )
    for _ in range(max_tries):
        angles = np.sort(lo + (hi - lo) * rng.random(num_sources))
        if num_sources == 1 or np.min(np.diff(angles)) >= min_sep:
            return angles
    raise RuntimeError(f"angle rejection sampling failed after {max_tries} tries")


def synthesize(
    sources: SourceSet,
    geom: ArrayGeometry,
    noise: NoiseSpec,
    num_snapshots: int,
    rng: np.random.Generator | None = None,
) -> SnapshotMatrix:
    """Generate N clean snapshots of the source mixture plus noise.

    When the source set carries no amplitudes, each s_k(n) is a fresh
    unit-modulus phasor (uniform random phase).  Noise is circular
    complex Gaussian with ``noise.noise_variance`` per complex entry,
    i.e. half of it per real component.
    """
    if num_snapshots < 1:
        raise ValueError("num_snapshots must be >= 1")
    amps = sources.amplitudes
    if amps is None:
        if rng is None:
            raise ValueError("rng required when source amplitudes are drawn")
        phases = rng.uniform(0.0, 2.0 * np.pi, size=(sources.num_sources, num_snapshots))
        amps = np.exp(1j * phases)
    elif amps.shape[1] != num_snapshots:
        raise ValueError(
            f"amplitudes cover {amps.shape[1]} snapshots, requested {num_snapshots}"
        )
    data = steering_matrix(sources.angles_deg, geom) @ amps
    var = noise.noise_variance
    if var > 0.0:
        if rng is None:
            raise ValueError("rng required for noisy synthesis")
        scale = np.sqrt(var / 2.0)
        data = data + scale * (
            rng.standard_normal(data.shape) + 1j * rng.standard_normal(data.shape)
        )
    return SnapshotMatrix(data=data, kind="clean")


def to_real_interleaved(column: np.ndarray) -> np.ndarray:
    """Map a complex M-vector to [Re(1..M), Im(1..M)] of length 2M."""
    col = np.asarray(column)
    if col.ndim != 1:
        raise ValueError(f"expected a 1-D snapshot column, got shape {col.shape}")
    return np.concatenate([col.real, col.imag])


def from_real_interleaved(vector: np.ndarray) -> np.ndarray:
    """Inverse of :func:`to_real_interleaved`; exact round-trip."""
    v = np.asarray(vector, dtype=float)
    if v.ndim != 1 or v.size % 2 != 0:
        raise ValueError(f"expected a 1-D vector of even length, got shape {v.shape}")
    half = v.size // 2
    return v[:half] + 1j * v[half:]


def to_real_batch(snapshots: SnapshotMatrix | np.ndarray) -> np.ndarray:
    """Snapshot columns as network rows: (N, 2M) with real parts first."""
    data = snapshots.data if isinstance(snapshots, SnapshotMatrix) else np.asarray(snapshots)
    return np.concatenate([data.real.T, data.imag.T], axis=1)


def from_real_batch(batch: np.ndarray, kind: str = "reconstructed") -> SnapshotMatrix:
    """Rebuild the complex M x N matrix from (N, 2M) network rows."""
    batch = np.asarray(batch, dtype=float)
    if batch.ndim != 2 or batch.shape[1] % 2 != 0:
        raise ValueError(f"expected (N, 2M) batch, got shape {batch.shape}")
    half = batch.shape[1] // 2
    return SnapshotMatrix(data=(batch[:, :half] + 1j * batch[:, half:]).T, kind=kind)
