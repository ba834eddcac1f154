"""MUSIC direction finding on sample covariances.

The estimator forms R = (1/N) sum_n y(n) y(n)^H from a handful of
snapshots, splits its eigenvectors into signal and noise subspaces, and
scans a dense angle grid for the peaks of

    P(theta) = 1 / (||E^H a(theta)||^2 + reg),

where E spans the noise subspace.  Steering vectors at source angles
are orthogonal to E, so P peaks there.  A tiny regularizer keeps the
spectrum finite in exactly noiseless scenarios.  The per-trial quality
metric is the mean squared angle error after rank pairing.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .signal_model import (
    ArrayGeometry,
    NoiseSpec,
    SnapshotMatrix,
    SourceSet,
    draw_source_angles,
    steering_matrix,
    synthesize,
)

SPECTRUM_REGULARIZER = 1e-12

# Transforms map the clean complex M x N matrix to whatever the
# estimator should see (identity, quantized, denoised, ...).
SignalTransform = Callable[[np.ndarray], np.ndarray]


@dataclass
class MusicResult:
    """Scan output: the spectrum plus the K picked angles."""

    grid_deg: np.ndarray
    spectrum: np.ndarray
    angles_deg: np.ndarray
    mse: float | None = None


def scan_grid(lo: float, hi: float, step: float) -> np.ndarray:
    """Inclusive angle grid from lo to hi in uniform steps."""
    if not step > 0:
        raise ValueError("grid step must be > 0")
    if hi <= lo:
        raise ValueError(f"empty grid [{lo}, {hi}]")
    n = int(round((hi - lo) / step))
    return lo + step * np.arange(n + 1)


def sample_covariance(
    snapshots: SnapshotMatrix | np.ndarray,
    num_snapshots: int | None = None,
) -> np.ndarray:
    """R = (1/N) Y Y^H, symmetrized to kill roundoff drift."""
    data = snapshots.data if isinstance(snapshots, SnapshotMatrix) else np.asarray(snapshots)
    data = np.atleast_2d(data)
    if num_snapshots is not None:
        if num_snapshots < 1 or num_snapshots > data.shape[1]:
            raise ValueError(
                f"requested {num_snapshots} snapshots, matrix has {data.shape[1]}"
            )
        data = data[:, :num_snapshots]
    if data.shape[1] < 1:
        raise ValueError("covariance needs at least one snapshot")
    cov = data @ data.conj().T / data.shape[1]
    return 0.5 * (cov + cov.conj().T)


def noise_subspace(cov: np.ndarray, num_sources: int) -> np.ndarray:
    """Orthonormal basis of the M-K smallest eigenvalue directions."""
    cov = np.asarray(cov)
    m = cov.shape[0]
    if cov.shape != (m, m):
        raise ValueError(f"covariance must be square, got {cov.shape}")
    if not 0 < num_sources < m:
        raise ValueError(f"need 0 < num_sources < {m}, got {num_sources}")
    if not np.all(np.isfinite(cov)):
        raise ValueError("covariance has non-finite entries")
    _, vecs = np.linalg.eigh(cov)  # ascending eigenvalues
    return vecs[:, : m - num_sources]


def music_spectrum(
    cov: np.ndarray,
    num_sources: int,
    geom: ArrayGeometry,
    grid_deg: np.ndarray,
    steering: np.ndarray | None = None,
) -> np.ndarray:
    """Pseudo-spectrum over the grid; larger means more source-like.

    ``steering`` may carry a precomputed steering matrix for the grid
    (one column per angle) to amortize repeated scans.
    """
    grid_deg = np.asarray(grid_deg, dtype=float)
    if grid_deg.size == 0:
        raise ValueError("empty scan grid")
    subspace = noise_subspace(cov, num_sources)
    if steering is None:
        steering = steering_matrix(grid_deg, geom)
    projection = subspace.conj().T @ steering
    power = np.sum(np.abs(projection) ** 2, axis=0)
    return 1.0 / (power + SPECTRUM_REGULARIZER)


def pick_peaks(grid_deg: np.ndarray, spectrum: np.ndarray, num_sources: int) -> np.ndarray:
    """The K largest local maxima, padded with the largest leftover values.

    A local maximum is strictly greater than its neighbors; a plateau
    counts once, at its leftmost index.  Ties between peaks break toward
    the smaller index.  Returned angles are sorted ascending.
    """
    grid_deg = np.asarray(grid_deg, dtype=float)
    spectrum = np.asarray(spectrum, dtype=float)
    if grid_deg.shape != spectrum.shape or grid_deg.ndim != 1:
        raise ValueError("grid and spectrum must be matching 1-D arrays")
    if num_sources < 1 or num_sources > grid_deg.size:
        raise ValueError(f"cannot pick {num_sources} peaks from {grid_deg.size} points")

    # Compress plateaus to runs, then compare neighboring run values;
    # endpoint runs have only one neighbor and never count.
    change = np.flatnonzero(np.diff(spectrum) != 0.0)
    run_starts = np.concatenate([[0], change + 1])
    run_values = spectrum[run_starts]
    peaks = [
        int(run_starts[r])
        for r in range(1, run_values.size - 1)
        if run_values[r] > run_values[r - 1] and run_values[r] > run_values[r + 1]
    ]

    order = sorted(peaks, key=lambda i: (-spectrum[i], i))
    chosen = order[:num_sources]
    if len(chosen) < num_sources:
        taken = set(chosen)
        rest = sorted(
            (i for i in range(grid_deg.size) if i not in taken),
            key=lambda i: (-spectrum[i], i),
        )
        chosen.extend(rest[: num_sources - len(chosen)])
    return np.sort(grid_deg[np.array(chosen, dtype=int)])


def doa_mse(
    estimated: np.ndarray,
    truth: np.ndarray,
    pairing: str = "sorted",
) -> float:
    """Mean squared angle error in degrees^2.

    ``sorted`` pairs both lists by rank; ``optimal`` solves the
    assignment problem on squared differences (useful when rank pairing
    is unfair, e.g. wildly wrong estimates).
    """
    est = np.sort(np.asarray(estimated, dtype=float).ravel())
    tru = np.sort(np.asarray(truth, dtype=float).ravel())
    if est.size != tru.size:
        raise ValueError(f"count mismatch: {est.size} estimates vs {tru.size} truths")
    if est.size == 0:
        raise ValueError("empty angle lists")
    if pairing == "sorted":
        return float(np.mean((est - tru) ** 2))
    if pairing == "optimal":
        from scipy.optimize import linear_sum_assignment

        cost = (est[:, None] - tru[None, :]) ** 2
        rows, cols = linear_sum_assignment(cost)
        return float(cost[rows, cols].mean())
    raise ValueError(f"unknown pairing {pairing!r}")


def estimate_doa(
    snapshots: SnapshotMatrix | np.ndarray,
    num_sources: int,
    geom: ArrayGeometry,
    grid_deg: np.ndarray,
    truth_deg: np.ndarray | None = None,
    steering: np.ndarray | None = None,
) -> MusicResult:
    """Covariance -> subspace -> spectrum -> peaks, in one call."""
    cov = sample_covariance(snapshots)
    spectrum = music_spectrum(cov, num_sources, geom, grid_deg, steering=steering)
    angles = pick_peaks(grid_deg, spectrum, num_sources)
    mse = None if truth_deg is None else doa_mse(angles, truth_deg)
    return MusicResult(grid_deg=grid_deg, spectrum=spectrum, angles_deg=angles, mse=mse)


@dataclass
class TrialResult:
    """Per-trial MSEs plus summary statistics."""

    mses: np.ndarray

    @property
    def mean(self) -> float:
        return float(np.mean(self.mses))

    @property
    def median(self) -> float:
        return float(np.median(self.mses))

    @property
    def stderr(self) -> float:
        n = self.mses.size
        if n < 2:
            return 0.0
        return float(np.std(self.mses, ddof=1) / np.sqrt(n))


def paired_stderr(a: TrialResult, b: TrialResult) -> float:
    """Standard error of the per-trial difference a - b."""
    diff = a.mses - b.mses
    return float(np.std(diff, ddof=1) / np.sqrt(diff.size)) if diff.size > 1 else 0.0


def run_trials(
    *,
    geom: ArrayGeometry,
    num_sources: int,
    angle_range: tuple[float, float],
    min_sep: float,
    snr_db: float,
    num_snapshots: int,
    grid_deg: np.ndarray,
    transform: SignalTransform,
    trials: int,
    base_seed: int,
    pairing: str = "sorted",
    threads: int = 1,
) -> TrialResult:
    """Monte-Carlo angle-error trials for one pipeline at one SNR.

    Trial t draws its angles, source phases, and noise from a generator
    seeded with ``base_seed XOR t``, so repeated runs (and runs with a
    different ``transform``) see identical signals and differ only in the
    pipeline.  Results land in trial order regardless of thread count.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    grid_deg = np.asarray(grid_deg, dtype=float)
    steering = steering_matrix(grid_deg, geom)
    noise = NoiseSpec(snr_db=snr_db)
    mses = np.empty(trials, dtype=float)

    def one_trial(t: int) -> None:
        rng = np.random.default_rng(base_seed ^ t)
        angles = draw_source_angles(num_sources, angle_range, min_sep, rng)
        clean = synthesize(SourceSet(angles), geom, noise, num_snapshots, rng)
        observed = transform(clean.data)
        result = estimate_doa(
            observed, num_sources, geom, grid_deg, truth_deg=angles, steering=steering
        )
        mses[t] = result.mse

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(one_trial, range(trials)))
    else:
        for t in range(trials):
            one_trial(t)
    return TrialResult(mses=mses)
