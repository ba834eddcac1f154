"""Training loop and evaluation campaigns.

Everything here reduces to CurvePoint rows written as CSV with a
config-hash header, so each campaign output is plot-ready and exactly
reproducible from its seed.  DOA campaigns run paired trials: every
series at a given (SNR, trial) index sees identical angles, source
phases, and noise, so series differences are attributable to the
pipeline alone.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import network as net
from .checkpoint import parameter_payload_bytes
from .config import (
    DOMAIN_INIT,
    DOMAIN_SHUFFLE,
    DOMAIN_SPECTRUM,
    DOMAIN_TRIALS,
    ScenarioConfig,
    apply_overrides,
    derived_seed,
)
from .dataset import Dataset
from .music import TrialResult, run_trials, sample_covariance, music_spectrum, scan_grid
from .optimizer import NonFiniteGradientError, adam_step, init_state
from .quantizer import QuantizerSpec, quantize_complex
from .signal_model import NoiseSpec, SourceSet, from_real_batch, synthesize, to_real_batch

# Default spectrum-demo scenario: two sources 1.31 degrees apart plus a
# far-off third, the stress case for post-reconstruction resolution.
DEFAULT_SPECTRUM_ANGLES = (-18.9346, 8.6346, 9.9462)

DOA_SERIES = ("unquantized", "raw-1bit", "raw-2bit", "raw-3bit", "raw-4bit", "recon-1bit")


@dataclass
class CurvePoint:
    series: str
    x: float
    y: float
    spread: float = 0.0


@dataclass
class TrainResult:
    model: net.DenoiserModel
    curves: list[CurvePoint]
    diverged: bool
    train_seconds: float
    final_test_loss: float


def write_curves_csv(
    path: str | Path,
    points: list[CurvePoint],
    config: ScenarioConfig,
    extra_header: dict | None = None,
) -> None:
    """CSV with `#` header lines carrying the config hash and seed."""
    lines = [
        f"# config_hash: {config.config_hash()}",
        f"# seed: {config.seed}",
    ]
    for key, value in (extra_header or {}).items():
        lines.append(f"# {key}: {value}")
    lines.append("series,x,y,spread")
    for p in points:
        lines.append(f"{p.series},{float(p.x)!r},{float(p.y)!r},{float(p.spread)!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_curves_csv(path: str | Path) -> tuple[list[CurvePoint], dict[str, str]]:
    header: dict[str, str] = {}
    points: list[CurvePoint] = []
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            key, _, value = line[1:].partition(":")
            header[key.strip()] = value.strip()
        elif line and not line.startswith("series,"):
            series, x, y, spread = line.split(",")
            points.append(CurvePoint(series, float(x), float(y), float(spread)))
    return points, header


# -- training -------------------------------------------------------------------


def train(
    config: ScenarioConfig,
    train_set: Dataset,
    test_set: Dataset | None = None,
    progress: bool = False,
) -> TrainResult:
    """Shuffled mini-batch Adam on the reconstruction loss.

    Emits per-epoch train loss and periodic test loss (inference-mode
    batch norm).  A non-finite loss or gradient aborts training and the
    last epoch's finite model is retained, flagged as diverged.
    """
    model = net.init_model(
        config.network.widths,
        rng=np.random.default_rng(derived_seed(config.seed, DOMAIN_INIT)),
        use_bn=config.network.use_bn,
        use_residual=config.network.use_residual,
        activation=config.network.activation,
        input_bias=config.network.input_bias,
    )
    params = model.trainable_arrays()
    state = init_state(params, learning_rate=config.train.lr)
    shuffle_rng = np.random.default_rng(derived_seed(config.seed, DOMAIN_SHUFFLE))
    inputs, targets = train_set.inputs, train_set.targets
    count = train_set.count
    batch_size = config.train.batch_size
    curves: list[CurvePoint] = []
    diverged = False
    retained = model.copy()

    start = time.perf_counter()
    for epoch in range(config.train.epochs):
        perm = shuffle_rng.permutation(count)
        epoch_loss = 0.0
        seen = 0
        for lo in range(0, count, batch_size):
            idx = perm[lo : lo + batch_size]
            if idx.size < 2:
                continue  # batch norm cannot normalize a single row
            xb, yb = inputs[idx], targets[idx]
            out, cache = net.forward(model, xb, mode="train")
            batch_loss = net.loss(out, yb)
            if not np.isfinite(batch_loss):
                diverged = True
                break
            grads = net.backward(model, cache, yb)
            try:
                adam_step(params, grads.flat(), state)
            except NonFiniteGradientError:
                diverged = True
                break
            epoch_loss += batch_loss * idx.size
            seen += idx.size
        if diverged:
            model = retained
            break
        retained = model.copy()
        train_loss = epoch_loss / max(seen, 1)
        curves.append(CurvePoint("train-loss", float(epoch), train_loss))
        if test_set is not None and (
            (epoch + 1) % config.train.eval_interval == 0
            or epoch == config.train.epochs - 1
        ):
            test_loss = evaluate_loss(model, test_set)
            curves.append(CurvePoint("test-loss", float(epoch), test_loss))
            if progress:
                print(f"epoch {epoch}: train {train_loss:.5f} test {test_loss:.5f}")
    elapsed = time.perf_counter() - start

    final_test = evaluate_loss(model, test_set) if test_set is not None else float("nan")
    return TrainResult(
        model=model,
        curves=curves,
        diverged=diverged,
        train_seconds=elapsed,
        final_test_loss=final_test,
    )


def evaluate_loss(model: net.DenoiserModel, ds: Dataset) -> float:
    out, _ = net.forward(model, ds.inputs, mode="infer")
    return net.loss(out, ds.targets)


# -- reconstruction evaluation ---------------------------------------------------


def reconstruction_loss_by_snr(model: net.DenoiserModel, ds: Dataset) -> dict[float, float]:
    """Mean per-record loss in each SNR bucket (float64 accumulation)."""
    out, _ = net.forward(model, ds.inputs, mode="infer")
    per_sample = net.per_sample_loss(out, ds.targets)
    return {
        snr: float(per_sample[idx].mean()) for snr, idx in ds.snr_buckets().items()
    }


def eval_reconstruction(model: net.DenoiserModel, ds: Dataset) -> list[CurvePoint]:
    by_snr = reconstruction_loss_by_snr(model, ds)
    return [CurvePoint("recon-loss", snr, loss) for snr, loss in sorted(by_snr.items())]


# -- DOA campaigns ---------------------------------------------------------------


def denoise_snapshots(model: net.DenoiserModel, data: np.ndarray) -> np.ndarray:
    """Run each snapshot column through the network independently."""
    batch = to_real_batch(data).astype(np.float32)
    out, _ = net.forward(model, batch, mode="infer")
    return from_real_batch(out).data


def make_transform(tag: str, qspec_for, model: net.DenoiserModel | None = None):
    """Resolve a series tag to a signal transform.

    Tags: "unquantized", "raw-{B}bit", "recon-{B}bit".  ``qspec_for`` is
    a callable bits -> QuantizerSpec so all series share one full scale.
    """
    if tag == "unquantized":
        return lambda data: data
    if tag.startswith("raw-") and tag.endswith("bit"):
        spec = qspec_for(int(tag[4:-3]))
        return lambda data: quantize_complex(data, spec)
    if tag.startswith("recon-") and tag.endswith("bit"):
        if model is None:
            raise ValueError(f"series {tag!r} needs a denoiser model")
        spec = qspec_for(int(tag[6:-3]))
        return lambda data: denoise_snapshots(model, quantize_complex(data, spec))
    raise ValueError(f"unknown series tag {tag!r}")


def eval_doa(
    model: net.DenoiserModel | None,
    config: ScenarioConfig,
    series: tuple[str, ...] = DOA_SERIES,
    snr_db: list[float] | None = None,
    trials: int | None = None,
    threads: int = 1,
) -> tuple[list[CurvePoint], dict[tuple[str, float], TrialResult]]:
    """Paired MUSIC angle-error trials for every series at every SNR."""
    snrs = [float(v) for v in (config.snr_db if snr_db is None else snr_db)]
    trials = config.music.trials if trials is None else trials
    grid = scan_grid(config.music.grid_min, config.music.grid_max, config.music.grid_step)
    qspec_for = lambda bits: config.quantizer_spec(bits)
    points: list[CurvePoint] = []
    details: dict[tuple[str, float], TrialResult] = {}
    for snr_index, snr in enumerate(snrs):
        base_seed = derived_seed(config.seed, DOMAIN_TRIALS) ^ (snr_index << 32)
        for tag in series:
            transform = make_transform(tag, qspec_for, model)
            result = run_trials(
                geom=config.geometry(),
                num_sources=config.sources.count,
                angle_range=config.angle_range(),
                min_sep=config.eval_min_sep(),
                snr_db=snr,
                num_snapshots=config.music.num_snapshots,
                grid_deg=grid,
                transform=transform,
                trials=trials,
                base_seed=base_seed,
                threads=threads,
            )
            details[(tag, snr)] = result
            points.append(CurvePoint(tag, snr, result.mean, result.stderr))
    return points, details


def spectrum_compare(
    model: net.DenoiserModel | None,
    config: ScenarioConfig,
    angles_deg: tuple[float, ...] = DEFAULT_SPECTRUM_ANGLES,
    snr_db: float = 50.0,
    series: tuple[str, ...] = ("unquantized", "raw-2bit", "raw-3bit", "recon-1bit"),
) -> tuple[list[CurvePoint], int]:
    """MUSIC spectra of several pipelines on one shared realization."""
    lo, hi = config.angle_range()
    if any(not (lo <= a <= hi) for a in angles_deg):
        raise ValueError(f"angles {angles_deg} fall outside the scan range [{lo}, {hi}]")
    trial_seed = derived_seed(config.seed, DOMAIN_SPECTRUM)
    rng = np.random.default_rng(trial_seed)
    geom = config.geometry()
    clean = synthesize(
        SourceSet(np.asarray(angles_deg)),
        geom,
        NoiseSpec(snr_db),
        config.music.num_snapshots,
        rng,
    )
    grid = scan_grid(config.music.grid_min, config.music.grid_max, config.music.grid_step)
    qspec_for = lambda bits: config.quantizer_spec(bits)
    points: list[CurvePoint] = []
    for tag in series:
        transform = make_transform(tag, qspec_for, model)
        cov = sample_covariance(transform(clean.data))
        spectrum = music_spectrum(cov, len(angles_deg), geom, grid)
        points.extend(CurvePoint(tag, g, s) for g, s in zip(grid, spectrum))
    return points, trial_seed


# -- model compression ------------------------------------------------------------


def compression_report(model: net.DenoiserModel, ds: Dataset) -> list[CurvePoint]:
    """Reconstruction loss of the fp32 model vs its fp16 rounding."""
    if model.precision != "fp32":
        raise ValueError("compression_report expects the original fp32 model")
    half = net.to_half_precision(model)
    full_loss = reconstruction_loss_by_snr(model, ds)
    half_loss = reconstruction_loss_by_snr(half, ds)
    points = []
    for snr in sorted(full_loss):
        f32, f16 = full_loss[snr], half_loss[snr]
        points.append(CurvePoint("fp32-loss", snr, f32))
        points.append(CurvePoint("fp16-loss", snr, f16))
        rel = abs(f16 - f32) / f32 if f32 > 0 else 0.0
        points.append(CurvePoint("rel-change", snr, rel))
    ratio = parameter_payload_bytes(half) / parameter_payload_bytes(model)
    points.append(CurvePoint("payload-ratio", 0.0, ratio))
    return points


# -- ablations and timing ----------------------------------------------------------


@dataclass
class AblationRow:
    name: str
    final_test_loss: float
    diverged: bool
    train_seconds: float


def default_ablation_variants(config: ScenarioConfig) -> list[tuple[str, list[str]]]:
    """The fine-tuning grid: depth, width, BN, skip, activation."""
    two_m = 2 * config.array.num_sensors
    hidden = config.network.widths[1]
    depth = len(config.network.widths) - 1

    def widths(n_hidden: int, n_layers: int) -> str:
        chain = [two_m] + [n_hidden] * (n_layers - 1) + [two_m]
        return f"network.widths={chain}"

    variants: list[tuple[str, list[str]]] = [("base", [])]
    for layers in (depth - 2, depth + 2):
        if layers >= 2:
            variants.append((f"layers-{layers}", [widths(hidden, layers)]))
    for neurons in (hidden // 4, hidden // 2, hidden * 2):
        if neurons >= 2:
            variants.append((f"neurons-{neurons}", [widths(neurons, depth)]))
    variants.append(("no-bn", ["network.use_bn=false"]))
    variants.append(("no-residual", ["network.use_residual=false"]))
    variants.append(("tanh", ["network.activation=tanh"]))
    return variants


def ablation_suite(
    config: ScenarioConfig,
    variants: list[tuple[str, list[str]]],
    train_set: Dataset,
    test_set: Dataset,
) -> list[AblationRow]:
    """Train every variant on one shared dataset; keep diverged runs.

    The base configuration is included exactly once even when the caller
    omits it.
    """
    names = [name for name, _ in variants]
    if "base" not in names:
        variants = [("base", [])] + list(variants)
    if len([n for n, _ in variants if n == "base"]) != 1:
        raise ValueError("the base variant must appear exactly once")
    rows: list[AblationRow] = []
    for name, overrides in variants:
        cfg = apply_overrides(config, overrides) if overrides else config.copy()
        errs = cfg.validate()
        if errs:
            raise ValueError(f"variant {name!r} is invalid: {errs}")
        result = train(cfg, train_set, test_set)
        rows.append(
            AblationRow(
                name=name,
                final_test_loss=result.final_test_loss,
                diverged=result.diverged,
                train_seconds=result.train_seconds,
            )
        )
    return rows


def ablation_points(rows: list[AblationRow]) -> list[CurvePoint]:
    """Loss table plus an explicit 0/1 divergence flag row per variant."""
    points = []
    for row in rows:
        points.append(CurvePoint(row.name, 0.0, row.final_test_loss))
        points.append(CurvePoint(f"{row.name}/diverged", 0.0, 1.0 if row.diverged else 0.0))
    return points


def timing_points(rows: list[AblationRow]) -> list[CurvePoint]:
    return [CurvePoint(row.name, 0.0, row.train_seconds) for row in rows]


def width_sweep_variants(config: ScenarioConfig, widths: list[int]) -> list[tuple[str, list[str]]]:
    two_m = 2 * config.array.num_sensors
    depth = len(config.network.widths) - 1
    out = []
    for n in widths:
        chain = [two_m] + [n] * (depth - 1) + [two_m]
        name = "base" if chain == config.network.widths else f"width-{n}"
        out.append((name, [f"network.widths={chain}"]))
    return out
