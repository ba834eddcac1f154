"""Command-line harness.

Each subcommand maps to one experiment artifact: datasets, a trained
checkpoint, loss/MSE tables, spectra, timing, or the fp16 comparison.
All artifacts live in the output directory; CSV outputs embed the
config hash and seed so a rerun with the same seed reproduces them
byte for byte (timing tables excepted, being wall-clock measurements).

Exit codes: 0 success, 1 configuration/usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .checkpoint import load_checkpoint, save_checkpoint
from .config import ConfigError, ScenarioConfig, apply_overrides, desk_default, load_config
from .dataset import build_dataset, load_dataset, save_dataset
from .experiments import (
    DEFAULT_SPECTRUM_ANGLES,
    ablation_points,
    ablation_suite,
    compression_report,
    default_ablation_variants,
    eval_doa,
    eval_reconstruction,
    spectrum_compare,
    timing_points,
    train,
    width_sweep_variants,
    write_curves_csv,
)
from .network import to_half_precision

SUBCOMMANDS = ("generate", "train", "eval-recon", "eval-doa", "spectrum", "compress", "bench", "ablate")


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would sys.exit(2); we map usage to 1
        raise _UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="quantdoa", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="|".join(SUBCOMMANDS))
    for name, doc in (
        ("generate", "build the train/test datasets"),
        ("train", "train the denoiser on the generated datasets"),
        ("eval-recon", "per-SNR reconstruction loss of a checkpoint"),
        ("eval-doa", "paired MUSIC angle-MSE trials across pipelines"),
        ("spectrum", "MUSIC spectra of several pipelines, one realization"),
        ("compress", "fp16 conversion and loss comparison"),
        ("bench", "training wall-clock across network widths"),
        ("ablate", "train the fine-tuning variant grid"),
    ):
        p = sub.add_parser(name, help=doc)
        p.add_argument("--config", type=Path, default=None, help="YAML config file")
        p.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="dotted-path config override, repeatable",
        )
        p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
        p.add_argument("--seed", type=int, default=None, help="master seed override")
        p.add_argument("--threads", type=int, default=1, help="worker cap for trials")
        if name == "spectrum":
            p.add_argument(
                "--angles",
                type=float,
                nargs="+",
                default=list(DEFAULT_SPECTRUM_ANGLES),
                help="true source angles in degrees",
            )
            p.add_argument("--snr", type=float, default=50.0)
        if name == "eval-doa":
            p.add_argument("--trials", type=int, default=None)
        if name == "bench":
            p.add_argument("--widths", type=int, nargs="+", default=[32, 64, 128])
    return parser


def _load_scenario(args) -> ScenarioConfig:
    if args.config is not None:
        if not Path(args.config).exists():
            raise ConfigError(f"config file {args.config} does not exist")
        config = load_config(args.config)
    else:
        config = desk_default()
    if args.overrides:
        config = apply_overrides(config, args.overrides)
    if args.seed is not None:
        if args.seed < 0 or args.seed >= 2 ** 64:
            raise ConfigError("--seed must fit in an unsigned 64-bit integer")
        config.seed = args.seed
    errs = config.validate()
    if errs:
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(errs))
    return config


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise FileNotFoundError(f"{what} not found at {path}; run the producing step first")
    return path


def _cmd_generate(args, config: ScenarioConfig) -> None:
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    for split in ("train", "test"):
        ds = build_dataset(config, split)
        save_dataset(ds, out / f"{split}.qdst")
        print(f"wrote {out / f'{split}.qdst'} ({ds.count} records, V={ds.full_scale:.6g})")


def _cmd_train(args, config: ScenarioConfig) -> None:
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    train_set = load_dataset(_require(out / "train.qdst", "training dataset"))
    test_set = load_dataset(_require(out / "test.qdst", "test dataset"))
    result = train(config, train_set, test_set, progress=True)
    save_checkpoint(result.model, out / "model.qdnn")
    write_curves_csv(
        out / "train_curves.csv",
        result.curves,
        config,
        extra_header={"diverged": str(result.diverged).lower()},
    )
    print(
        f"wrote {out / 'model.qdnn'} (final test loss {result.final_test_loss:.6g}, "
        f"diverged={result.diverged})"
    )


def _cmd_eval_recon(args, config: ScenarioConfig) -> None:
    out = args.out
    model = load_checkpoint(_require(out / "model.qdnn", "model checkpoint"))
    test_set = load_dataset(_require(out / "test.qdst", "test dataset"))
    points = eval_reconstruction(model, test_set)
    write_curves_csv(out / "recon_loss.csv", points, config)
    print(f"wrote {out / 'recon_loss.csv'}")


def _cmd_eval_doa(args, config: ScenarioConfig) -> None:
    out = args.out
    model = load_checkpoint(_require(out / "model.qdnn", "model checkpoint"))
    points, _ = eval_doa(model, config, trials=args.trials, threads=args.threads)
    write_curves_csv(out / "doa_mse.csv", points, config)
    print(f"wrote {out / 'doa_mse.csv'}")


def _cmd_spectrum(args, config: ScenarioConfig) -> None:
    out = args.out
    model = load_checkpoint(_require(out / "model.qdnn", "model checkpoint"))
    points, trial_seed = spectrum_compare(
        model, config, angles_deg=tuple(args.angles), snr_db=args.snr
    )
    write_curves_csv(
        out / "spectrum.csv",
        points,
        config,
        extra_header={
            "trial_seed": trial_seed,
            "true_angles_deg": " ".join(repr(a) for a in args.angles),
            "snr_db": repr(args.snr),
        },
    )
    print(f"wrote {out / 'spectrum.csv'}")


def _cmd_compress(args, config: ScenarioConfig) -> None:
    out = args.out
    model = load_checkpoint(_require(out / "model.qdnn", "model checkpoint"))
    test_set = load_dataset(_require(out / "test.qdst", "test dataset"))
    points = compression_report(model, test_set)
    write_curves_csv(out / "compression.csv", points, config)
    save_checkpoint(to_half_precision(model), out / "model_fp16.qdnn")
    print(f"wrote {out / 'compression.csv'} and {out / 'model_fp16.qdnn'}")


def _cmd_bench(args, config: ScenarioConfig) -> None:
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    train_set = load_dataset(_require(out / "train.qdst", "training dataset"))
    test_set = load_dataset(_require(out / "test.qdst", "test dataset"))
    variants = width_sweep_variants(config, args.widths)
    rows = ablation_suite(config, variants, train_set, test_set)
    write_curves_csv(
        out / "bench_timing.csv",
        timing_points(rows),
        config,
        extra_header={"note": "wall-clock seconds; machine dependent"},
    )
    print(f"wrote {out / 'bench_timing.csv'}")


def _cmd_ablate(args, config: ScenarioConfig) -> None:
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    train_set = load_dataset(_require(out / "train.qdst", "training dataset"))
    test_set = load_dataset(_require(out / "test.qdst", "test dataset"))
    rows = ablation_suite(config, default_ablation_variants(config), train_set, test_set)
    write_curves_csv(out / "ablation.csv", ablation_points(rows), config)
    write_curves_csv(
        out / "ablation_timing.csv",
        timing_points(rows),
        config,
        extra_header={"note": "wall-clock seconds; machine dependent"},
    )
    print(f"wrote {out / 'ablation.csv'} and {out / 'ablation_timing.csv'}")


_HANDLERS = {
    "generate": _cmd_generate,
    "train": _cmd_train,
    "eval-recon": _cmd_eval_recon,
    "eval-doa": _cmd_eval_doa,
    "spectrum": _cmd_spectrum,
    "compress": _cmd_compress,
    "bench": _cmd_bench,
    "ablate": _cmd_ablate,
}


def parse_and_dispatch(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if args.command is None:
        parser.print_help()
        return 1
    try:
        config = _load_scenario(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        _HANDLERS[args.command](args, config)
    except (ConfigError,) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure: missing inputs, bad files, ...
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


def main() -> None:
    sys.exit(parse_and_dispatch())


if __name__ == "__main__":
    main()
