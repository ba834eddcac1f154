import numpy as np
import pytest

from quantdoa import network as net
from quantdoa.config import desk_default
from quantdoa.dataset import build_dataset
from quantdoa.experiments import (
    CurvePoint,
    DEFAULT_SPECTRUM_ANGLES,
    ablation_points,
    ablation_suite,
    compression_report,
    denoise_snapshots,
    eval_doa,
    eval_reconstruction,
    make_transform,
    read_curves_csv,
    reconstruction_loss_by_snr,
    spectrum_compare,
    timing_points,
    train,
    width_sweep_variants,
    write_curves_csv,
)
from quantdoa.quantizer import QuantizerSpec
from quantdoa.signal_model import from_real_batch, to_real_batch


def tiny_config(**kwargs):
    cfg = desk_default()
    cfg.data.train_count = 400
    cfg.data.test_count = 100
    cfg.network.widths = [16, 32, 32, 32, 16]
    cfg.train.epochs = 8
    cfg.music.trials = 20
    for key, value in kwargs.items():
        section, name = key.split("__")
        setattr(getattr(cfg, section), name, value)
    return cfg


@pytest.fixture(scope="module")
def tiny_setup():
    cfg = tiny_config()
    train_set = build_dataset(cfg, "train")
    test_set = build_dataset(cfg, "test")
    result = train(cfg, train_set, test_set)
    return cfg, train_set, test_set, result


class TestTrain:
    def test_deterministic_given_seed(self, tiny_setup):
        cfg, train_set, test_set, first = tiny_setup
        second = train(cfg, train_set, test_set)
        assert [(p.series, p.x, p.y) for p in first.curves] == [
            (p.series, p.x, p.y) for p in second.curves
        ]
        for a, b in zip(first.model.all_arrays(), second.model.all_arrays()):
            np.testing.assert_array_equal(a, b)

    def test_loss_improves_from_init(self, tiny_setup):
        _, _, _, result = tiny_setup
        tl = [p.y for p in result.curves if p.series == "train-loss"]
        assert tl[-1] < tl[0]
        assert not result.diverged

    def test_curves_are_finite(self, tiny_setup):
        _, _, _, result = tiny_setup
        assert all(np.isfinite(p.y) for p in result.curves)

    def test_moving_average_nonincreasing(self):
        cfg = tiny_config()
        cfg.data.train_count = 800
        cfg.train.epochs = 25
        train_set = build_dataset(cfg, "train")
        result = train(cfg, train_set)
        tl = np.array([p.y for p in result.curves if p.series == "train-loss"])
        window = 10
        ma = np.convolve(tl, np.ones(window) / window, mode="valid")
        assert np.all(np.diff(ma) <= 1e-6)

    def test_divergence_flagged_and_model_finite(self):
        cfg = tiny_config()
        cfg.train.lr = 1e9
        cfg.train.epochs = 4
        train_set = build_dataset(cfg, "train")
        test_set = build_dataset(cfg, "test")
        result = train(cfg, train_set, test_set)
        assert result.diverged
        for arr in result.model.all_arrays():
            assert np.all(np.isfinite(arr))
        assert all(np.isfinite(p.y) for p in result.curves)


class TestEvalReconstruction:
    def test_zero_model_loss_equals_target_power(self, tiny_setup):
        cfg, _, test_set, _ = tiny_setup
        model = net.init_model(cfg.network.widths, rng=np.random.default_rng(0))
        for layer in model.dense:
            layer.w[...] = 0.0
            layer.b[...] = 0.0
        by_snr = reconstruction_loss_by_snr(model, test_set)
        for snr, idx in test_set.snr_buckets().items():
            psi = test_set.targets[idx].astype(np.float64)
            expected = float(np.mean(np.sum(psi**2, axis=1) / psi.shape[1]))
            assert by_snr[snr] == pytest.approx(expected, rel=1e-12)

    def test_two_pass_agreement(self, tiny_setup):
        # independent streaming recomputation of the bucket means
        _, _, test_set, result = tiny_setup
        by_snr = reconstruction_loss_by_snr(result.model, test_set)
        out, _ = net.forward(result.model, test_set.inputs, mode="infer")
        for snr, idx in test_set.snr_buckets().items():
            total = 0.0
            for i in idx:
                diff = out[i].astype(np.float64) - test_set.targets[i].astype(np.float64)
                total += float(np.dot(diff, diff)) / diff.size
            assert abs(by_snr[snr] - total / idx.size) < 1e-12

    def test_curvepoints_sorted_by_snr(self, tiny_setup):
        _, _, test_set, result = tiny_setup
        points = eval_reconstruction(result.model, test_set)
        xs = [p.x for p in points]
        assert xs == sorted(xs)
        assert all(p.series == "recon-loss" for p in points)


class TestTransforms:
    def test_unquantized_is_identity(self):
        f = make_transform("unquantized", lambda b: QuantizerSpec(b, 1.0))
        data = np.ones((3, 2), dtype=complex)
        np.testing.assert_array_equal(f(data), data)

    def test_raw_tag_quantizes(self):
        f = make_transform("raw-1bit", lambda b: QuantizerSpec(b, 1.0))
        data = np.array([[0.3 + 0.9j]])
        np.testing.assert_array_equal(f(data), np.array([[0.0 + 1.0j]]))

    def test_recon_tag_requires_model(self):
        with pytest.raises(ValueError, match="model"):
            make_transform("recon-1bit", lambda b: QuantizerSpec(b, 1.0))

    def test_unknown_tag_rejected(self):
        with pytest.raises(ValueError, match="unknown series"):
            make_transform("midrise-2bit", lambda b: QuantizerSpec(b, 1.0))

    def test_denoise_runs_each_snapshot_independently(self, tiny_setup):
        cfg, _, _, result = tiny_setup
        rng = np.random.default_rng(0)
        data = rng.standard_normal((8, 5)) + 1j * rng.standard_normal((8, 5))
        full = denoise_snapshots(result.model, data)
        single = denoise_snapshots(result.model, data[:, 2:3])
        np.testing.assert_allclose(full[:, 2], single[:, 0], atol=1e-6)


class TestEvalDoa:
    def test_all_series_present_and_finite(self, tiny_setup):
        cfg, train_set, _, result = tiny_setup
        ev = cfg.copy()
        ev.music.min_sep = 4.0
        ev.quantizer.full_scale = train_set.full_scale
        points, details = eval_doa(
            result.model, ev, series=("unquantized", "raw-1bit", "recon-1bit"),
            snr_db=[50.0], trials=10,
        )
        assert {p.series for p in points} == {"unquantized", "raw-1bit", "recon-1bit"}
        assert all(np.isfinite(p.y) for p in points)
        assert details[("unquantized", 50.0)].mses.shape == (10,)

    def test_paired_and_deterministic(self, tiny_setup):
        cfg, train_set, _, result = tiny_setup
        ev = cfg.copy()
        ev.quantizer.full_scale = train_set.full_scale
        _, d1 = eval_doa(result.model, ev, series=("unquantized",), snr_db=[30.0], trials=8)
        _, d2 = eval_doa(result.model, ev, series=("unquantized",), snr_db=[30.0], trials=8)
        np.testing.assert_array_equal(
            d1[("unquantized", 30.0)].mses, d2[("unquantized", 30.0)].mses
        )


class TestSpectrumCompare:
    def test_default_angles_are_the_demo_triple(self):
        assert DEFAULT_SPECTRUM_ANGLES == (-18.9346, 8.6346, 9.9462)

    def test_series_share_grid_and_are_finite(self, tiny_setup):
        cfg, _, _, result = tiny_setup
        points, trial_seed = spectrum_compare(result.model, cfg, snr_db=50.0)
        by_series = {}
        for p in points:
            by_series.setdefault(p.series, []).append(p.x)
        grids = list(by_series.values())
        for g in grids[1:]:
            assert g == grids[0]
        assert all(np.isfinite(p.y) and p.y > 0 for p in points)
        assert trial_seed >= 0

    def test_angles_outside_range_rejected(self, tiny_setup):
        cfg, _, _, result = tiny_setup
        with pytest.raises(ValueError, match="outside"):
            spectrum_compare(result.model, cfg, angles_deg=(-50.0, 0.0, 10.0))


class TestCompression:
    def test_payload_ratio_half_and_small_change(self, tiny_setup):
        _, _, test_set, result = tiny_setup
        points = compression_report(result.model, test_set)
        ratio = [p for p in points if p.series == "payload-ratio"]
        assert len(ratio) == 1 and ratio[0].y == 0.5
        rel = [p.y for p in points if p.series == "rel-change"]
        assert all(r < 0.10 for r in rel)

    def test_zero_model_unchanged_by_fp16(self, tiny_setup):
        cfg, _, test_set, _ = tiny_setup
        model = net.init_model(cfg.network.widths, rng=np.random.default_rng(0))
        for layer in model.dense:
            layer.w[...] = 0.0
            layer.b[...] = 0.0
        points = compression_report(model, test_set)
        f32 = {p.x: p.y for p in points if p.series == "fp32-loss"}
        f16 = {p.x: p.y for p in points if p.series == "fp16-loss"}
        assert f32 == f16


class TestAblation:
    @pytest.fixture(scope="class")
    def rows(self):
        cfg = tiny_config()
        cfg.data.train_count = 300
        cfg.train.epochs = 3
        train_set = build_dataset(cfg, "train")
        test_set = build_dataset(cfg, "test")
        variants = [
            ("no-bn", ["network.use_bn=false"]),
            ("width-16", ["network.widths=[16, 16, 16, 16, 16]"]),
        ]
        return ablation_suite(cfg, variants, train_set, test_set)

    def test_base_included_exactly_once(self, rows):
        assert [r.name for r in rows].count("base") == 1

    def test_rows_carry_finite_losses_and_times(self, rows):
        for row in rows:
            assert np.isfinite(row.final_test_loss)
            assert row.train_seconds > 0

    def test_points_have_divergence_flags(self, rows):
        points = ablation_points(rows)
        names = {p.series for p in points}
        for row in rows:
            assert row.name in names
            assert f"{row.name}/diverged" in names
        flags = {p.series: p.y for p in points if p.series.endswith("/diverged")}
        assert set(flags.values()) <= {0.0, 1.0}

    def test_duplicate_base_rejected(self):
        cfg = tiny_config()
        ds = build_dataset(cfg, "train")
        with pytest.raises(ValueError, match="exactly once"):
            ablation_suite(cfg, [("base", []), ("base", [])], ds, ds)

    def test_width_sweep_variant_names(self):
        cfg = tiny_config()
        variants = width_sweep_variants(cfg, [16, 32, 64])
        assert [name for name, _ in variants] == ["width-16", "base", "width-64"]

    def test_timing_points_one_per_variant(self, rows):
        points = timing_points(rows)
        assert len(points) == len(rows)


class TestCsv:
    def test_write_read_round_trip(self, tmp_path):
        cfg = tiny_config()
        points = [CurvePoint("a", 1.0, 0.25, 0.001), CurvePoint("b", 2.5, 1e-7)]
        path = tmp_path / "curve.csv"
        write_curves_csv(path, points, cfg, extra_header={"note": "hello"})
        loaded, header = read_curves_csv(path)
        assert header["config_hash"] == cfg.config_hash()
        assert header["seed"] == str(cfg.seed)
        assert header["note"] == "hello"
        assert [(p.series, p.x, p.y, p.spread) for p in loaded] == [
            ("a", 1.0, 0.25, 0.001),
            ("b", 2.5, 1e-7, 0.0),
        ]

    def test_byte_identical_rewrites(self, tmp_path):
        cfg = tiny_config()
        points = [CurvePoint("s", float(i), 1.0 / (i + 3)) for i in range(5)]
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        write_curves_csv(p1, points, cfg)
        write_curves_csv(p2, points, cfg)
        assert p1.read_bytes() == p2.read_bytes()
