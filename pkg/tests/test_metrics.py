"""Tests for layer errors, the Fréchet moment distance and reports."""

import csv
import json
import math

import numpy as np
import pytest
from PIL import Image

from tcaq.metrics import (
    ABLATION_FIELDS,
    SCHEMA_VERSION,
    ArmResult,
    MetricReport,
    MetricsError,
    ReportError,
    emit_report,
    fmd,
    frechet_distance,
    layer_error,
    load_report,
    mean_sqnr,
    moment_distance,
    write_ablation_csv,
    write_png_grid,
)


def arm(name="baseline", fmd_value=1.5, sqnr=20.0, seconds=None):
    return ArmResult(
        arm=name, bits_w=4, bits_a=8, bits_s=8, tcr=False, daq=False, par_rounds=0,
        fmd=fmd_value, mean_sqnr_db=sqnr, sample_count=64, seed=0, seconds=seconds,
    )


# =============================================================================
# Layer error
# =============================================================================

class TestLayerError:
    """MSE and SQNR."""

    def test_known_values(self):
        fp = np.array([1.0, -1.0, 1.0, -1.0])
        err = layer_error(fp, fp + 0.1)
        assert err.mse == pytest.approx(0.01)
        assert err.sqnr_db == pytest.approx(20.0)

    def test_exact_is_infinite(self):
        fp = np.ones(5)
        assert layer_error(fp, fp).sqnr_db == math.inf

    def test_zero_signal(self):
        assert layer_error(np.zeros(3), np.ones(3)).sqnr_db == -math.inf

    def test_shape_mismatch(self):
        with pytest.raises(MetricsError):
            layer_error(np.ones(3), np.ones(4))

    def test_empty(self):
        with pytest.raises(MetricsError):
            layer_error(np.ones(0), np.ones(0))

    def test_mean_sqnr_skips_non_finite(self):
        layers = {"a": {"sqnr_db": 10.0}, "b": {"sqnr_db": math.inf}, "c": {"sqnr_db": 20.0}}
        assert mean_sqnr(layers) == pytest.approx(15.0)
        assert math.isnan(mean_sqnr({"a": {"sqnr_db": -math.inf}}))


# =============================================================================
# Distances
# =============================================================================

class TestFrechetDistance:
    """Gaussian Fréchet distance on raw samples."""

    def test_identical_batches(self, rng):
        x = rng.normal(size=(200, 6))
        assert fmd(x, x) == pytest.approx(0.0, abs=1e-6)

    def test_symmetric(self, rng):
        a = rng.normal(size=(200, 6))
        b = rng.normal(loc=0.5, scale=2.0, size=(200, 6))
        assert fmd(a, b) == pytest.approx(fmd(b, a), rel=1e-6)

    def test_mean_shift_dominates(self, rng):
        a = rng.normal(size=(4000, 3))
        b = a + np.array([1.0, 2.0, 0.0])
        assert fmd(a, b) == pytest.approx(5.0, rel=1e-3)

    def test_closed_form_for_diagonal_gaussians(self):
        mu = np.zeros(2)
        d = frechet_distance(mu, np.diag([1.0, 4.0]), mu, np.diag([4.0, 1.0]))
        # per axis (sqrt(c_a) - sqrt(c_b))^2
        assert d == pytest.approx(1.0 + 1.0)

    def test_needs_more_samples_than_dims(self, rng):
        with pytest.raises(MetricsError):
            fmd(rng.normal(size=(6, 6)), rng.normal(size=(100, 6)))

    def test_dimension_mismatch(self, rng):
        with pytest.raises(MetricsError):
            fmd(rng.normal(size=(50, 3)), rng.normal(size=(50, 4)))

    def test_images_are_flattened(self, rng):
        x = rng.normal(size=(80, 1, 4, 4))
        assert fmd(x, x + 1.0) == pytest.approx(16.0, rel=1e-6)

    def test_moment_distance_with_few_samples(self, rng):
        a = rng.normal(size=(3, 64))
        assert moment_distance(a, a) == 0.0
        assert moment_distance(a, a + 1.0) == pytest.approx(64.0)


# =============================================================================
# PNG grid
# =============================================================================

class TestPngGrid:
    """Sample grids."""

    def test_tiles_and_upscales(self, rng, tmp_path):
        path = write_png_grid(rng.uniform(-1, 1, size=(5, 1, 8, 8)), tmp_path / "g" / "grid.png", upscale=2)
        with Image.open(path) as img:
            # 3 x 2 tiles of 8 px with 1 px padding
            assert img.size == ((3 * 9 + 1) * 2, (2 * 9 + 1) * 2)
            assert img.mode == "L"

    def test_values_map_to_gray_levels(self, tmp_path):
        samples = np.array([[[-1.0, 0.0], [1.0, 5.0]]])
        path = write_png_grid(samples, tmp_path / "one.png", upscale=1, padding=0)
        with Image.open(path) as img:
            np.testing.assert_array_equal(np.asarray(img), [[0, 128], [255, 255]])

    def test_rejects_multichannel(self, tmp_path):
        with pytest.raises(MetricsError):
            write_png_grid(np.zeros((2, 3, 4, 4)), tmp_path / "x.png")


# =============================================================================
# Reports
# =============================================================================

class TestReport:
    """Versioned JSON report and ablation CSV."""

    def test_round_trip(self, tmp_path):
        report = MetricReport(
            config={"seed": 0},
            layers={"mid.conv1": {"mse": 0.1, "sqnr_db": 12.0}},
            arms=[arm(), arm("+TCR", 1.2, 22.0, 3.5)],
            fp_fmd=0.4,
        )
        json_path, csv_path = emit_report(report, tmp_path / "report.json")
        assert csv_path == tmp_path / "report.csv"
        loaded = load_report(json_path)
        assert loaded.arms == report.arms
        assert loaded.layers == report.layers
        assert loaded.fp_fmd == 0.4
        assert loaded.timings is None
        assert "timings" not in json.loads(json_path.read_text())

    def test_schema_version_checked(self, tmp_path):
        path = tmp_path / "report.json"
        path.write_text(json.dumps({"schema_version": SCHEMA_VERSION + 1}))
        with pytest.raises(ReportError):
            load_report(path)

    def test_unreadable_report(self, tmp_path):
        path = tmp_path / "report.json"
        path.write_text("{not json")
        with pytest.raises(ReportError):
            load_report(path)

    def test_non_finite_values_are_strict_json(self, tmp_path):
        def reject(token):
            raise ValueError(f"non-standard JSON constant {token}")

        report = MetricReport(
            layers={"mid.conv1": {"mse": 0.0, "sqnr_db": math.inf}, "mid.attn": {"mse": 1.0, "sqnr_db": -math.inf}},
            arms=[arm(sqnr=math.inf)],
            timings={"daq": 0.5},
        )
        json_path, _ = emit_report(report, tmp_path / "report.json")
        doc = json.loads(json_path.read_text(), parse_constant=reject)
        assert doc["layers"]["mid.conv1"]["sqnr_db"] == "inf"
        assert doc["layers"]["mid.attn"]["sqnr_db"] == "-inf"
        loaded = load_report(json_path)
        assert loaded.layers == report.layers
        assert loaded.arms[0].mean_sqnr_db == math.inf
        assert loaded.timings == {"daq": 0.5}

    def test_nan_round_trips(self, tmp_path):
        json_path, _ = emit_report(MetricReport(arms=[arm(sqnr=math.nan)]), tmp_path / "report.json")
        assert math.isnan(load_report(json_path).arms[0].mean_sqnr_db)

    def test_unknown_string_in_numeric_field(self, tmp_path):
        path = tmp_path / "report.json"
        path.write_text(json.dumps({"schema_version": SCHEMA_VERSION, "fp_fmd": "lots"}))
        with pytest.raises(ReportError):
            load_report(path)

    def test_csv_rows_keep_arm_order(self, tmp_path):
        path = write_ablation_csv([arm("b"), arm("a", seconds=1.23456)], tmp_path / "ablation.csv")
        with path.open(newline="") as f:
            reader = csv.DictReader(f)
            assert reader.fieldnames == ABLATION_FIELDS
            rows = list(reader)
        assert [r["arm"] for r in rows] == ["b", "a"]
        assert rows[0]["seconds"] == ""
        assert rows[1]["seconds"] == "1.235"
        assert rows[0]["tcr"] == "0"
        assert float(rows[0]["fmd"]) == 1.5
