import dataclasses
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_vectors
from oracles import brute_force_stats
from synthhand.evaluation import (
    CSV_COLUMNS,
    EvalReport,
    EvalRow,
    Units,
    ValidationSet,
    best_checkpoint,
    emit_report,
    error_stats,
    evaluate_checkpoint,
    evaluate_predictions,
    ingest_report,
    parse_report_csv,
    report_to_csv,
    squared_errors,
    sweep_checkpoints,
)
from synthhand.kinematics import JointSpace
from synthhand.pipeline import DatasetManifest, generate_dataset
from synthhand.regressor import Checkpoint, ModelParams, TrainConfig, predict
from synthhand.renderer import CameraConfig, Image
from synthhand.sampling import SeedSpec, sample_configuration

REFERENCE_SERIES = [(1500, 0.0083), (2000, 0.0106), (2500, 0.0066), (3000, 0.0068), (3500, 0.0051), (4000, 0.0053), (4500, 0.0057)]


def reference_report():
    return EvalReport([EvalRow(s, v, 0.0, 0.0, 2 * v, 500) for s, v in REFERENCE_SERIES])


def small_validation_set(space, n=12, size=8, seed=0):
    rng = np.random.default_rng(seed)
    images = [Image(rng.integers(0, 256, (size, size, 3), dtype=np.uint8)) for _ in range(n)]
    return ValidationSet(space, images, random_vectors(space, rng, n), "f" * 64)


def random_checkpoint(space, step, seed, size=8):
    cfg = TrainConfig(hidden_size=5, down_w=4, down_h=4)
    params = ModelParams.init(space, cfg, np.random.default_rng(seed))
    params.w2 *= 5
    return Checkpoint(step, params, 0.0, cfg, size, size, tuple(space.names))


class TestStatistics:
    def test_perfect_predictor(self, space, rng):
        truth = random_vectors(space, rng, 5)
        row = evaluate_predictions(truth, truth, space)
        assert (row.avg_mse, row.std_mse, row.min_mse, row.max_mse) == (0.0, 0.0, 0.0, 0.0)
        assert row.n_samples == 5

    def test_hand_computed_case(self):
        row = error_stats(np.array([[0.01], [0.09]]))
        assert (row.avg_mse, row.std_mse, row.min_mse, row.max_mse) == pytest.approx((0.05, 0.04, 0.01, 0.09), abs=1e-15)
        assert row.n_samples == 2

    def test_hand_computed_case_from_residuals(self, one_joint_space):
        row = evaluate_predictions([[0.1], [0.3]], [[0.0], [0.0]], one_joint_space)
        assert (row.avg_mse, row.std_mse, row.min_mse, row.max_mse) == pytest.approx((0.05, 0.04, 0.01, 0.09), abs=1e-15)

    @pytest.mark.parametrize("units", list(Units))
    def test_matches_brute_force_stats(self, space, units):
        rng = np.random.default_rng(99)
        for _ in range(20):
            n = int(rng.integers(1, 40))
            pred, truth = random_vectors(space, rng, n), random_vectors(space, rng, n)
            row = evaluate_predictions(pred, truth, space, units)
            widths = space.widths if units is Units.NORMALIZED_SQUARED else None
            expected = brute_force_stats(pred.tolist(), truth.tolist(), widths)
            got = (row.avg_mse, row.std_mse, row.min_mse, row.max_mse)
            assert max(abs(a - b) for a, b in zip(got, expected)) <= 1e-12

    def test_order_invariance(self, space, rng):
        pred, truth = random_vectors(space, rng, 50), random_vectors(space, rng, 50)
        perm = rng.permutation(50)
        a = evaluate_predictions(pred, truth, space)
        b = evaluate_predictions(pred[perm], truth[perm], space)
        assert abs(a.avg_mse - b.avg_mse) <= 1e-15 and abs(a.std_mse - b.std_mse) <= 1e-15
        assert (a.min_mse, a.max_mse) == (b.min_mse, b.max_mse)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(0.01, 100.0), st.integers(0, 2 ** 32 - 1))
    def test_normalized_units_scale_free(self, space, factor, seed):
        rng = np.random.default_rng(seed)
        scaled = JointSpace(tuple(
            dataclasses.replace(j, min_angle=j.min_angle * factor, max_angle=j.max_angle * factor) for j in space.joints
        ))
        pred, truth = random_vectors(space, rng, 6), random_vectors(space, rng, 6)
        a = evaluate_predictions(pred, truth, space, Units.NORMALIZED_SQUARED)
        b = evaluate_predictions(pred * factor, truth * factor, scaled, Units.NORMALIZED_SQUARED)
        assert b.avg_mse == pytest.approx(a.avg_mse, rel=1e-9)

    def test_row_invariants(self, space, rng):
        row = evaluate_predictions(random_vectors(space, rng, 9), random_vectors(space, rng, 9), space)
        assert row.min_mse <= row.avg_mse <= row.max_mse and row.std_mse >= 0

    def test_midpoint_baseline(self, space):
        truth = np.array([sample_configuration(space, SeedSpec(77, i)) for i in range(500)])
        pred = np.tile(space.midpoints, (500, 1))
        row = evaluate_predictions(pred, truth, space, Units.NORMALIZED_SQUARED)
        assert abs(row.avg_mse - 1 / 12) <= 0.005

    def test_zero_width_joint(self):
        from synthhand.kinematics import parse_joint_definition

        space = parse_joint_definition(
            "name parent axis_x axis_y axis_z link_length min max\n"
            "a root 0 0 1 0.1 0.2 0.2\n"
            "b a 0 0 1 0.1 0 1\n"
        )
        sq = squared_errors([[0.2, 0.5]], [[0.2, 0.0]], space, Units.NORMALIZED_SQUARED)
        assert sq.tolist() == [[0.0, 0.25]]

    def test_errors(self, space):
        with pytest.raises(ValueError):
            error_stats(np.zeros((0, 25)))
        with pytest.raises(ValueError):
            squared_errors(np.zeros((2, 25)), np.zeros((3, 25)), space)
        with pytest.raises(ValueError):
            squared_errors(np.zeros((2, 24)), np.zeros((2, 24)), space)


class TestEvaluateCheckpoint:
    def test_matches_brute_force_stats(self, space):
        val = small_validation_set(space)
        ckpt = random_checkpoint(space, 100, 1)
        row = evaluate_checkpoint(ckpt, val, Units.NORMALIZED_SQUARED)
        pred = [predict(ckpt.params, im).tolist() for im in val.images]
        expected = brute_force_stats(pred, val.truths.tolist(), space.widths)
        got = (row.avg_mse, row.std_mse, row.min_mse, row.max_mse)
        assert max(abs(a - b) for a, b in zip(got, expected)) <= 1e-12
        assert row.checkpoint_step == 100 and row.n_samples == 12

    def test_resolution_mismatch(self, space):
        val = small_validation_set(space, size=10)
        with pytest.raises(ValueError, match="checkpoint was trained"):
            evaluate_checkpoint(random_checkpoint(space, 1, 1, size=8), val)

    def test_empty_validation_set(self, space):
        val = ValidationSet(space, [], np.zeros((0, 25)))
        with pytest.raises(ValueError, match="empty"):
            evaluate_checkpoint(random_checkpoint(space, 1, 1), val)

    def test_joint_name_mismatch(self, space):
        ckpt = random_checkpoint(space, 1, 1)
        ckpt.joint_names = tuple(reversed(space.names))
        with pytest.raises(ValueError):
            evaluate_checkpoint(ckpt, small_validation_set(space))


class TestSweep:
    def test_rows_ascending(self, space, tmp_path):
        for seed, step in enumerate((4500, 1500, 3000, 2000, 2500, 4000, 3500)):
            random_checkpoint(space, step, seed).save(tmp_path)
        report = sweep_checkpoints(tmp_path, small_validation_set(space))
        assert report.steps == [1500, 2000, 2500, 3000, 3500, 4000, 4500]
        assert report.dataset_fingerprint == "f" * 64

    def test_single_checkpoint(self, space, tmp_path):
        random_checkpoint(space, 7, 0).save(tmp_path)
        assert sweep_checkpoints(tmp_path, small_validation_set(space)).steps == [7]

    def test_unreadable_checkpoint_skipped(self, space, tmp_path):
        random_checkpoint(space, 10, 0).save(tmp_path)
        (tmp_path / "ckpt-000020.json").write_text("{not json")
        report = sweep_checkpoints(tmp_path, small_validation_set(space))
        assert report.steps == [10]
        assert len(report.warnings) == 1 and "ckpt-000020.json" in report.warnings[0]

    def test_no_checkpoints(self, space, tmp_path):
        with pytest.raises(FileNotFoundError):
            sweep_checkpoints(tmp_path, small_validation_set(space))

    def test_from_dataset(self, space, tmp_path):
        manifest = DatasetManifest.create(space, 4, 6, val_count=3, camera=CameraConfig(width=8, height=8))
        generate_dataset(space, manifest, tmp_path / "d")
        val = ValidationSet.from_dataset(tmp_path / "d")
        assert len(val.images) == 3 and val.truths.shape == (3, 25)
        assert len(val.fingerprint) == 64
        expected = np.array([sample_configuration(space, SeedSpec(4, i)) for i in (3, 4, 5)])
        assert np.max(np.abs(val.truths - expected)) <= 1e-6


class TestReport:
    def test_best_checkpoint_reference_series(self):
        assert best_checkpoint(reference_report()) == 3500

    def test_ties_pick_earliest(self):
        report = EvalReport([EvalRow(s, 0.01, 0, 0, 0, 1) for s in (500, 1000, 1500)])
        assert best_checkpoint(report) == 500

    def test_steps_must_increase(self):
        with pytest.raises(ValueError):
            EvalReport([EvalRow(2, 0.1, 0, 0, 0, 1), EvalRow(2, 0.1, 0, 0, 0, 1)])

    def test_empty_report(self):
        with pytest.raises(ValueError):
            best_checkpoint(EvalReport([]))

    def test_csv_header(self):
        lines = report_to_csv(reference_report()).splitlines()
        assert lines[0] == "# units=radians_squared"
        assert lines[1].startswith("# dataset_fingerprint=")
        assert lines[2] == ",".join(CSV_COLUMNS) == "checkpoint,avg_mse,std_mse,min_mse,max_mse,n_samples"
        assert lines[3] == "1500,0.0083,0.0,0.0,0.0166,500"

    @pytest.mark.parametrize("fmt,suffix", [("csv", ".csv"), ("json", ".json")])
    def test_round_trip(self, tmp_path, fmt, suffix):
        rng = np.random.default_rng(3)
        rows = [EvalRow(s, *rng.random(4).tolist(), int(rng.integers(1, 1000))) for s in range(0, 5000, 500)]
        report = EvalReport(rows, Units.NORMALIZED_SQUARED, "ab" * 32, ["w"] if fmt == "json" else [])
        path = tmp_path / f"r{suffix}"
        emit_report(report, fmt, path)
        back = ingest_report(path)
        assert back.units is Units.NORMALIZED_SQUARED and back.dataset_fingerprint == "ab" * 32
        assert back.steps == report.steps
        for a, b in zip(report.rows, back.rows):
            assert a.n_samples == b.n_samples
            for f in ("avg_mse", "std_mse", "min_mse", "max_mse"):
                assert abs(getattr(a, f) - getattr(b, f)) <= 1e-12

    def test_reference_series_round_trip(self, tmp_path):
        path = tmp_path / "series.csv"
        emit_report(reference_report(), "csv", path)
        back = ingest_report(path)
        assert [(r.checkpoint_step, r.avg_mse) for r in back.rows] == REFERENCE_SERIES
        assert best_checkpoint(back) == 3500

    def test_minimal_csv(self):
        text = "checkpoint,avg_mse\n" + "\n".join(f"{s},{v}" for s, v in REFERENCE_SERIES) + "\n"
        report = parse_report_csv(text)
        assert best_checkpoint(report) == 3500
        assert math.isnan(report.rows[0].std_mse)

    def test_json_fields(self):
        doc = json.loads(emit_report(reference_report(), "json"))
        assert set(doc["rows"][0]) == set(CSV_COLUMNS)
        assert doc["units"] == "radians_squared"

    def test_unknown_format(self):
        with pytest.raises(ValueError):
            emit_report(reference_report(), "xml")
