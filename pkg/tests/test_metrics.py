import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from focalsod.metrics import (
    EvalReport, _s_object, e_measure_max, evaluate, f_measure_curve, f_measure_max, mae, match_resolution, s_measure, score_sample,
)

from oracles import e_max_sweep, f_max_sweep, mae_loops, s_measure_reference

FIXTURES = json.loads((Path(__file__).parent / "fixtures" / "metric_maps_4x4.json").read_text())


def random_pair(rng, size=8):
    pred = rng.random((size, size))
    # mix of quantized and continuous predictions so threshold ties occur
    if rng.random() < 0.5:
        pred = np.round(pred * 255) / 255
    gt = (rng.random((size, size)) < rng.uniform(0.1, 0.9)).astype(float)
    return pred, gt


class TestMae:
    def test_examples(self):
        g = np.array([[1.0, 0.0], [0.0, 1.0]])
        assert mae(g, g) == 0
        assert mae(np.zeros((3, 3)), np.ones((3, 3))) == 1
        assert mae(np.full((4, 4), 0.25), np.zeros((4, 4))) == 0.25

    def test_size_mismatch(self):
        with pytest.raises(ValueError):
            mae(np.zeros((2, 2)), np.zeros((2, 3)))


class TestFMeasure:
    def test_exact_at_some_threshold(self):
        assert f_measure_max([[0.9, 0.2], [0.7, 0.1]], [[1, 0], [1, 0]]) == pytest.approx(1.0)

    def test_complement(self):
        g = np.array([[1.0, 0.0], [0.0, 0.0]])
        curve = f_measure_curve(1 - g, g)
        assert np.all(curve[1:] == 0)
        # level 0 marks every pixel foreground: P = 1/4, R = 1
        assert f_measure_max(1 - g, g) == pytest.approx(1.3 * 0.25 / (0.3 * 0.25 + 1))

    def test_two_by_two_brute_force(self):
        pred = [[1.0, 0.4], [0.0, 0.0]]
        # with the truth covering both top pixels, any level <= 0.4 reproduces it
        assert f_measure_max(pred, [[1, 1], [0, 0]]) == pytest.approx(f_max_sweep(pred, [[1, 1], [0, 0]]))
        assert f_measure_max(pred, [[1, 1], [0, 0]]) == pytest.approx(1.0)
        # keeping only the top-left pixel: P=1, R=0.5
        gt = [[1, 0], [0, 1]]
        assert f_measure_max(pred, gt) == pytest.approx(1.3 * 0.5 / (0.3 + 0.5))
        assert f_measure_max(pred, gt) == pytest.approx(0.8125)

    def test_empty_truth_is_zero_and_flagged(self):
        assert f_measure_max(np.full((3, 3), 0.3), np.zeros((3, 3))) == 0.0
        row = score_sample("x", np.zeros((3, 3)), np.zeros((3, 3)))
        assert row.degenerate_gt and row.f_beta_max == 0.0

    def test_curve_length(self):
        assert f_measure_curve(np.zeros((2, 2)), np.eye(2)).shape == (256,)
        assert f_measure_curve(np.zeros((2, 2)), np.eye(2), n_thresholds=11).shape == (11,)


class TestSMeasure:
    def test_perfect(self):
        g = np.array([[0, 1, 1], [0, 1, 0], [0, 0, 0]], dtype=float)
        assert s_measure(g, g) == pytest.approx(1.0, abs=1e-6)

    def test_degenerate(self):
        assert s_measure(np.zeros((4, 4)), np.zeros((4, 4))) == 1.0
        assert s_measure(np.full((4, 4), 0.25), np.zeros((4, 4))) == 0.75
        assert s_measure(np.full((4, 4), 0.25), np.ones((4, 4))) == 0.25

    @pytest.mark.parametrize("fx", FIXTURES, ids=[f["name"] for f in FIXTURES])
    def test_stored_fixtures(self, fx):
        assert s_measure(fx["pred"], fx["gt"]) == pytest.approx(fx["s_measure"], abs=1e-6)
        assert s_measure(fx["pred"], fx["gt"]) == pytest.approx(s_measure_reference(fx["pred"], fx["gt"]), abs=1e-6)

    def test_centroid_half_rounds_up(self):
        fx = next(f for f in FIXTURES if f["name"] == "half_tie")
        # centroid column 2.5 falls on the boundary; the reference rounds it up
        assert s_measure(fx["pred"], fx["gt"]) == pytest.approx(fx["s_measure"], abs=1e-12)


class TestEMeasure:
    def test_perfect(self):
        g = np.array([[0, 1], [1, 1]], dtype=float)
        assert e_measure_max(g, g) == pytest.approx(1.0)

    def test_complement_bounded(self):
        g = np.array([[0, 1], [0, 0]], dtype=float)
        v = e_measure_max(1 - g, g)
        assert 0 <= v <= 1

    @pytest.mark.parametrize("fx", FIXTURES, ids=[f["name"] for f in FIXTURES])
    def test_fixtures(self, fx):
        assert e_measure_max(fx["pred"], fx["gt"]) == pytest.approx(fx["e_phi_max"], abs=1e-6)
        assert f_measure_max(fx["pred"], fx["gt"]) == pytest.approx(fx["f_beta_max"], abs=1e-6)

    def test_two_by_two_sweep(self):
        pred, gt = [[0.8, 0.3], [0.6, 0.1]], [[1, 0], [0, 0]]
        assert e_measure_max(pred, gt) == pytest.approx(e_max_sweep(pred, gt), abs=1e-6)


def test_oracle_equivalence_random_maps():
    rng = np.random.default_rng(1234)
    for _ in range(100):
        pred, gt = random_pair(rng)
        p, g = pred.tolist(), gt.tolist()
        assert mae(pred, gt) == pytest.approx(mae_loops(p, g), abs=1e-6)
        assert f_measure_max(pred, gt) == pytest.approx(f_max_sweep(p, g), abs=1e-6)
        assert e_measure_max(pred, gt) == pytest.approx(e_max_sweep(p, g), abs=1e-6)
        assert s_measure(pred, gt) == pytest.approx(s_measure_reference(p, g), abs=1e-6)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), axis=st.sampled_from([0, 1]))
def test_flip_invariance(seed, axis):
    pred, gt = random_pair(np.random.default_rng(seed), 6)
    fp, fg = np.flip(pred, axis), np.flip(gt, axis)
    assert mae(fp, fg) == pytest.approx(mae(pred, gt), abs=1e-12)
    assert f_measure_max(fp, fg) == pytest.approx(f_measure_max(pred, gt), abs=1e-12)
    assert e_measure_max(fp, fg) == pytest.approx(e_measure_max(pred, gt), abs=1e-12)


def test_s_measure_object_term_flip_invariant():
    # the region term splits at a rounded centroid and is not mirror-symmetric
    pred, gt = random_pair(np.random.default_rng(3), 6)
    g = gt >= 0.5
    assert _s_object(np.flip(pred, 1), np.flip(g, 1)) == pytest.approx(_s_object(pred, g), abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_metric_ranges_and_mae_symmetry(seed):
    pred, gt = random_pair(np.random.default_rng(seed), 6)
    assert mae(pred, gt) == pytest.approx(mae(1 - pred, 1 - gt), abs=1e-12)
    row = score_sample("s", pred, gt)
    for v in (row.s_alpha, row.f_beta_max, row.e_phi_max, row.mae):
        assert 0 <= v <= 1


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), k=st.integers(1, 5))
def test_max_over_threshold_superset(seed, k):
    pred, gt = random_pair(np.random.default_rng(seed), 6)
    coarse = 2 * k + 1
    fine = 2 * (coarse - 1) + 1  # contains every coarse level
    assert f_measure_max(pred, gt, n_thresholds=fine) >= f_measure_max(pred, gt, n_thresholds=coarse) - 1e-12
    assert e_measure_max(pred, gt, n_thresholds=fine) >= e_measure_max(pred, gt, n_thresholds=coarse) - 1e-12


class TestReport:
    def test_perfect_predictions(self):
        rng = np.random.default_rng(0)
        pairs = []
        for i in range(3):
            g = (rng.random((8, 8)) > 0.5).astype(float)
            pairs.append((f"s{i}", g, g))
        rep = evaluate(pairs)
        assert rep.s_alpha == pytest.approx(1.0, abs=1e-6)
        assert rep.f_beta_max == pytest.approx(1.0)
        assert rep.e_phi_max == pytest.approx(1.0)
        assert rep.mae == 0.0

    def test_columns_and_serialization(self):
        rep = evaluate([("a", np.eye(4), np.eye(4))])
        assert EvalReport.COLUMNS == ("S_alpha", "F_beta_max", "E_phi_max", "MAE")
        assert list(json.loads(rep.to_json())["aggregate"]) == list(EvalReport.COLUMNS)
        text = rep.to_text().splitlines()
        assert text[0].split("\t")[1:] == list(EvalReport.COLUMNS)
        assert text[-1].startswith("mean")

    def test_empty(self):
        with pytest.raises(ValueError):
            evaluate([])

    def test_prediction_resized_to_truth(self):
        gt = np.zeros((8, 8))
        gt[2:6, 2:6] = 1
        small = np.zeros((4, 4))
        small[1:3, 1:3] = 1
        up = match_resolution(small, gt)
        assert up.shape == (8, 8)
        assert score_sample("r", small, gt).f_beta_max == pytest.approx(1.0)
