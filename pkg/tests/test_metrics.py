import csv
import io
import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from omnisweep.errors import EmptyEvaluationError, InvalidArgumentError
from omnisweep.matching import DepthMap
from omnisweep.metrics import REPORT_COLUMNS, evaluate, report_csv, report_text


def brute_force(pred, gt, cap):
    """Loop-by-loop reference, deliberately sharing no code with evaluate()."""
    pairs = []
    for p, g in zip(np.ravel(pred).tolist(), np.ravel(gt).tolist()):
        if math.isfinite(p) and math.isfinite(g) and p > 0 and 0 < g <= cap:
            pairs.append((p, g))
    n = len(pairs)
    mae = sum(abs(p - g) for p, g in pairs) / n
    rmse = math.sqrt(sum((p - g) ** 2 for p, g in pairs) / n)
    absrel = sum(abs(p - g) / g for p, g in pairs) / n
    sqrel = sum((p - g) ** 2 / g for p, g in pairs) / n
    logs = [math.log(p) - math.log(g) for p, g in pairs]
    mean = sum(logs) / n
    silog = math.sqrt(max(sum((x - mean) ** 2 for x in logs) / n, 0.0))
    deltas = [100.0 * sum(max(p / g, g / p) < 1.25 ** k for p, g in pairs) / n for k in (1, 2, 3)]
    return dict(mae=mae, rmse=rmse, absrel=absrel, sqrel=sqrel, silog=silog,
                delta1=deltas[0], delta2=deltas[1], delta3=deltas[2], n_valid=n)


def random_pair(rng):
    shape = tuple(rng.integers(1, 12, 2))
    gt = rng.uniform(0.3, 15, shape)
    pred = gt * rng.lognormal(0, 0.3, shape)
    pred[rng.random(shape) < 0.1] = np.nan
    gt[rng.random(shape) < 0.05] = 0.0
    return pred, gt


def test_identity():
    gt = np.linspace(0.5, 9, 20).reshape(4, 5)
    r = evaluate(gt, gt)
    assert r.mae == r.rmse == r.absrel == r.sqrel == r.silog == 0
    assert r.delta1 == r.delta2 == r.delta3 == 100


def test_single_pixel_closed_form():
    r = evaluate(np.array([[1.0]]), np.array([[2.0]]))
    assert (r.mae, r.rmse, r.absrel, r.sqrel, r.delta1, r.silog) == (1.0, 1.0, 0.5, 0.5, 0.0, 0.0)
    assert r.n_valid == 1


def test_brute_force_oracle_100_pairs():
    rng = np.random.default_rng(2024)
    for _ in range(100):
        pred, gt = random_pair(rng)
        try:
            want = brute_force(pred, gt, 10.0)
        except ZeroDivisionError:
            with pytest.raises(EmptyEvaluationError):
                evaluate(pred, gt, 10.0)
            continue
        got = evaluate(pred, gt, 10.0).as_dict()
        for k, v in want.items():
            assert got[k] == pytest.approx(v, abs=1e-9), k


def test_accepts_depth_maps():
    gt = np.full((2, 2), 4.0)
    assert evaluate(DepthMap(gt * 1.1), DepthMap(gt)).absrel == pytest.approx(0.1)


def test_cap_excludes_far():
    gt = np.array([2.0, 12.0])
    r = evaluate(np.array([2.0, 1.0]), gt, depth_cap=10)
    assert r.n_valid == 1 and r.mae == 0


def test_empty_evaluation():
    with pytest.raises(EmptyEvaluationError):
        evaluate(np.array([np.nan, 1.0]), np.array([3.0, 20.0]))


@pytest.mark.parametrize("kwargs", [{"depth_cap": 0}, {"depth_cap": -1}])
def test_bad_cap(kwargs):
    with pytest.raises(InvalidArgumentError):
        evaluate(np.ones(3), np.ones(3), **kwargs)


def test_shape_mismatch():
    with pytest.raises(InvalidArgumentError):
        evaluate(np.ones(3), np.ones(4))


depths = hnp.arrays(np.float64, st.integers(1, 30), elements=st.floats(0.5, 9.0))


@given(depths, st.floats(0.5, 1.5), st.floats(0.1, 1.0))
def test_joint_scaling(gt, noise, s):
    pred = gt * noise
    a = evaluate(pred, gt, depth_cap=1e6)
    b = evaluate(pred * s, gt * s, depth_cap=1e6)
    assert b.absrel == pytest.approx(a.absrel, rel=1e-9, abs=1e-12)
    assert b.silog == pytest.approx(a.silog, rel=1e-6, abs=1e-7)
    assert (b.delta1, b.delta2, b.delta3) == (a.delta1, a.delta2, a.delta3)
    assert b.mae == pytest.approx(s * a.mae, rel=1e-9, abs=1e-12)
    assert b.rmse == pytest.approx(s * a.rmse, rel=1e-9, abs=1e-12)
    assert b.sqrel == pytest.approx(s * a.sqrel, rel=1e-9, abs=1e-12)


@given(depths, hnp.arrays(np.float64, 30, elements=st.floats(0.2, 5.0)))
def test_report_invariants(gt, ratio):
    pred = gt * ratio[:len(gt)]
    r = evaluate(pred, gt)
    assert 0 <= r.delta1 <= r.delta2 <= r.delta3 <= 100
    assert min(r.mae, r.rmse, r.absrel, r.sqrel, r.silog) >= 0
    assert r.rmse >= r.mae - 1e-12


@given(depths, st.floats(0.513, 1.95))
def test_delta3_full_when_ratios_small(gt, factor):
    assume(max(factor, 1 / factor) < 1.25 ** 3)
    assert evaluate(gt * factor, gt).delta3 == 100


def test_report_formats():
    r = evaluate(np.array([1.0, 2.0]), np.array([1.5, 2.0]))
    text = report_text([("m", "d", r)])
    assert text.startswith("m / d: MAE") and text.endswith("\n")
    rows = list(csv.reader(io.StringIO(report_csv([("m", "d", r), ("m2", "d", r)]))))
    assert rows[0] == REPORT_COLUMNS and len(rows) == 3
    assert float(rows[1][REPORT_COLUMNS.index("mae")]) == pytest.approx(r.mae)
