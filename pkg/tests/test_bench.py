import csv
import dataclasses
import io
import statistics
from fractions import Fraction

import pytest

from omnisweep.bench import (CSV_COLUMNS, EMBEDDED_REFERENCE, bench_pipeline, bench_sweep, expected_op_count,
                             results_csv)
from omnisweep.pipeline import STAGES, PipelineConfig, band_grid, rig_hypotheses
from omnisweep.sweep import build_sphere_grid, sample_hypotheses


@pytest.mark.parametrize("d,w,h", [(16, 480, 240), (64, 960, 480), (7, 33, 17)])
def test_op_ratio_exact(d, w, h):
    hyp = sample_hypotheses(0.5, 100.0, d)
    grid = build_sphere_grid(w, h)
    ratio = Fraction(expected_op_count("combined", hyp, grid), expected_op_count("conventional", hyp, grid))
    assert ratio == Fraction(1, 3)


def test_sweep_samples_and_ratio(small_rig):
    grid = band_grid(small_rig)
    hyp = rig_hypotheses(small_rig)
    conv = bench_sweep(small_rig, grid, hyp, "conventional", runs=5)
    comb = bench_sweep(small_rig, grid, hyp, "combined", runs=5)
    for r in (conv, comb):
        assert len(r.samples) == 5
        assert r.min_time <= r.wall_time <= r.max_time
        assert r.wall_time > 0
    assert Fraction(comb.op_count, conv.op_count) == Fraction(1, 3)
    assert comb.op_count == 2 * len(hyp) * grid.band_height * grid.width
    assert conv.note == "includes stitch"


def test_runs_lower_bound(small_rig, mini_scene):
    grid, hyp = band_grid(small_rig), rig_hypotheses(small_rig)
    with pytest.raises(ValueError):
        bench_sweep(small_rig, grid, hyp, runs=2)
    with pytest.raises(ValueError):
        bench_sweep(small_rig, grid, hyp, method="stitched")
    with pytest.raises(ValueError):
        bench_pipeline(small_rig, mini_scene, runs=1)


def test_reference_is_metadata_only():
    assert EMBEDDED_REFERENCE == {"conventional": 0.201, "combined": 0.065}


@pytest.fixture(scope="module")
def pipeline_rounds(mini_rig, mini_images):
    """Interleaved rounds over D so slow drift of the host hits every D alike."""
    rounds = []
    for _ in range(5):
        rounds.append({d: bench_pipeline(dataclasses.replace(mini_rig, num_hypotheses=d), None,
                                         PipelineConfig(stride=4), runs=3, images=mini_images)
                       for d in (32, 64, 128)})
    return rounds


@pytest.fixture(scope="module")
def pipeline_runs(pipeline_rounds):
    return pipeline_rounds[-1]


def test_stage_sum_matches_total(pipeline_rounds):
    for d in (32, 64, 128):
        ratios = [s / t for r in pipeline_rounds for s, t in zip(r[d].stage_sums, r[d].samples)]
        assert set(pipeline_rounds[0][d].breakdown) == set(STAGES)
        assert len(ratios) == 15
        assert statistics.median(ratios) == pytest.approx(1.0, abs=0.05)


def test_warp_not_below_cost(pipeline_runs):
    r = pipeline_runs[64]
    assert r.breakdown["warp"] >= r.breakdown["cost"]


def test_depth_scaling_near_linear(pipeline_rounds):
    def wc(d):
        return statistics.median(r[d].breakdown["warp"] + r[d].breakdown["cost"] for r in pipeline_rounds)
    for d in (32, 64):
        assert 1.6 <= wc(2 * d) / wc(d) <= 2.4


def test_csv_schema(pipeline_runs):
    text = results_csv(pipeline_runs.values())
    rows = list(csv.DictReader(io.StringIO(text)))
    assert list(rows[0]) == CSV_COLUMNS
    assert [int(r["D"]) for r in rows] == [32, 64, 128]
    assert all(float(r["warp_s"]) > 0 for r in rows)
    assert rows[0]["note"] == "render and table build excluded"
