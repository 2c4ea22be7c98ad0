"""Bandwidth selection, configuration, single runs and the coverage report."""

import math

import numpy as np
import pytest

from levelconf.density import DensityEstimator
from levelconf.geometry import GridSpec
from levelconf.harness import (
    METHODS,
    REPORT_COLUMNS,
    ConfigError,
    ExperimentConfig,
    ExperimentFailure,
    config_from_dict,
    confidence_region,
    emit_report,
    load_config,
    normal_scale_constants,
    read_report,
    run_case,
    run_one,
    select_bandwidths,
)
from levelconf.models import Elliptic

FIXED = {"h": 0.8, "l": 1.0, "g": 0.8}


# --------------------------------------------------------------------------- #
# bandwidths

def test_normal_scale_law(kernel2):
    rng = np.random.default_rng(0)
    c0, c2 = normal_scale_constants(kernel2)
    for n in (200, 800, 3200):
        x = rng.standard_normal((n, 2)) * [1.0, 2.5]
        bw = select_bandwidths(x, kernel2)
        sd = x.std(axis=0, ddof=1)
        np.testing.assert_allclose(bw.h, sd * c0 * n ** (-1 / 6), rtol=1e-14)
        np.testing.assert_allclose(bw.l, sd * c2 * n ** (-1 / 10), rtol=1e-14)
        np.testing.assert_array_equal(bw.g, bw.h)
    # so h(4n) / h(n) = 4^(-1/6) at fixed spread
    assert (4 * 200) ** (-1 / 6) / 200 ** (-1 / 6) == pytest.approx(4 ** (-1 / 6))


def test_bandwidth_axis_equivariance(kernel2):
    x = Elliptic(1.0).sample(300, np.random.default_rng(1))
    base = select_bandwidths(x, kernel2)
    scaled = select_bandwidths(x * [3.0, 1.0], kernel2)
    np.testing.assert_allclose(scaled.h, base.h * [3.0, 1.0], rtol=1e-13)
    np.testing.assert_allclose(scaled.l, base.l * [3.0, 1.0], rtol=1e-13)
    with pytest.raises(ValueError):
        select_bandwidths(np.column_stack([np.arange(10.0), np.ones(10)]), kernel2)
    fixed = select_bandwidths(x, kernel2, {"h": 0.5})
    assert fixed.h.shape == (2,)
    assert np.all(fixed.l == 0.5) and np.all(fixed.g == 0.5)


@pytest.mark.slow
def test_bandwidth_near_ise_minimizer(kernel2):
    model = Elliptic(1.0)
    x = model.sample(1000, np.random.default_rng(2))
    grid = GridSpec([-5, -5], [5, 5], 128)
    truth = model.on_grid(grid.centers())
    sweep = np.geomspace(0.3, 3.0, 25)
    ise = [np.sum((DensityEstimator(x, kernel2, [h, h]).on_grid(grid.centers()) - truth) ** 2)
           * grid.cell_volume for h in sweep]
    best = sweep[int(np.argmin(ise))]
    h = select_bandwidths(x, kernel2).h_eff
    assert best / 2 <= h <= 2 * best


# --------------------------------------------------------------------------- #
# configuration

def test_config_validation():
    with pytest.raises(ValueError):
        ExperimentConfig(runs=0)
    with pytest.raises(ValueError):
        ExperimentConfig(B=10)
    with pytest.raises(ValueError):
        ExperimentConfig(methods=("V", "nope"))
    with pytest.raises(ValueError):
        ExperimentConfig(methods=("V", "V"))
    with pytest.raises(KeyError):
        ExperimentConfig(case="case7")
    with pytest.raises(ValueError):
        ExperimentConfig(bandwidth_rule={"l": 1.0})
    with pytest.raises(ConfigError, match="unknown config keys"):
        config_from_dict({"runs": 2, "colour": "blue"})
    with pytest.raises(ConfigError):
        config_from_dict({"runs": 2, "flow": {"bogus": 1}})


def test_load_config(tmp_path):
    p = tmp_path / "exp.toml"
    p.write_text('case = "case4"\nn = 300\nruns = 3\nB = 40\nmethods = ["V", "H"]\n'
                 'bandwidth_rule = { h = 0.9, l = 1.1, g = 0.9 }\n[flow]\nstep_frac = 0.125\n',
                 encoding="utf-8")
    cfg = load_config(p)
    assert (cfg.case, cfg.n, cfg.runs, cfg.B, cfg.methods) == ("case4", 300, 3, 40, ("V", "H"))
    assert cfg.bandwidth_rule["h"] == 0.9 and cfg.flow.step_frac == 0.125
    bad = tmp_path / "bad.toml"
    bad.write_text("runs = [", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(bad)
    with pytest.raises(OSError):
        load_config(tmp_path / "missing.toml")


# --------------------------------------------------------------------------- #
# runs and reports

@pytest.fixture(scope="module")
def smoke():
    cfg = ExperimentConfig(n=200, runs=1, B=20, methods=METHODS, bandwidth_rule=FIXED, seed=3,
                           volume_resolution=128, flow_volume_resolution=64,
                           surrogate_resolution=96, bootstrap_surrogate_resolution=64,
                           n_probe=256)
    return run_case(cfg)


def test_single_run_emits_every_method(smoke):
    (r,) = smoke.runs
    assert r.error is None
    assert set(r.covered) == set(METHODS)
    for m in METHODS:
        assert r.volume[m] > 0 and 0 < r.mass[m] <= 1
        assert r.quantile[m] > 0
    assert [s.method for s in smoke.summaries] == list(METHODS)
    assert all(s.evaluated == 1 for s in smoke.summaries)
    # the extreme-value band needs h < 1; the fixed rule satisfies it
    assert r.h == (0.8, 0.8)


def test_report_round_trip(tmp_path, smoke):
    path = tmp_path / "report.csv"
    emit_report(smoke, path)
    text = path.read_text(encoding="utf-8")
    assert text.splitlines()[0] == ",".join(REPORT_COLUMNS)
    assert "\r" not in text
    rows = read_report(path)
    assert len(rows) == len(METHODS)
    for row, s in zip(rows, smoke.summaries):
        assert row["method"] == s.method and row["case"] == "case1"
        assert (row["n"], row["M"], row["B"], row["alpha"]) == (200, 1, 20, 0.1)
        assert row["coverage"] == s.coverage
        assert row["mean_volume"] == s.mean_volume and row["mean_mass"] == s.mean_mass
        assert row["failures"] == s.failures
    with pytest.raises(OSError):
        emit_report(smoke, tmp_path / "no" / "such" / "dir.csv")


def test_bandwidth_too_large_is_a_skip_note():
    cfg = ExperimentConfig(n=200, runs=1, B=20, methods=("V.ls", "V"),
                           bandwidth_rule={"h": 1.3, "l": 1.6, "g": 1.3},
                           volume_resolution=128)
    rep = run_case(cfg)
    s = rep.summary("V.ls")
    assert s.evaluated == 0 and math.isnan(s.coverage) and "h < 1" in s.note
    assert rep.summary("V").evaluated == 1


def test_failed_runs_are_captured():
    cfg = ExperimentConfig(n=20, runs=1, B=20, methods=("V",))
    r = run_one(cfg, 0, data=np.column_stack([np.arange(20.0), np.zeros(20)]))
    assert r.error is not None and "variance" in r.error
    # a level above every estimate aborts all runs, which fails the experiment
    cfg = ExperimentConfig(case="case4", n=30, runs=2, B=20, methods=("V",),
                           bandwidth_rule={"h": 20.0}, volume_resolution=64)
    with pytest.raises(ExperimentFailure):
        run_case(cfg)


def test_undefined_target_fails_only_its_method():
    # case 4 near the critical level: the bootstrap mean of run 1 stays below c
    cfg = ExperimentConfig(case="case4", n=200, runs=2, B=20, methods=("V.e", "C5*"), seed=404,
                           volume_resolution=128, flow_volume_resolution=64,
                           surrogate_resolution=96, bootstrap_surrogate_resolution=64,
                           n_probe=256)
    rep = run_case(cfg, runs=[1])
    (r,) = rep.runs
    assert r.error is None and "V.e" in r.covered
    assert "C5*" not in r.covered and "no crossing" in r.failed["C5*"]
    c5 = rep.summary("C5*")
    assert c5.failures == 1 and c5.evaluated == 0 and math.isnan(c5.coverage)
    assert rep.summary("V.e").evaluated == 1


def test_results_independent_of_workers(tmp_path):
    cfg = ExperimentConfig(n=150, runs=3, B=20, methods=("V.e", "H"), seed=11,
                           volume_resolution=128)
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    emit_report(run_case(cfg, workers=1), a)
    emit_report(run_case(cfg, workers=2), b)
    assert a.read_bytes() == b.read_bytes()
    part = run_case(cfg, runs=[2])
    full = run_case(cfg)
    assert part.runs[0].covered == full.runs[2].covered
    assert part.runs[0].volume == full.runs[2].volume


def test_confidence_region_for_user_data(case1_sample):
    c = Elliptic(1.0).level_of_probability(0.5)
    built, run = confidence_region(case1_sample[:500], c, "V.e", B=30, seed=1)
    assert built.method == "V.e" and built.quantile > 0
    assert built.region.mask(run.grid).any()
    with pytest.raises(ValueError):
        confidence_region(case1_sample, c, "V.zz")
