import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from igbeat import gof, igdist
from igbeat.igdist import IGParams, IGTrajectory


def test_bounds_constants():
    assert round(gof.ks_bound(600), 3) == 0.056
    assert round(gof.ks_bound(1800), 3) == 0.032
    with pytest.raises(ValueError):
        gof.ks_bound(0)


def test_exact_quantile_match():
    r = gof.ks_distance([0.75, 0.25])
    np.testing.assert_allclose(r.quantiles, [0.25, 0.75])
    assert r.ksd == 0.0 and r.passed


def test_empty_and_out_of_range():
    with pytest.raises(ValueError):
        gof.ks_distance([])
    with pytest.raises(ValueError):
        gof.ks_distance([0.2, 1.2])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=200), st.randoms())
def test_permutation_invariant(u, rnd):
    v = list(u)
    rnd.shuffle(v)
    assert gof.ks_distance(u).ksd == gof.ks_distance(v).ksd


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=2, max_size=300))
def test_relation_to_classical_statistic(u):
    # mid-rank deviation is the classical two-sided D minus half a rank step
    n = len(u)
    d = stats.kstest(u, "uniform").statistic
    assert gof.ks_distance(u).ksd == pytest.approx(d - 0.5 / n, abs=1e-12)


def test_median_targets_give_half():
    p = IGParams(np.array([0.8, 1.1, 0.6]), np.array([0.05, 0.2, 0.1]))
    med = np.array([igdist_median(m, s) for m, s in zip(p.mu, p.sigma)])
    np.testing.assert_allclose(gof.rescale(IGTrajectory(p, med)), 0.5, atol=1e-9)


def igdist_median(mu, sigma):
    lam = mu**3 / sigma**2
    return stats.invgauss(mu / lam, scale=lam).median()


def test_tiny_target_rescales_to_zero():
    u = gof.rescale(IGTrajectory(IGParams(np.array([0.8]), np.array([0.05])), np.array([1e-4])))
    assert u[0] < 1e-12


def test_uniform_under_true_model():
    rng = np.random.default_rng(2)
    mu = 0.8 + 0.05 * np.sin(np.arange(10_000) / 7)
    sigma = np.full(10_000, 0.05)
    x = igdist.sample(IGParams(mu, sigma), rng)
    r = gof.evaluate_trajectory(IGTrajectory(IGParams(mu, sigma), x))
    assert r.passed
    assert abs(r.lag1_autocorr) < 0.05


def test_pass_rate_near_nominal():
    rng = np.random.default_rng(5)
    p = IGParams(np.full(300, 0.9), np.full(300, 0.06))
    ok = [gof.evaluate_trajectory(IGTrajectory(p, igdist.sample(p, rng))).passed for _ in range(400)]
    assert 0.92 <= np.mean(ok) <= 0.99


def test_plot_rows_and_csv():
    r = gof.ks_distance([0.1, 0.5, 0.9])
    rows = gof.ks_plot_rows(r)
    assert len(rows) == 3
    text = gof.ks_plot_csv(r)
    lines = text.splitlines()
    assert lines[0] == "q,u,lower_band,upper_band" and len(lines) == 4
    for q, u, lo, hi in rows:
        assert 0 <= lo <= q <= hi <= 1


def test_uniform_grid_on_identity():
    n = 50
    r = gof.ks_distance((np.arange(n) + 0.5) / n)
    assert r.ksd < 0.5 / n


def test_svg_marks_failure_only():
    good = gof.ks_plot_svg(gof.ks_distance((np.arange(100) + 0.5) / 100))
    bad_report = gof.ks_distance(np.linspace(0, 0.5, 100))
    bad = gof.ks_plot_svg(bad_report)
    assert good.startswith("<svg") and "max-deviation" not in good
    assert "max-deviation" in bad
    assert bad_report.worst_index == 99


def test_lag1_autocorrelation():
    assert math.isnan(gof.lag1_autocorrelation(np.array([0.1, 0.2])))
    alt = np.tile([0.1, 0.9], 50)
    assert gof.lag1_autocorrelation(alt) < -0.9
