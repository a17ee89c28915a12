import math

import numpy as np
import pytest

from bornwalk.detect import DetectionConfig
from bornwalk.experiments import (estimate_p1, estimate_p_phi, haar_compare, last_row_stats,
                                  ratio_interval, run_ensemble, run_ensemble_grid, run_first_hit,
                                  scaling_study, short_time_profile, wilson_interval)
from bornwalk.walk import WalkConfig

from oracles import n2_row_match_probability

C0_82 = np.sqrt([0.8, 0.2]).astype(complex)


def test_wilson_interval_contains_p():
    lo, hi = wilson_interval(30, 100)
    assert lo < 0.3 < hi
    assert wilson_interval(0, 10)[0] == 0.0
    lo, hi = wilson_interval(10, 10)
    assert hi == pytest.approx(1.0) and lo < 1.0


def test_ratio_interval_matches_simulation():
    rng = np.random.default_rng(0)
    n, p = 5000, np.array([0.05, 0.03, 0.92])
    draws = rng.multinomial(n, p, size=20000)
    r = draws[:, 0] / draws[:, 1]
    _, se, log_se = ratio_interval(int(n * p[0]), int(n * p[1]), n)
    assert np.log(r).std() == pytest.approx(log_se, rel=0.05)


def test_estimate_p1_closed_form():
    est = estimate_p1(0.5, 0.1, 1_000_000, seed=1)
    assert est.expected == pytest.approx(0.1)
    assert abs(est.z_score) < 4


def test_estimate_p_phi_closed_form():
    est = estimate_p_phi(0.5, 0.1, 2_000_000, seed=2)
    assert est.expected == pytest.approx(0.025)
    assert abs(est.z_score) < 4


def test_estimators_reject_bad_ring():
    with pytest.raises(ValueError):
        estimate_p1(0.98, 0.1, 10)


def test_component_product_vs_row_match_rate():
    # ring fraction times in-disk fraction is eps^2 / 4 for every c_mag
    eps = 0.1
    product = 2 * 0.5 * eps * eps / (8 * 0.5)
    assert product == pytest.approx(eps ** 2 / 4)
    # the N = 2 row match ties the off-diagonal magnitude to the diagonal
    # one; the product is exact only when the off-diagonal circle is wider
    # than the acceptance disk on both sides (large diagonal targets)
    big = n2_row_match_probability(0.8 ** 0.5, 0.2 ** 0.5, eps)
    assert big == pytest.approx(product, rel=1e-6)
    small = n2_row_match_probability(0.5, 0.75 ** 0.5, eps)
    assert small == pytest.approx(0.692 * product, rel=1e-3)


@pytest.mark.parametrize("eps", [0.1, 0.2])
def test_ensemble_n2_matches_quadrature(eps):
    s = run_ensemble(C0_82, DetectionConfig(eps), 2_000_000, seed=3)
    m1, m2 = math.sqrt(0.8), math.sqrt(0.2)
    for k, (td, to) in enumerate([(m1, m2), (m2, m1)]):
        est = s.probability(k)
        exact = n2_row_match_probability(td, to, eps)
        assert abs(est.value - exact) <= 4 * est.stderr, (k, est.value, exact)


def test_ensemble_grid_common_stream():
    cfgs = [DetectionConfig(e) for e in (0.3, 0.2)]
    grid = run_ensemble_grid(C0_82, cfgs, 200_000, seed=4)
    single = run_ensemble(C0_82, cfgs[1], 200_000, seed=4)
    np.testing.assert_array_equal(grid[1].counts, single.counts)
    # nested tolerances on a common stream: every row count can only grow with eps
    assert np.all(grid[0].counts >= grid[1].counts)


def test_ensemble_rejects_zero_component():
    with pytest.raises(ValueError):
        run_ensemble(np.array([1.0, 0.0]), DetectionConfig(0.1), 10)


def test_summary_to_dict():
    s = run_ensemble(C0_82, DetectionConfig(0.3), 50_000, seed=0)
    d = s.to_dict()
    assert d["schema_version"] == 1
    assert len(d["probabilities"]) == 2
    assert s.total == s.counts.sum() + s.no_hit


def test_first_hit_deterministic_and_worker_independent():
    wc = WalkConfig(dt=0.01, sigma=0.3, t_max=3.0, seed=5)
    dc = DetectionConfig(0.3)
    a = run_first_hit(C0_82, wc, dc, 64, block_size=16)
    b = run_first_hit(C0_82, wc, dc, 64, block_size=16, workers=2)
    np.testing.assert_array_equal(a.counts, b.counts)
    assert a.no_hit == b.no_hit


def test_first_hit_trials():
    wc = WalkConfig(dt=0.01, sigma=0.3, t_max=3.0, seed=6)
    s, trials = run_first_hit(C0_82, wc, DetectionConfig(0.3), 32, return_trials=True)
    assert len(trials) == 32
    for t in trials:
        if t.hit is not None:
            assert 0 <= t.t_hit <= 3.0 + 1e-12


def test_short_time_monotone():
    wc = WalkConfig(dt=0.01, sigma=0.3, seed=7)
    prof = short_time_profile(C0_82, wc, DetectionConfig(0.3), [0.5, 1.0, 2.0], 64)
    nh = [p.no_hit for p in prof]
    assert nh == sorted(nh, reverse=True)
    with pytest.raises(ValueError):
        short_time_profile(C0_82, wc, DetectionConfig(0.3), [1.0, 0.5], 8)


def test_scaling_study_n2_slope():
    out = scaling_study(C0_82, [0.3, 0.2, 0.15, 0.1], 1_000_000, seed=8)
    # N = 2 row match scales as eps^2
    assert abs(out["slope"] - 2.0) <= 4 * out["slope_stderr"] + 0.05
    with pytest.raises(ValueError):
        scaling_study(C0_82, [0.1, 0.2, 0.3], 10)


def test_haar_compare_n2():
    out = haar_compare(2, 200_000, seed=9)
    for mean, se in out["param"] + out["haar"]:
        assert abs(mean - 0.5) <= 4 * se


def test_last_row_phases_uniform():
    out = last_row_stats(3, 200_000, seed=10)
    assert out["failed"] == 0
    assert min(out["xi_pvalue"]) > 1e-4
