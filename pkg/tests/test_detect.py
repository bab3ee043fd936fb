import json
import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from percdetect.detect import (
    CalibratedPhi,
    CalibrationEntry,
    CalibrationTable,
    TestConfig,
    TheoryPhi,
    calibrate_phi,
    calibrate_schedule,
    dyadic_schedule,
    error_probability,
    max_cluster_test,
    multi_test,
    never_reject_bound,
    never_reject_bound_mp,
    phi_theory,
    phi_theory_mp,
    quantile_phi,
    s_function,
    s_max,
    tau0_from_uncertainty,
    uncertainty_check,
    weak_bound_constant,
    weak_uncertainty_bound,
)
from percdetect.lattice import Lattice
from percdetect.noise import (
    ObservedImage,
    discrete_symmetric,
    gaussian,
    laplace,
    replicate_rng,
    student_t,
    uniform,
)

# frozen from 30-digit mpmath evaluations of the closed forms
K0_AT_03085 = 1.34027622191713914
PHI_AT_03085_N100 = 6.17220009816156809
BOUND_N10 = 0.00261825266949441853
BOUND_N4 = 0.0105115063890400593
S_AT_INV_E = 0.0247037700560981185
WEAK_M = 0.0473664676619159168
WEAK_ARGMAX = 0.172290276127176740


def test_phi_theory_cancelling_example():
    K0, phi = phi_theory(math.e, 0.5 - (math.e - 1) / 18)
    assert K0 == pytest.approx(2.0, rel=1e-14)
    assert phi == pytest.approx(2.0, rel=1e-14)


def test_phi_theory_fixture():
    K0, phi = phi_theory(100, 0.3085)
    assert K0 == pytest.approx(K0_AT_03085, rel=1e-13)
    assert phi == pytest.approx(PHI_AT_03085_N100, rel=1e-13)
    K0_mp, phi_mp = phi_theory_mp(100, mpmath.mpf("0.3085"))
    assert float(K0_mp) == pytest.approx(K0_AT_03085, rel=1e-15)


def test_phi_theory_blows_up_near_half():
    Ks = [phi_theory(64, 0.5 - d)[0] for d in (1e-1, 1e-3, 1e-6, 1e-9)]
    assert Ks == sorted(Ks) and Ks[-1] > 1e8


def test_phi_theory_factor_knob():
    assert phi_theory(64, 0.3, factor=1.0)[0] == pytest.approx(phi_theory(64, 0.3)[0] / 2)


@pytest.mark.parametrize("p", [0.0, 0.5, 0.7, -0.1])
def test_phi_theory_domain(p):
    with pytest.raises(ValueError):
        phi_theory(64, p)


def test_error_probability_gaussian():
    assert error_probability(gaussian(), 1.0, 0.5) == pytest.approx(stats.norm.sf(0.5), rel=1e-14)
    assert error_probability(gaussian(), 2.0, 1.0) == pytest.approx(stats.norm.sf(0.5), rel=1e-14)


def test_never_reject_bound_fixtures():
    assert never_reject_bound(10) == pytest.approx(BOUND_N10, rel=1e-14)
    assert never_reject_bound(4) == pytest.approx(BOUND_N4, rel=1e-14)
    assert math.expm1(math.log(100) / 100) == pytest.approx(0.0471285480509, rel=1e-11)
    assert phi_theory(4, 0.5 - 0.01)[1] > 16


def test_never_reject_bound_decreases():
    b = [never_reject_bound(N) for N in (2, 4, 16, 64, 512)]
    assert all(x > y for x, y in zip(b, b[1:]))
    assert b[-1] < 1e-4


@settings(max_examples=300)
@given(st.integers(2, 512), st.floats(1e-6, 1 - 1e-6))
def test_phi_exceeds_site_count_inside_bound(N, u):
    # exact check: Delta < bound(N) implies phi_theory > N^2
    with mpmath.workdps(60):
        delta = mpmath.mpf(u) * never_reject_bound_mp(N)
        _, phi = phi_theory_mp(N, mpmath.mpf(1) / 2 - delta)
        assert phi > N * N


def test_s_function_values():
    assert s_function(1.0) == 0.0
    assert s_function(1 / math.e) == pytest.approx(S_AT_INV_E, rel=1e-14)
    x, s = s_max()
    assert x == pytest.approx(1 / math.e, abs=1e-7)
    assert s == pytest.approx(S_AT_INV_E, rel=1e-12)
    assert s < 0.25 / 10  # the 0.25 figure does not reproduce
    with pytest.raises(ValueError):
        s_function(0.0)


def test_s_function_monotone_pieces():
    left = s_function(np.linspace(1e-6, 1 / math.e, 1000))
    right = s_function(np.linspace(1 / math.e, 1, 1000))
    assert np.all(np.diff(left) > 0)
    assert np.all(np.diff(right) < 0)


def test_weak_bound_constant_grid_oracle():
    x, M = weak_bound_constant()
    assert M == pytest.approx(WEAK_M, rel=1e-9)
    assert x == pytest.approx(WEAK_ARGMAX, abs=1e-6)
    assert round(M, 6) == 0.047366


def test_weak_uncertainty_bound_scaling():
    g = gaussian()
    assert g.density_at_zero() == pytest.approx(1 / math.sqrt(2 * math.pi), rel=1e-14)
    assert weak_uncertainty_bound(g, 64) == pytest.approx(2 * weak_uncertainty_bound(g, 128), rel=1e-14)


def test_uncertainty_check_examples():
    g = gaussian()
    rep = uncertainty_check(g, 0.01, 10)
    assert rep.rhs == pytest.approx(BOUND_N10, rel=1e-14)
    assert rep.lhs == pytest.approx(stats.norm.cdf(0.01) - 0.5, rel=1e-12)
    assert rep.detectable == (rep.lhs > rep.rhs)
    assert uncertainty_check(g, 50.0, 2).detectable
    for N in (2, 10, 512):
        assert not uncertainty_check(g, 0.0, N).detectable
    assert json.dumps(rep.to_dict())


def test_uncertainty_check_rejects_atom_at_zero():
    with pytest.raises(ValueError):
        uncertainty_check(discrete_symmetric([-1, 0, 1], [1, 2, 1]), 1.0, 8)


@pytest.mark.parametrize("model", [gaussian(), laplace(), uniform(), student_t(4)], ids=lambda m: m.family)
def test_uncertainty_monotone(model):
    rhos = np.linspace(0, 0.05, 41)
    Ns = [2, 3, 5, 8, 16, 32, 64, 128]
    grid = np.array([[uncertainty_check(model, r, N).detectable for N in Ns] for r in rhos])
    assert np.all(np.diff(grid.astype(int), axis=0) >= 0)
    assert np.all(np.diff(grid.astype(int), axis=1) >= 0)


def test_tau0_solves_bound():
    rho = tau0_from_uncertainty(gaussian(), 1.0, 10)
    assert abs(stats.norm.cdf(rho) - 0.5 - BOUND_N10) < 1e-9
    assert uncertainty_check(gaussian(), rho, 10).detectable
    assert not uncertainty_check(gaussian(), rho * (1 - 1e-9), 10).detectable


def test_tau0_scaling_and_trend():
    g = gaussian()
    t = [tau0_from_uncertainty(g, 1.0, N) for N in (4, 8, 16, 64, 256)]
    assert all(a > b for a, b in zip(t, t[1:]))
    assert tau0_from_uncertainty(g, 3.0, 16) == pytest.approx(3 * t[2], rel=1e-12)


def test_config_validation():
    with pytest.raises(ValueError):
        TestConfig(8, 0.5, 3.0, "theory")
    with pytest.raises(ValueError):
        TestConfig(8, 0.5, 3.0, "calibrated", K0=1.0)
    with pytest.raises(ValueError):
        TestConfig(8, -0.5, 3.0, "theory", K0=1.0)
    with pytest.raises(ValueError):
        TestConfig(8, 0.5, 3.0, "theory", K0=1.0, side="up")
    cfg = TestConfig.theory(64, 0.5, gaussian(), 1.0)
    assert cfg.K0 == pytest.approx(phi_theory(64, stats.norm.sf(0.5))[0])
    assert cfg.phi == pytest.approx(cfg.K0 * math.log(64))


def _img(values):
    return ObservedImage.from_array(np.asarray(values, dtype=float))


def test_single_test_examples():
    n = 8
    ones, zeros = _img(np.ones((n, n))), _img(np.zeros((n, n)))
    assert max_cluster_test(ones, TestConfig(n, 0.5, n * n, "theory", K0=1.0)).reject
    res = max_cluster_test(zeros, TestConfig(n, 0.5, 0.5, "theory", K0=1.0))
    assert res.statistic == 0 and not res.reject


def test_boundary_is_inclusive():
    y = np.zeros((6, 6))
    y[2, 1:5] = 1.0
    img = _img(y)
    assert max_cluster_test(img, TestConfig(6, 0.5, 4.0, "theory", K0=1.0, side="plus")).reject
    assert not max_cluster_test(img, TestConfig(6, 0.5, 4.0 + 1e-9, "theory", K0=1.0, side="plus")).reject


def test_sides():
    y = np.zeros((6, 6))
    y[0, :3] = -1.0
    y[5, :2] = 1.0
    img = _img(y)
    cfg = lambda side: TestConfig(6, 0.5, 3.0, "theory", K0=1.0, side=side)
    both = max_cluster_test(img, cfg("both"))
    assert (both.T_plus, both.T_minus, both.statistic, both.reject) == (2, 3, 3, True)
    assert not max_cluster_test(img, cfg("plus")).reject
    assert max_cluster_test(img, cfg("minus")).reject


def test_decision_rule_reproducible():
    y = replicate_rng(3, 0).standard_normal((16, 16))
    cfg = TestConfig(16, 0.5, 10.0, "theory", K0=1.0)
    a, b = max_cluster_test(_img(y), cfg), max_cluster_test(_img(y), cfg)
    assert a == b
    assert a.reject == (a.statistic >= a.phi)


def test_config_size_mismatch():
    with pytest.raises(ValueError):
        max_cluster_test(_img(np.zeros((4, 4))), TestConfig(5, 0.5, 1.0, "theory", K0=1.0))


def test_quantile_phi():
    s = np.arange(1, 101)
    # inverted-cdf 0.95 quantile of 1..100 is 95; +1 keeps T >= phi at level <= alpha
    assert quantile_phi(s, 0.05) == 96
    assert np.mean(s >= quantile_phi(s, 0.05)) <= 0.05


def test_calibration_deterministic_and_serializable():
    a = calibrate_phi(16, 0.5, gaussian(), 1.0, 0.1, 200, seed=5)
    b = calibrate_phi(16, 0.5, gaussian(), 1.0, 0.1, 200, seed=5, workers=3)
    assert a == b
    back = CalibrationEntry.from_dict(json.loads(json.dumps(a.to_dict())))
    assert back.phi == a.phi and back.seed == 5 and back.M == 200
    d = a.to_dict()
    assert {"schema_version", "N", "family", "params", "sigma", "tau", "M", "seed", "quantiles"} <= set(d)


def test_calibration_median():
    e = calibrate_phi(16, 0.5, gaussian(), 1.0, 0.5, 400, seed=9)
    assert e.phi == pytest.approx(np.quantile(e.samples(), 0.5, method="inverted_cdf") + 1)


def test_calibration_argument_checks():
    with pytest.raises(ValueError):
        calibrate_phi(16, 0.5, gaussian(), 1.0, 0.05, 50, seed=1)
    with pytest.raises(ValueError):
        calibrate_phi(16, 0.5, gaussian(), 1.0, 0.7, 200, seed=1)


def test_small_batch_warns():
    with pytest.warns(RuntimeWarning):
        calibrate_phi(8, 0.5, gaussian(), 1.0, 0.01, 100, seed=1)


def test_table_roundtrip_and_lookup():
    table = calibrate_schedule(16, [0.5, 0.25], gaussian(), 1.0, 0.1, 200, seed=2, levels=[0.05])
    back = CalibrationTable.from_dict(json.loads(json.dumps(table.to_dict())))
    assert back.lookup(0.25).phi == table.lookup(0.25).phi
    assert CalibratedPhi(back)(0.5, 0.05) == table.lookup(0.5).phi_at(0.05)
    with pytest.raises(KeyError):
        back.lookup(0.3)
    with pytest.raises(ValueError):
        CalibrationTable.from_dict({"schema_version": 99, "entries": []})


def test_dyadic_schedule():
    s = dyadic_schedule(1.0, 0.1)
    assert s == [0.5, 0.25, 0.125, 0.0625]
    assert len(dyadic_schedule(1.0, 1e-9, N=5)) == 5
    with pytest.raises(ValueError):
        dyadic_schedule(1.0, 1.0)
    with pytest.raises(ValueError):
        dyadic_schedule(1.0, 0.0)


def test_multi_test_rejects_first_step_on_strong_signal():
    img = _img(np.full((16, 16), 0.6))
    res = multi_test(img, 1.0, 0.1, TheoryPhi(gaussian(), 1.0, 16), skip_crossing=False)
    assert res.overall_reject and res.first_rejecting_k == 1
    assert res.k_max == 4 and len(res.decisions) == 1


def test_multi_test_unreachable_phi_runs_full_schedule():
    n = 32
    y = np.clip(replicate_rng(1, 0).standard_normal((n, n)), -1, 1)
    never = lambda a, level: n * n + 1
    res = multi_test(_img(y), 1.0, 0.1, never, skip_crossing=False)
    assert not res.overall_reject and res.first_rejecting_k is None
    assert [d.k for d in res.decisions] == [1, 2, 3, 4]
    assert res.per_test_level == pytest.approx(0.05 / 4)
    a = [d.a for d in res.decisions]
    assert all(x > y for x, y in zip(a, a[1:]))


def test_multi_test_skips_crossing_thresholds():
    n = 32
    y = np.clip(replicate_rng(2, 0).standard_normal((n, n)), -1, 1)
    never = lambda a, level: n * n + 1
    res = multi_test(_img(y), 1.0, 1e-3, never)
    cp, cm = res.crossing_levels
    for d in res.decisions:
        assert d.skipped == (d.a <= cp and d.a <= cm)
    assert res.family_size == sum(not d.skipped for d in res.decisions)
    assert len(res.decisions) <= min(math.ceil(math.log2(1 / 1e-3)), n)


def test_multi_test_level_none():
    y = np.zeros((8, 8))
    res = multi_test(_img(y), 1.0, 0.1, lambda a, level: 100.0, level_adjust="none", skip_crossing=False)
    assert res.per_test_level == 0.05


def test_multi_test_requires_range():
    with pytest.raises(ValueError):
        multi_test(_img(np.full((4, 4), 2.0)), 1.0, 0.1, lambda a, level: 1.0)
    with pytest.raises(ValueError):
        multi_test(_img(np.zeros((4, 4))), 1.0, 0.1, lambda a, level: 1.0, level_adjust="holm")


def _marked_freq(values, a):
    return float(np.mean(values >= a))


def test_null_marking_probability_is_subcritical():
    # under f = 0 each site is marked with probability P(eps >= a / sigma) < 1/2
    sigma, a = 1.5, 0.6
    y = sigma * gaussian().sample(replicate_rng(11, 0), 200_000)
    p = error_probability(gaussian(), sigma, a)
    assert p < 0.5
    assert abs(_marked_freq(y, a) - p) < 3 * math.sqrt(p * (1 - p) / y.size)


def test_signal_marking_probability_is_supercritical():
    sigma, a = 1.5, 0.6
    y = a + sigma * gaussian().sample(replicate_rng(12, 0), 200_000)
    p = float(gaussian().sf(-a / (2 * sigma)))
    assert p > 0.5
    assert abs(_marked_freq(y, a / 2) - p) < 3 * math.sqrt(p * (1 - p) / y.size)
