import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from percdetect.lattice import DiscretizedPicture, Lattice
from percdetect.noise import (
    DetectorDevice,
    NoiseModel,
    ObservedImage,
    apply_noise,
    detector_truncate,
    discrete_symmetric,
    estimate_pi_D,
    gaussian,
    laplace,
    parse_noise,
    replicate_rng,
    student_t,
    uniform,
    validate_nondegeneracy,
)

CONTINUOUS = [gaussian(), laplace(), uniform(), student_t(5.0), student_t(2.5)]
ALL = CONTINUOUS + [discrete_symmetric([-1, 0, 1], [1, 2, 1]), discrete_symmetric([-2, -1, 1, 2], [1, 3, 3, 1])]


@pytest.mark.parametrize("model", ALL, ids=lambda m: m.descriptor()[:24])
def test_unit_variance_and_zero_mean(model):
    mean, var = model.moments()
    assert abs(mean) < 1e-9
    assert abs(var - 1) < 1e-6


@pytest.mark.parametrize("model", ALL, ids=lambda m: m.descriptor()[:24])
def test_cdf_symmetry(model):
    xs = np.linspace(-3, 3, 121)
    if model.is_discrete:
        xs = np.concatenate([xs, model.support])
    np.testing.assert_allclose(model.cdf(-xs), 1 - model.cdf_left(xs), atol=1e-12)


@pytest.mark.parametrize("model", ALL, ids=lambda m: m.descriptor()[:24])
def test_empirical_symmetry(model):
    eps = model.sample(np.random.default_rng(5), 200_000)
    for x in (0.5, 1.0, 2.0):
        diff = np.mean(eps > x) - np.mean(eps < -x)
        assert abs(diff) < 4 * math.sqrt(2 / eps.size)


@pytest.mark.parametrize("model", ALL, ids=lambda m: m.descriptor()[:24])
def test_sampler_matches_cdf(model):
    eps = model.sample(np.random.default_rng(8), 100_000)
    for x in (-1.0, 0.0, 0.7):
        assert abs(np.mean(eps <= x) - float(model.cdf(x))) < 0.01


@pytest.mark.parametrize("model", CONTINUOUS, ids=lambda m: m.descriptor())
def test_quantile_cdf_consistency(model):
    u = np.linspace(1e-6, 1 - 1e-6, 2001)
    back = model.cdf(model.quantile(u))
    assert np.all(back >= u - 1e-9)
    assert np.all(back <= u + 1e-9)


def test_student_t_needs_finite_variance():
    with pytest.raises(ValueError):
        student_t(2.0)


def test_discrete_must_be_symmetric():
    with pytest.raises(ValueError):
        discrete_symmetric([-1, 1], [0.3, 0.7])
    with pytest.raises(ValueError):
        discrete_symmetric([0], [1])


def test_discrete_rescaled_to_unit_variance():
    m = discrete_symmetric([-3, 3], [1, 1])
    assert m.support == (-1.0, 1.0)


def test_unknown_family():
    with pytest.raises(ValueError):
        NoiseModel("cauchy")


@pytest.mark.parametrize(
    "text, family",
    [("gaussian", "gaussian"), ("normal", "gaussian"), ("laplace", "laplace"), ("t:nu=4", "student_t"),
     ("discrete:support=-1,0,1;weights=1,2,1", "discrete_symmetric")],
)
def test_parse_noise(text, family):
    m = parse_noise(text)
    assert m.family == family
    assert parse_noise(m.descriptor()) == m


@pytest.mark.parametrize("text", ["student_t", "gaussian:nu=3", "discrete:support=1,-1", "laplace:bad"])
def test_parse_noise_errors(text):
    with pytest.raises(ValueError):
        parse_noise(text)


def test_nondegeneracy_gaussian():
    rep = validate_nondegeneracy(gaussian())
    assert rep.ok and rep.mode == "density" and rep.m == 0


def test_nondegeneracy_two_point_plateau():
    rep = validate_nondegeneracy(discrete_symmetric([-1, 1], [0.5, 0.5]))
    # F = 1/2 on [-1, 1): inf{F >= 1/2} = -1 but sup{F <= 1/2} = 1
    assert not rep.ok
    assert (rep.m_plus, rep.m_minus) == (-1.0, 1.0)


def test_nondegeneracy_three_point_jump():
    rep = validate_nondegeneracy(discrete_symmetric([-1, 0, 1], [0.25, 0.5, 0.25]))
    assert rep.ok and rep.mode == "jump" and rep.m == 0


def test_apply_noise_is_deterministic():
    pic = DiscretizedPicture.from_array(np.zeros((8, 8)))
    a = apply_noise(pic, 1.0, gaussian(), 42)
    b = apply_noise(pic, 1.0, gaussian(), 42)
    np.testing.assert_array_equal(a.values, b.values)
    assert not np.array_equal(a.values, apply_noise(pic, 1.0, gaussian(), 43).values)


def test_apply_noise_moments():
    pic = DiscretizedPicture.from_array(np.zeros((1000, 1000)))
    y = apply_noise(pic, 1.0, gaussian(), 1).values
    assert abs(y.mean()) < 0.005
    assert abs(y.var() - 1) < 0.01
    pic5 = DiscretizedPicture.from_array(np.full((1000, 1000), 5.0))
    assert abs(apply_noise(pic5, 1.0, gaussian(), 2).values.mean() - 5) < 0.005


def test_apply_noise_rejects_bad_sigma():
    pic = DiscretizedPicture.from_array(np.zeros((2, 2)))
    with pytest.raises(ValueError):
        apply_noise(pic, 0.0, gaussian(), 1)


def test_replicate_rng_independent_of_order():
    a = replicate_rng(7, 3).random(4)
    replicate_rng(7, 2).random(100)
    np.testing.assert_array_equal(a, replicate_rng(7, 3).random(4))
    assert not np.array_equal(a, replicate_rng(7, 4).random(4))


def test_truncate_examples():
    img = ObservedImage.from_array(np.array([[0.5, 2.0], [-3.0, 1.0]]))
    out = detector_truncate(img, DetectorDevice(1.0))
    np.testing.assert_array_equal(out.values, [[0.5, 1.0], [-1.0, 1.0]])
    assert out.truncated and out.detector_range == 1.0


@pytest.mark.parametrize("r", [0.0, -1.0, math.inf, math.nan])
def test_device_range_must_be_positive_finite(r):
    with pytest.raises(ValueError):
        DetectorDevice(r)


def test_truncated_image_invariant():
    with pytest.raises(ValueError):
        ObservedImage(Lattice(1), np.array([[2.0]]), 1.0, True, 1.0)


finite = st.floats(-1e6, 1e6, allow_nan=False)


@settings(max_examples=200)
@given(st.lists(finite, min_size=4, max_size=4), st.lists(finite, min_size=4, max_size=4),
       st.floats(1e-3, 1e3))
def test_truncation_properties(v, w, r):
    y = np.array(v).reshape(2, 2)
    y2 = np.maximum(y, np.array(w).reshape(2, 2))
    dev = DetectorDevice(r)
    d1 = detector_truncate(ObservedImage.from_array(y), dev)
    d2 = detector_truncate(d1, dev)
    np.testing.assert_array_equal(d1.values, d2.values)
    assert np.all(np.abs(d1.values) <= r)
    inside = np.abs(y) <= r
    np.testing.assert_array_equal(d1.values[inside], y[inside])
    assert np.all(d1.values <= detector_truncate(ObservedImage.from_array(y2), dev).values)


def test_pi_D_huge_range():
    pic = DiscretizedPicture.from_array(np.zeros((4, 4)))
    assert estimate_pi_D(pic, 1.0, gaussian(), DetectorDevice(1e6), 50, 0).estimate == 1.0


def test_pi_D_single_site_matches_normal_cdf():
    pic = DiscretizedPicture.from_array(np.zeros((1, 1)))
    est = estimate_pi_D(pic, 1.0, gaussian(), DetectorDevice(1.96), 4000, 3)
    expected = 1 - 2 * stats.norm.sf(1.96)
    assert abs(expected - 0.950004) < 1e-6
    assert abs(est.estimate - expected) <= 3 * math.sqrt(expected * (1 - expected) / 4000)
