import numpy as np
import pytest

from clbf.boxes import Box
from clbf.certificate import ClbfParams, FilteredCertificate, filtered_bounds_clipped, value_bounds

from conftest import small_cert


def test_params_validation():
    ClbfParams().validate()
    with pytest.raises(ValueError):
        ClbfParams(alpha=0.9).validate()  # alpha <= beta
    with pytest.raises(ValueError):
        ClbfParams(epsilon=0.0).validate()
    with pytest.raises(ValueError):
        ClbfParams(unsafe_mask=1.0).validate()  # below alpha
    with pytest.raises(ValueError):
        ClbfParams(goal_mask=-9.0).validate()  # mask must equal c


def test_value_masks(pendulum):
    cert = small_cert(pendulum)
    assert cert.value_one(np.array([0.0, 0.0])) == -10.0  # goal
    assert cert.value_one(np.array([0.65, 0.5])) == 1.2   # unsafe
    x = np.array([0.4, -0.4])
    assert cert.value_one(x) == pytest.approx(float(cert.raw(x[None])[0]))


def test_value_masks_docking_goal_precedence(docking):
    # goal position with unsafe velocity: goal mask wins by the documented
    # precedence (the literal set definitions overlap there)
    cert = small_cert(docking)
    x = np.array([0.0, 0.0, 0.6, 0.0])
    assert cert.value_one(x) == -10.0


def test_value_bounds_fully_masked(pendulum):
    cert = small_cert(pendulum)
    g = Box(np.array([-0.1, -0.1]), np.array([0.1, 0.1]))
    assert value_bounds(cert, g) == (-10.0, -10.0)
    u = Box(np.array([0.62, 0.1]), np.array([0.68, 0.3]))
    assert value_bounds(cert, u) == (1.2, 1.2)


def test_value_bounds_sound_by_sampling(pendulum, docking, rng):
    for env in (pendulum, docking):
        cert = small_cert(env)
        for _ in range(100):
            c = rng.uniform(env.domain.lo, env.domain.hi)
            r = rng.uniform(0.0, 0.3, env.state_dim)
            B = Box(np.maximum(c - r, env.domain.lo), np.minimum(c + r, env.domain.hi))
            lo, hi = value_bounds(cert, B)
            pts = B.sample(rng, 200)
            vals = cert.value(pts)
            assert np.all(vals >= lo - 1e-10) and np.all(vals <= hi + 1e-10)


def test_value_bounds_monotone_refinement(pendulum, rng):
    cert = small_cert(pendulum)
    for _ in range(50):
        c = rng.uniform(-0.6, 0.6, 2)
        r = rng.uniform(0.05, 0.3, 2)
        B = Box(c - r, c + r)
        lo, hi = value_bounds(cert, B)
        for d in range(2):
            b1, b2 = B.split(d)
            lo1, hi1 = value_bounds(cert, b1)
            lo2, hi2 = value_bounds(cert, b2)
            assert min(lo1, lo2) >= lo - 1e-12
            assert max(hi1, hi2) <= hi + 1e-12


def test_clipped_bounds_tighter_and_sound(pendulum, rng):
    cert = small_cert(pendulum)
    # straddles the goal boundary: clipped bound must not feed the goal
    # interior through the net, but stays sound for the filtered value
    B = Box(np.array([0.15, -0.1]), np.array([0.3, 0.1]))
    lo_c, hi_c = filtered_bounds_clipped(cert, B)
    lo_v, hi_v = value_bounds(cert, B)
    assert lo_c >= lo_v - 1e-12 and hi_c <= hi_v + 1e-12
    pts = B.sample(rng, 2000)
    vals = cert.value(pts)
    assert np.all(vals >= lo_c - 1e-10) and np.all(vals <= hi_c + 1e-10)


def test_clipped_bounds_entirely_unsafe(docking):
    cert = small_cert(docking)
    B = Box(np.array([2.1, 0.0, 0.0, 0.0]), np.array([2.4, 0.5, 0.2, 0.2]))
    assert filtered_bounds_clipped(cert, B) == (1.2, 1.2)
