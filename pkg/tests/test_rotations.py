import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from dfa.rotations import exp_so3, geodesic_midpoint, karcher_mean, log_so3, rotation_between, skew

from oracles import random_rotation, random_unit

vec3 = st.tuples(*[st.floats(-3.0, 3.0, allow_nan=False)] * 3).map(np.array)


def test_skew_matches_cross_product():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(2, 3))
    assert np.allclose(skew(a) @ b, np.cross(a, b))


@given(vec3)
@settings(max_examples=200, deadline=None)
def test_exp_is_proper_rotation(w):
    R = exp_so3(w)
    assert np.allclose(R @ R.T, np.eye(3), atol=1e-12)
    assert np.isclose(np.linalg.det(R), 1.0)


@given(vec3)
@settings(max_examples=200, deadline=None)
def test_log_inverts_exp_below_pi(w):
    if np.linalg.norm(w) >= np.pi - 1e-3:
        w = w / np.linalg.norm(w) * (np.pi - 1e-3)
    assert np.allclose(log_so3(exp_so3(w)), w, atol=1e-9)


def test_log_near_pi_recovers_axis():
    axis = np.array([1.0, 2.0, -2.0]) / 3.0
    R = exp_so3(np.pi * axis)
    w = log_so3(R)
    assert np.isclose(np.linalg.norm(w), np.pi)
    assert np.allclose(exp_so3(w), R, atol=1e-9)


def test_small_angle_series():
    w = np.array([1e-10, -2e-10, 3e-10])
    assert np.allclose(exp_so3(w), np.eye(3) + skew(w), atol=1e-18)
    assert np.allclose(log_so3(exp_so3(w)), w, rtol=1e-6, atol=0)


def test_rotation_between_maps_a_to_b():
    rng = np.random.default_rng(1)
    a, b = random_unit(rng, 50), random_unit(rng, 50)
    R = exp_so3(rotation_between(a, b))
    assert np.allclose(np.einsum("nij,nj->ni", R, a), b, atol=1e-12)


def test_rotation_between_antiparallel_and_parallel():
    a = np.array([0.0, 0.0, 1.0])
    assert np.allclose(exp_so3(rotation_between(a, -a)) @ a, -a)
    assert np.allclose(rotation_between(a, a), 0.0)


def test_midpoint_of_rotation_with_itself():
    R = random_rotation(np.random.default_rng(2))
    assert np.allclose(geodesic_midpoint(R, R), R, atol=1e-12)


def test_midpoint_halves_relative_angle():
    axis = np.array([0.0, 1.0, 0.0])
    M = geodesic_midpoint(exp_so3(0.2 * axis), exp_so3(0.6 * axis))
    assert np.allclose(M, exp_so3(0.4 * axis), atol=1e-12)


def test_karcher_mean_of_coaxial_rotations_is_mean_angle():
    axis = np.array([1.0, 1.0, 0.0]) / np.sqrt(2)
    Rs = np.stack([exp_so3(t * axis) for t in (0.1, 0.2, 0.6)])
    assert np.allclose(karcher_mean(Rs), exp_so3(0.3 * axis), atol=1e-12)
