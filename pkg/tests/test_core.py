import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from conftest import random_source
from splatzip.core import (SH_C0, Camera, InvalidInputError, OmgGaussianSet, SourceGaussianSet, build_covariance,
                           canonical_quaternion_sign, eval_sh, normalize_quaternions, quaternion_to_matrix)

finite = st.floats(-3, 3, allow_nan=False)
quats = arrays(np.float64, 4, elements=st.floats(-1, 1)).filter(lambda q: np.linalg.norm(q) > 1e-3)
log_scales = arrays(np.float64, 3, elements=st.floats(-4, 2))


def unit(v):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


# build_covariance

def test_covariance_identity():
    assert np.array_equal(build_covariance([0, 0, 0], [1, 0, 0, 0]), np.eye(3))


def test_covariance_axis_scale():
    np.testing.assert_allclose(build_covariance([math.log(2), 0, 0], [1, 0, 0, 0]), np.diag([4.0, 1, 1]),
                               atol=1e-12)


def test_covariance_matches_naive_chain(rng):
    for _ in range(20):
        s = rng.uniform(-3, 1, 3)
        q = rng.normal(size=4)
        np.testing.assert_allclose(build_covariance(s, q), oracles.covariance(s, q), atol=1e-12, rtol=1e-10)


def test_covariance_batched(rng):
    s = rng.uniform(-3, 1, (5, 3))
    q = rng.normal(size=(5, 4))
    out = build_covariance(s, q)
    for i in range(5):
        np.testing.assert_allclose(out[i], oracles.covariance(s[i], q[i]), atol=1e-12)


def test_covariance_zero_quaternion():
    with pytest.raises(InvalidInputError):
        build_covariance([0, 0, 0], [0, 0, 0, 0])


@given(log_scales, quats)
def test_covariance_eigenvalues_are_squared_scales(s, q):
    cov = build_covariance(s, q)
    assert np.allclose(cov, cov.T, atol=1e-9)
    ev = np.sort(np.linalg.eigvalsh(cov))
    np.testing.assert_allclose(ev, np.sort(np.exp(2 * s)), rtol=1e-6, atol=1e-9)


# eval_sh

def test_sh_dc_only(rng):
    h = rng.normal(size=3)
    for _ in range(5):
        d = unit(rng.normal(size=3))
        np.testing.assert_allclose(eval_sh(h, np.zeros(45), d), 0.5 + 0.28209479177387814 * h, atol=1e-15)
    assert SH_C0 == 0.28209479177387814


def test_sh_degree1_odd_parity(rng):
    rest = np.zeros(45)
    for c in range(3):
        rest[c * 15:c * 15 + 3] = rng.normal(size=3)
    d = unit(rng.normal(size=3))
    a = eval_sh(np.zeros(3), rest, d) - 0.5
    b = eval_sh(np.zeros(3), rest, -d) - 0.5
    np.testing.assert_allclose(a, -b, atol=1e-15)


def test_sh_matches_basis_table(rng):
    for _ in range(50):
        dc, rest, d = rng.normal(size=3), rng.normal(size=45), unit(rng.normal(size=3))
        np.testing.assert_allclose(eval_sh(dc, rest, d), oracles.eval_sh(dc, rest, d), atol=1e-12)


@given(arrays(np.float64, 48, elements=finite), arrays(np.float64, 3, elements=finite).filter(
    lambda v: np.linalg.norm(v) > 1e-3), st.floats(-5, 5))
def test_sh_linear_in_coefficients(h, d, a):
    d = unit(d)
    base = eval_sh(h[:3], h[3:], d) - 0.5
    scaled = eval_sh(a * h[:3], a * h[3:], d) - 0.5
    np.testing.assert_allclose(scaled, a * base, atol=1e-9)


# quaternions

def _set_with_rotations(q):
    n = len(q)
    return SourceGaussianSet(np.zeros((n, 3)), np.zeros((n, 3)), q, np.full(n, 0.5), np.zeros((n, 3)),
                             np.zeros((n, 45)))


def test_normalize_scalar_quaternion():
    out = normalize_quaternions(_set_with_rotations([[2.0, 0, 0, 0]]))
    assert np.array_equal(out.rotations, [[1.0, 0, 0, 0]])


def test_normalize_keeps_unit_input():
    q = np.array([[0.5, 0.5, 0.5, 0.5]])
    assert np.array_equal(normalize_quaternions(_set_with_rotations(q)).rotations, q)


def test_normalize_random_batch(rng):
    q = rng.normal(size=(200, 4)) * rng.uniform(0.1, 10, (200, 1))
    out = normalize_quaternions(_set_with_rotations(q)).rotations
    assert np.all(np.abs(np.linalg.norm(out, axis=1) - 1) <= 1e-6)
    # direction preserved
    np.testing.assert_allclose(out * np.linalg.norm(q, axis=1, keepdims=True), q, rtol=1e-12)


def test_normalize_zero_lists_index():
    q = np.array([[1.0, 0, 0, 0], [0, 0, 0, 0], [0, 1.0, 0, 0], [0, 0, 0, 0]])
    with pytest.raises(InvalidInputError, match=r"\[1, 3\]"):
        normalize_quaternions(_set_with_rotations(q))


@given(quats)
def test_canonical_sign_identifies_q_and_minus_q(q):
    q = unit(q)
    a, b = canonical_quaternion_sign(q[None]), canonical_quaternion_sign(-q[None])
    assert np.array_equal(a, b)
    np.testing.assert_allclose(quaternion_to_matrix(a[0]), oracles.quat_to_matrix(q), atol=1e-12)


# containers

def test_source_set_is_immutable(rng):
    g = random_source(rng, 4)
    with pytest.raises(ValueError):
        g.positions[0, 0] = 1.0


def test_source_set_does_not_freeze_caller_arrays(rng):
    pos = rng.normal(size=(3, 3))
    SourceGaussianSet(pos, np.zeros((3, 3)), np.tile([1.0, 0, 0, 0], (3, 1)), np.ones(3) * 0.5,
                      np.zeros((3, 3)), np.zeros((3, 45)))
    pos[0, 0] = 7.0


def test_source_set_rejects_bad_opacity():
    with pytest.raises(InvalidInputError):
        SourceGaussianSet(np.zeros((1, 3)), np.zeros((1, 3)), [[1.0, 0, 0, 0]], [1.5], np.zeros((1, 3)),
                          np.zeros((1, 45)))


def test_source_set_rejects_row_mismatch():
    with pytest.raises(InvalidInputError):
        SourceGaussianSet(np.zeros((2, 3)), np.zeros((1, 3)), [[1.0, 0, 0, 0]], [0.5], np.zeros((1, 3)),
                          np.zeros((1, 45)))


def test_positive_scales(rng):
    g = random_source(rng, 50)
    assert np.all(np.exp(g.log_scales) > 0)


def test_empty_sets():
    assert SourceGaussianSet.empty().count == 0
    o = OmgGaussianSet(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 4)), np.zeros((0, 3)), np.zeros((0, 3)))
    assert o.count == 0


def test_camera_invariants():
    with pytest.raises(InvalidInputError):
        Camera(10, 10, 5, 5, np.diag([1.0, 1.0, -1.0]), np.zeros(3), 10, 10)
    with pytest.raises(InvalidInputError):
        Camera(10, 10, 5, 5, np.eye(3), np.zeros(3), 0, 10)


def test_look_at_points_forward():
    cam = Camera.look_at([0, -3, 0], [0, 0, 0], width=32, height=32)
    R = cam.rotation
    np.testing.assert_allclose(R @ R.T, np.eye(3), atol=1e-12)
    pc = R @ np.zeros(3) + cam.translation
    np.testing.assert_allclose(pc, [0, 0, 3], atol=1e-12)
    np.testing.assert_allclose(cam.center, [0, -3, 0], atol=1e-12)
