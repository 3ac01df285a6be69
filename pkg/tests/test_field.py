import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from splatzip.core import OmgGaussianSet, SourceGaussianSet
from splatzip.field import (FIELD_BUDGET_BYTES, DistillConfig, FieldArch, FieldWeights, TrainingDivergedError,
                            decode, decode_features, distill_fit, export_decoded, normalize_positions,
                            positional_encoding, space_feature)
from splatzip.rasterizer import render
from splatzip.synth import orbit_cameras, synth_scene

BOX = [[-1.0, -1.0, -1.0], [1.0, 1.0, 1.0]]


def zero_weights(arch=FieldArch()):
    w = FieldWeights.init(arch, BOX, np.random.default_rng(0))
    return w.with_arrays([np.zeros_like(a) for a in w.arrays()])


def omg(rng, n, weights):
    q = rng.normal(size=(n, 4))
    return OmgGaussianSet(rng.uniform(-1, 1, (n, 3)), rng.uniform(-3, -1, (n, 3)), q / np.linalg.norm(q, axis=1)[:, None],
                          rng.normal(size=(n, 3)), rng.normal(size=(n, 3)), weights)


# positional encoding

def test_pe_at_origin():
    g = positional_encoding(np.zeros(3), 6)
    assert len(g) == 39
    for k in range(6):
        assert np.all(g[3 + 6 * k:6 + 6 * k] == 0.0)
        assert np.all(g[6 + 6 * k:9 + 6 * k] == 1.0)


def test_pe_zero_frequencies():
    p = np.array([0.3, -0.2, 0.9])
    assert np.array_equal(positional_encoding(p, 0), p)


def test_pe_matches_scalar_loop(rng):
    for _ in range(20):
        p = rng.uniform(-1, 1, 3)
        f = int(rng.integers(0, 9))
        np.testing.assert_allclose(positional_encoding(p, f), oracles.positional_encoding(p, f), atol=1e-15)


def test_pe_negative_frequencies():
    with pytest.raises(ValueError):
        positional_encoding(np.zeros(3), -1)


@given(arrays(np.float64, 3, elements=st.floats(-1e3, 1e3)), st.integers(0, 10))
def test_pe_bounded(p, f):
    x = normalize_positions(p[None], BOX)[0]
    g = positional_encoding(x, f)
    assert g.shape == (3 + 6 * f,)
    assert np.all(np.abs(g) <= 1.0)


def test_normalize_positions_maps_box():
    aabb = np.array([[0.0, 2.0, -4.0], [1.0, 6.0, 4.0]])
    np.testing.assert_allclose(normalize_positions(aabb, aabb), [[-1, -1, -1], [1, 1, 1]])


# space feature and decode

def test_space_feature_zero_weights_gives_bias(rng):
    w = zero_weights()
    b = rng.normal(size=16)
    layers = list(w.mlps["s"])
    layers[-1] = (layers[-1][0], b)
    w = FieldWeights(w.arch, w.aabb, {**w.mlps, "s": layers})
    F = space_feature(w, rng.uniform(-1, 1, (5, 3)))
    assert np.array_equal(F, np.tile(b, (5, 1)))


def test_space_feature_identity_layer(rng):
    arch = FieldArch(hidden_layers=0)
    w = zero_weights(arch)
    W = np.eye(arch.pe_dim, arch.feature_dim)
    w = FieldWeights(arch, w.aabb, {**w.mlps, "s": [(W, np.zeros(arch.feature_dim))]})
    p = rng.uniform(-1, 1, (4, 3))
    F = space_feature(w, p)
    g = positional_encoding(normalize_positions(p, BOX), arch.pe_frequencies)
    assert np.array_equal(F, g[:, :arch.feature_dim])


def test_space_feature_matches_naive(rng):
    w = FieldWeights.init(FieldArch(), BOX, rng)
    w = w.with_arrays([a + 0.1 * rng.normal(size=a.shape) for a in w.arrays()])
    p = rng.uniform(-1, 1, (3, 3))
    g = np.stack([oracles.positional_encoding(x, 6) for x in normalize_positions(p, BOX)])
    np.testing.assert_allclose(space_feature(w, p), oracles.mlp(g, w.mlps["s"]), atol=1e-12)


def test_decode_opacity_from_bias(rng):
    w = zero_weights()
    layers = list(w.mlps["o"])
    layers[-1] = (layers[-1][0], np.array([0.7]))
    w = FieldWeights(w.arch, w.aabb, {**w.mlps, "o": layers})
    h0, o, hr = decode(omg(rng, 3, w), 1)
    assert o == pytest.approx(1 / (1 + np.exp(-0.7)), rel=1e-15)
    assert np.all(h0 == 0) and np.all(hr == 0)


def test_static_feature_does_not_touch_view_output(rng):
    w = FieldWeights.init(FieldArch(), BOX, rng)
    g = omg(rng, 10, w)
    h0, _, hr = decode_features(w, g.positions, g.static_features, g.view_features)
    h0b, _, hrb = decode_features(w, g.positions, g.static_features + 1.0, g.view_features)
    assert np.array_equal(hr, hrb)
    assert not np.array_equal(h0, h0b)


def test_decode_matches_layer_by_layer(rng):
    w = FieldWeights.init(FieldArch(), BOX, rng)
    w = w.with_arrays([a + 0.1 * rng.normal(size=a.shape) for a in w.arrays()])
    g = omg(rng, 6, w)
    for n in range(6):
        pe = oracles.positional_encoding(normalize_positions(g.positions[n:n + 1], BOX)[0], 6)
        F = oracles.mlp(pe, w.mlps["s"])[0]
        xt = np.concatenate([g.static_features[n], F])
        xv = np.concatenate([g.view_features[n], F])
        h0, o, hr = decode(g, n)
        np.testing.assert_allclose(h0, oracles.mlp(xt, w.mlps["t"])[0], atol=1e-12)
        np.testing.assert_allclose(o, 1 / (1 + np.exp(-oracles.mlp(xt, w.mlps["o"])[0, 0])), atol=1e-12)
        np.testing.assert_allclose(hr, oracles.mlp(xv, w.mlps["v"])[0], atol=1e-12)


def test_decode_is_pure(rng):
    g = omg(rng, 20, FieldWeights.init(FieldArch(), BOX, rng))
    a = export_decoded(g)
    b = export_decoded(g)
    for name in ("sh_dc", "opacities", "sh_rest"):
        assert np.array_equal(getattr(a, name), getattr(b, name))


def test_decode_index_bounds(rng):
    g = omg(rng, 2, zero_weights())
    with pytest.raises(IndexError):
        decode(g, 2)


# export

def test_export_agrees_with_decode(rng):
    w = FieldWeights.init(FieldArch(), BOX, rng)
    g = omg(rng, 12, w)
    ex = export_decoded(g)
    for n in range(12):
        h0, o, hr = decode(g, n)
        np.testing.assert_allclose(ex.sh_dc[n], h0, rtol=1e-12)
        assert ex.opacities[n] == pytest.approx(o, rel=1e-12)
        np.testing.assert_allclose(ex.sh_rest[n], hr, rtol=1e-12)
    assert np.array_equal(ex.positions, g.positions)


def test_export_then_render_equals_on_the_fly():
    src = synth_scene(800, seed=7)
    fit = distill_fit(src, DistillConfig(iterations=50, batch_size=256))
    g = fit.scene
    per = [decode(g, n) for n in range(g.count)]
    manual = SourceGaussianSet(g.positions, g.log_scales, g.rotations, [p[1] for p in per],
                               [p[0] for p in per], [p[2] for p in per])
    cam = orbit_cameras(1, 32, 32)[0]
    np.testing.assert_allclose(render(export_decoded(g), cam), render(manual, cam), atol=1e-6)
    assert np.array_equal(render(g, cam), render(export_decoded(g), cam))


def test_export_empty():
    g = OmgGaussianSet(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 4)), np.zeros((0, 3)), np.zeros((0, 3)),
                       zero_weights())
    assert export_decoded(g).count == 0


# weights

def test_default_budget():
    w = FieldWeights.init(FieldArch(), BOX, np.random.default_rng(0))
    assert len(w.to_bytes()) == w.serialized_size <= FIELD_BUDGET_BYTES
    assert FieldArch().pe_dim == 39


def test_weights_bytes_round_trip(rng):
    w = FieldWeights.init(FieldArch(), [[-1.5, 0, 2], [3, 4.25, 8]], rng).to_half()
    back = FieldWeights.from_bytes(w.to_bytes())
    assert back.arch == w.arch
    assert np.array_equal(back.aabb, w.aabb)
    for a, b in zip(w.arrays(), back.arrays()):
        assert a.tobytes() == b.tobytes()


def test_weights_trailing_bytes(rng):
    w = FieldWeights.init(FieldArch(), BOX, rng)
    with pytest.raises(ValueError):
        FieldWeights.from_bytes(w.to_bytes() + b"\0\0")


# distillation

def test_gradients_match_finite_differences():
    err = oracles.gradient_check(seed=3, coords=100)
    assert err.max() < 1e-3


def test_zero_iterations_is_initialization():
    src = synth_scene(100, seed=2)
    fit = distill_fit(src, DistillConfig(iterations=0))
    assert np.array_equal(fit.scene.static_features, src.sh_dc.astype(np.float32))
    assert np.all(fit.scene.view_features == 0)


def test_loss_never_above_initial():
    src = synth_scene(500, seed=3)
    fit = distill_fit(src, DistillConfig(iterations=200, batch_size=128, eval_every=20))
    losses = [l for _, l in fit.loss_trace]
    assert fit.final_loss <= losses[0]
    assert fit.final_loss == min(losses)


def test_constant_scene_fits_quickly():
    n = 300
    rng = np.random.default_rng(0)
    q = np.tile([1.0, 0, 0, 0], (n, 1))
    rest = np.tile(rng.normal(0, 0.1, 45), (n, 1))
    src = SourceGaussianSet(rng.uniform(-1, 1, (n, 3)), np.full((n, 3), -3.0), q, np.full(n, 0.8),
                            np.tile([0.4, -0.2, 0.1], (n, 1)), rest)
    fit = distill_fit(src, DistillConfig(iterations=600, batch_size=300, eval_every=100))
    assert fit.final_loss < 1e-3


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_names_iteration():
    src = synth_scene(64, seed=1)
    src = SourceGaussianSet(src.positions, src.log_scales, src.rotations, src.opacities, src.sh_dc * 1e30,
                            src.sh_rest)
    with pytest.raises(TrainingDivergedError) as e:
        distill_fit(src, DistillConfig(iterations=5, batch_size=64))
    assert e.value.iteration >= 1


def test_distill_empty():
    fit = distill_fit(SourceGaussianSet.empty(), DistillConfig(iterations=10))
    assert fit.scene.count == 0
