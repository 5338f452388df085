import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from concept_forge.autodiff import (AffineParams, AugmentConfig, NonFiniteError, Tensor, affine_grid_sample, backward,
                                    info_nce, sample_affine, total_variation)
from concept_forge.autodiff import functional as F
from concept_forge.autodiff.gradcheck import check_gradients, relative_error

from kernel_cases import KERNELS, make_case
from oracles import dense_rotation_map, naive_info_nce, naive_tv


def unit_rows(rng, n, d):
    x = rng.standard_normal((n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


# -- gradient checks ----------------------------------------------------------

@pytest.mark.parametrize("kernel", KERNELS)
def test_gradient_check_small_sample(kernel):
    rng = np.random.default_rng([11, KERNELS.index(kernel)])
    for _ in range(10):
        fn, arrays = make_case(kernel, rng)
        assert check_gradients(fn, arrays) <= 1e-3


def test_relative_error_floor_ignores_tiny_entries():
    assert relative_error(np.array([1.0, 1e-9]), np.array([1.0, 0.0])) < 1e-6
    assert relative_error(np.array([1.0]), np.array([1.1])) == pytest.approx(0.1 / 1.1)


# -- backward contract ----------------------------------------------------------

def test_square_derivative():
    x = Tensor(3.0, requires_grad=True)
    grads = backward(F.mul(x, x), [x])
    assert float(grads[x]) == 6.0


def test_l2_normalize_sum_matches_finite_difference():
    v = np.array([3.0, 4.0])
    assert check_gradients(lambda t: F.sum(F.l2_normalize(t)), [v], h=1e-3) <= 1e-3
    # closed form: d/dv sum(v/|v|) = (1 - v * sum(v)/|v|^2) / |v|
    x = Tensor(v, requires_grad=True)
    g = backward(F.sum(F.l2_normalize(x)), [x])[x]
    expected = (np.ones(2) - v * v.sum() / 25.0) / 5.0
    np.testing.assert_allclose(g, expected, rtol=1e-5)


def test_unused_leaf_gets_zero_gradient():
    x = Tensor([1.0, 2.0], requires_grad=True)
    y = Tensor([5.0, 6.0], requires_grad=True)
    grads = backward(F.sum(F.mul(x, x)), [x, y])
    assert np.array_equal(grads[y], np.zeros(2))


def test_backward_rejects_non_scalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ValueError):
        backward(F.scale(x, 2.0))


def test_backward_rejects_nan_loss():
    x = Tensor([1.0, np.nan], requires_grad=True)
    with pytest.raises(NonFiniteError):
        backward(F.sum(x))


def test_shared_node_visited_once():
    # y is used twice; gradient of sum(y*y) w.r.t. x with y = 2x is 8x
    x = Tensor([1.0, -2.0], requires_grad=True)
    y = F.scale(x, 2.0)
    g = backward(F.sum(F.mul(y, y)), [x])[x]
    np.testing.assert_array_equal(g, np.array([8.0, -16.0], dtype=np.float32))


def test_forward_is_bit_deterministic():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((4, 6)).astype(np.float32)
    g, b = rng.standard_normal(6), rng.standard_normal(6)

    def run():
        return F.gelu(F.layer_norm(Tensor(x), Tensor(g), Tensor(b))).data

    assert np.array_equal(run(), run())


def test_tensor_defaults_to_float32():
    assert Tensor([1, 2, 3]).data.dtype == np.float32


def test_zero_sized_tensor_rejected():
    with pytest.raises(ValueError):
        Tensor(np.zeros((0, 3)))


# -- total variation -------------------------------------------------------------

def test_tv_constant_image_is_zero():
    assert float(total_variation(Tensor(np.full((3, 5, 7), 0.3))).data) == 0.0


def test_tv_two_pixel_example():
    assert float(total_variation(Tensor(np.array([[[0.0, 1.0]]]))).data) == 1.0


def test_tv_single_pixel_is_zero():
    assert float(total_variation(Tensor(np.ones((3, 1, 1)))).data) == 0.0


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(-5, 5), st.floats(0, 10))
def test_tv_shift_invariant_and_homogeneous(seed, c, alpha):
    x = np.random.default_rng(seed).random((2, 4, 5))
    tv = float(total_variation(Tensor(x)).data)
    assert float(total_variation(Tensor(x + c)).data) == pytest.approx(tv, rel=1e-5, abs=1e-5)
    assert float(total_variation(Tensor(alpha * x)).data) == pytest.approx(alpha * tv, rel=1e-5, abs=1e-6)


def test_tv_matches_loop_oracle():
    rng = np.random.default_rng(5)
    for _ in range(20):
        x = rng.random((3, 4, 6))
        assert float(total_variation(Tensor(x)).data) == pytest.approx(naive_tv(x), rel=1e-5)


def test_tv_batched_matches_single():
    x = np.random.default_rng(1).random((3, 3, 5, 5)).astype(np.float32)
    batched = total_variation(Tensor(x)).data
    for i in range(3):
        assert batched[i] == total_variation(Tensor(x[i])).data


# -- affine grid sampling ------------------------------------------------------------

def test_identity_transform_is_bit_identical():
    x = np.random.default_rng(2).random((3, 8, 8)).astype(np.float32)
    out = affine_grid_sample(Tensor(x), AffineParams()).data
    assert np.array_equal(out, x)


def test_rotated_bright_pixel_matches_dense_oracle():
    img = np.zeros((1, 15, 15))
    img[0, 3, 7] = 1.0
    out = affine_grid_sample(Tensor(img), AffineParams(rotation_deg=30.0)).data
    oracle = dense_rotation_map(img, 30.0)
    np.testing.assert_allclose(out, oracle, atol=1e-6)
    # intensity matches the oracle's interpolated total, and the centroid sits
    # at centre + R(30) * offset up to the bilinear footprint
    assert out.sum() == pytest.approx(oracle.sum(), abs=1e-5)
    cx = cy = 7.0
    t = math.radians(30.0)
    ex = cx - math.sin(t) * (3 - cy)
    ey = cy + math.cos(t) * (3 - cy)
    ys, xs = np.mgrid[0:15, 0:15]
    mass = out[0].sum()
    assert abs((out[0] * xs).sum() / mass - ex) < 0.25
    assert abs((out[0] * ys).sum() / mass - ey) < 0.25


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000))
def test_resampled_values_stay_in_input_range(seed):
    rng = np.random.default_rng(seed)
    x = rng.random((3, 8, 8)).astype(np.float32)
    params = sample_affine(rng, AugmentConfig(probability=1.0))
    out = affine_grid_sample(Tensor(x), params).data
    lo, hi = x.min(), x.max()
    tol = 1e-6
    ok = ((out >= lo - tol) & (out <= hi + tol)) | (out >= -tol) & (out <= hi + tol)
    assert ok.all()


def test_degenerate_affine_rejected():
    with pytest.raises(ValueError):
        affine_grid_sample(Tensor(np.ones((1, 4, 4))), AffineParams(scale=1e-5))


def test_batched_sampling_matches_per_image():
    rng = np.random.default_rng(3)
    x = rng.random((3, 3, 6, 6)).astype(np.float32)
    params = [sample_affine(rng, AugmentConfig(probability=1.0)) for _ in range(3)]
    batched = affine_grid_sample(Tensor(x), params).data
    for i in range(3):
        np.testing.assert_array_equal(batched[i], affine_grid_sample(Tensor(x[i]), params[i]).data)


def test_sample_affine_ranges_and_probability():
    rng = np.random.default_rng(4)
    cfg = AugmentConfig()
    draws = [sample_affine(rng, cfg) for _ in range(2000)]
    applied = [p for p in draws if not p.is_identity]
    assert 0.45 < len(applied) / len(draws) < 0.55
    for p in applied:
        assert abs(p.rotation_deg) <= 30.0
        assert max(abs(p.translate[0]), abs(p.translate[1])) <= 0.10
        assert 0.70 <= p.scale <= 1.00
    assert all(p.is_identity for p in (sample_affine(rng, AugmentConfig(probability=0.0)) for _ in range(50)))


def test_augment_config_validation():
    with pytest.raises(ValueError):
        AugmentConfig(scale_range=(0.0, 1.0)).validate()
    with pytest.raises(ValueError):
        AugmentConfig(probability=1.5).validate()


# -- info_nce ----------------------------------------------------------------------

def test_info_nce_orthogonal_two_by_two():
    eye = Tensor(np.eye(2))
    loss = float(info_nce(eye, eye, [0, 1], 1.0).data)
    assert loss == pytest.approx(math.log(1 + math.exp(-1)), abs=1e-6)
    assert loss == pytest.approx(0.31326, abs=1e-5)


def test_info_nce_saturated():
    img = np.array([[1.0, 0.0], [0.0, 1.0]])
    txt = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
    assert float(info_nce(Tensor(img), Tensor(txt), [0, 2], 100.0).data) < 1e-6


def test_info_nce_matches_double_loop():
    rng = np.random.default_rng(7)
    for _ in range(50):
        img, txt = unit_rows(rng, 4, 8), unit_rows(rng, 7, 8)
        pos = rng.integers(0, 7, 4)
        t = float(rng.uniform(0.5, 30))
        with_lib = float(info_nce(Tensor(img), Tensor(txt), pos, t).data)
        assert with_lib == pytest.approx(naive_info_nce(img, txt, pos, t), abs=1e-5 * max(1.0, t / 10))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 100.0))
def test_info_nce_invariant_to_raw_embedding_scale(seed, c):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((3, 5)), rng.standard_normal((4, 5))

    def loss(x, y):
        return float(info_nce(F.l2_normalize(Tensor(x)), F.l2_normalize(Tensor(y)), [0, 1, 2], 5.0).data)

    assert loss(c * a, c * b) == pytest.approx(loss(a, b), abs=1e-5)


def test_info_nce_permutation_equivariant():
    rng = np.random.default_rng(8)
    for _ in range(20):
        img, txt = unit_rows(rng, 5, 6), unit_rows(rng, 5, 6)
        perm = rng.permutation(5)
        base = float(info_nce(Tensor(img), Tensor(txt), np.arange(5), 3.0).data)
        permuted = float(info_nce(Tensor(img[perm]), Tensor(txt[perm]), np.arange(5), 3.0).data)
        assert permuted == pytest.approx(base, abs=1e-6)


def test_info_nce_logits_bounded_by_temperature():
    from concept_forge.autodiff import similarity_logits
    rng = np.random.default_rng(9)
    logits = similarity_logits(Tensor(unit_rows(rng, 6, 4)), Tensor(unit_rows(rng, 9, 4)), 7.0).data
    assert np.abs(logits).max() <= 7.0 + 1e-5


@pytest.mark.parametrize("bad", [
    dict(img=np.array([[2.0, 0.0]]), txt=np.eye(2), pos=[0], t=1.0),
    dict(img=np.eye(2), txt=np.eye(2), pos=[0, 1], t=0.0),
    dict(img=np.eye(2), txt=np.eye(2)[:1], pos=[0, 0], t=1.0),
    dict(img=np.eye(2), txt=np.eye(2), pos=[0, 2], t=1.0),
])
def test_info_nce_rejects_bad_inputs(bad):
    with pytest.raises(ValueError):
        info_nce(Tensor(bad["img"]), Tensor(bad["txt"]), bad["pos"], bad["t"])


def test_trainable_temperature_gets_gradient():
    rng = np.random.default_rng(10)
    t = Tensor(np.array(2.0), requires_grad=True)
    img, txt = Tensor(unit_rows(rng, 3, 4)), Tensor(unit_rows(rng, 3, 4))
    g = backward(info_nce(img, txt, [0, 1, 2], t), [t])[t]
    h = 1e-3
    fp = float(info_nce(img, txt, [0, 1, 2], 2.0 + h).data)
    fm = float(info_nce(img, txt, [0, 1, 2], 2.0 - h).data)
    assert float(g) == pytest.approx((fp - fm) / (2 * h), rel=1e-2)
