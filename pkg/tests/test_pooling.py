import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from gacnn.errors import ConfigError
from gacnn.pooling import PoolingConfig, gap, global_pool, gmp, gtkp, topk_mask
from gacnn.tensors import Tensor, grad_check

SQUARE = np.array([[[1.0, 2.0], [3.0, 4.0]]])

maps = arrays(np.float64, st.tuples(st.integers(1, 3), st.integers(1, 5), st.integers(1, 5)),
              elements=st.floats(-100, 100, allow_nan=False))


def test_gap_examples(rng):
    assert gap(Tensor(SQUARE)).data.tolist() == [2.5]
    assert gap(Tensor(np.zeros((2, 3, 3)))).data.tolist() == [0.0, 0.0]
    x = rng.normal(size=(4, 5, 6))
    want = [sum(float(v) for v in ch.ravel()) / ch.size for ch in x]
    np.testing.assert_allclose(gap(Tensor(x)).data, want, rtol=1e-12)


def test_gmp_examples(rng):
    assert gmp(Tensor(SQUARE)).data.tolist() == [4.0]
    x = rng.normal(size=(4, 5, 6))
    np.testing.assert_array_equal(gmp(Tensor(x)).data, [max(ch.ravel()) for ch in x])


def test_gmp_constant_routes_gradient_to_origin():
    x = Tensor(np.full((1, 3, 3), 2.0), requires_grad=True)
    y = gmp(x)
    assert y.data.tolist() == [2.0]
    y.backward(np.ones(1))
    want = np.zeros((1, 3, 3))
    want[0, 0, 0] = 1.0
    np.testing.assert_array_equal(x.grad, want)


def test_gtkp_example():
    assert gtkp(Tensor(SQUARE), 2).data.tolist() == [3.5]


@pytest.mark.parametrize("k", [0, 5])
def test_gtkp_k_out_of_range(k):
    with pytest.raises(ConfigError):
        gtkp(Tensor(SQUARE), k)


def test_gtkp_ties_route_to_earliest():
    x = Tensor(np.array([[[1.0, 5.0, 5.0], [5.0, 0.0, 0.0]]]), requires_grad=True)
    gtkp(x, 2).backward(np.ones(1))
    np.testing.assert_array_equal(x.grad, [[[0, 0.5, 0.5], [0, 0, 0]]])


def test_topk_mask_counts(rng):
    flat = rng.integers(0, 3, size=(4, 7, 20)).astype(float)
    for k in (1, 5, 20):
        assert (topk_mask(flat, k, axis=2).sum(axis=2) == k).all()


def test_nhwc_agrees(rng):
    x = rng.normal(size=(2, 3, 4, 5))
    for fn in (gap, gmp, lambda t, layout="NCHW": gtkp(t, 3, layout=layout)):
        np.testing.assert_array_equal(fn(Tensor(x)).data, fn(Tensor(x.transpose(0, 2, 3, 1)), layout="NHWC").data)


@settings(max_examples=200, deadline=None)
@given(maps)
def test_gtkp_reduces_to_gmp_and_gap(x):
    hw = x.shape[1] * x.shape[2]
    np.testing.assert_array_equal(gtkp(Tensor(x), 1).data, gmp(Tensor(x)).data)
    np.testing.assert_array_equal(gtkp(Tensor(x), hw).data, gap(Tensor(x)).data)


@settings(max_examples=200, deadline=None)
@given(maps, st.data())
def test_gtkp_between_gap_and_gmp(x, data):
    k = data.draw(st.integers(1, x.shape[1] * x.shape[2]))
    v = gtkp(Tensor(x), k).data
    tol = 1e-9 * (1 + np.abs(x).max())
    assert (gap(Tensor(x)).data <= v + tol).all()
    assert (v <= gmp(Tensor(x)).data + tol).all()


@settings(max_examples=100, deadline=None)
@given(maps, st.integers(0, 2**31))
def test_permutation_invariance(x, seed):
    c, h, w = x.shape
    perm = np.random.default_rng(seed).permutation(h * w)
    y = x.reshape(c, -1)[:, perm].reshape(c, h, w)
    k = max(1, h * w // 2)
    for f in (gap, gmp, lambda t: gtkp(t, k)):
        np.testing.assert_allclose(f(Tensor(x)).data, f(Tensor(y)).data, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("op", [gap, gmp, lambda t: gtkp(t, 3)])
def test_gradcheck(rng, op):
    x = rng.permutation(np.arange(2 * 16, dtype=float) * 1e-2).reshape(1, 2, 4, 4)
    rep = grad_check(op, [x])
    assert rep.passed, rep.line()


def test_area_scaled_k():
    cfg = PoolingConfig("gtkp", k=4)
    assert cfg.k_for(16, 16) == 4
    assert cfg.k_for(64, 16) == 16
    assert PoolingConfig("gtkp", 4, "fixed").k_for(64, 16) == 4


def test_global_pool_dispatch(rng):
    x = Tensor(rng.normal(size=(2, 3, 4, 4)))
    np.testing.assert_array_equal(global_pool(x, PoolingConfig("gap")).data, gap(x).data)
    np.testing.assert_array_equal(global_pool(x, PoolingConfig("gmp")).data, gmp(x).data)
    np.testing.assert_array_equal(global_pool(x, PoolingConfig("gtkp", 2), smallest_hw=4).data, gtkp(x, 8).data)


def test_bad_config():
    with pytest.raises(ConfigError):
        PoolingConfig("median")
    with pytest.raises(ConfigError):
        PoolingConfig("gtkp", k=0)


def test_nan_propagates():
    x = np.array([[[1.0, np.nan], [3.0, 4.0]]])
    for k in (1, 2, 4):
        assert np.isnan(gtkp(Tensor(x), k).data).all()
    assert np.isnan(gmp(Tensor(x)).data).all()
