import numpy as np
import pytest

from blurf import autodiff as ad
from blurf.fields import (DynamicField, FieldOutput, MLPConfig, StaticField, StaticOutput, blend,
                          encode, encoded_dim)


def small_cfg(**kw):
    base = dict(width=8, depth=1, skip=2, pos_freqs=2, dir_freqs=1, time_freqs=1, K=2)
    base.update(kw)
    return MLPConfig(**base)


def unit(v):
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def test_encoding_examples():
    x = np.array([[0.3, -0.7, 1.1]])
    np.testing.assert_array_equal(encode(x, 0).value, x)
    z = encode(np.zeros((1, 3)), 3, include_input=False).value.reshape(3, 2, 3)
    assert np.all(z[:, 0] == 0) and np.all(z[:, 1] == 1)
    assert encode(np.zeros((2, 3)), 10).shape == (2, 63) == (2, encoded_dim(3, 10))
    e = encode(x, 2).value[0]
    np.testing.assert_allclose(e[3:6], np.sin(np.pi * x[0]))
    np.testing.assert_allclose(e[9:12], np.sin(2 * np.pi * x[0]))
    with pytest.raises(ValueError):
        encode(x, -1)


def test_config_validation():
    with pytest.raises(ValueError):
        MLPConfig(width=0)
    with pytest.raises(ValueError):
        MLPConfig(depth=0)


def test_dynamic_outputs_ranges_and_shapes():
    rng = np.random.default_rng(0)
    field = DynamicField(small_cfg(depth=3, skip=1), total_time=10)
    x = rng.normal(scale=3.0, size=(1000, 3))
    d = unit(rng.normal(size=(1000, 3)))
    t = rng.integers(0, 10, 1000)
    out = field(x, d, t)
    assert isinstance(out, FieldOutput)
    assert out.color.shape == (1000, 3) and out.psi.shape == (1000, 2, 3)
    assert np.all(out.sigma.value >= 0)
    for arr in (out.color.value, out.w.value):
        assert np.all((arr >= 0) & (arr <= 1))
    assert out.w_fw.shape == (1000,) == out.w_bw.shape


def test_dynamic_direction_only_affects_colour():
    rng = np.random.default_rng(1)
    field = DynamicField(small_cfg(), total_time=4)
    x = rng.normal(size=(5, 3))
    a = field(x, unit(rng.normal(size=(5, 3))), 2)
    b = field(x, unit(rng.normal(size=(5, 3))), 2)
    np.testing.assert_array_equal(a.sigma.value, b.sigma.value)
    np.testing.assert_array_equal(a.psi.value, b.psi.value)
    np.testing.assert_array_equal(a.w.value, b.w.value)
    assert not np.allclose(a.color.value, b.color.value)


def test_static_outputs():
    rng = np.random.default_rng(2)
    field = StaticField(small_cfg())
    x = rng.normal(scale=3.0, size=(500, 3))
    a = field(x, unit(rng.normal(size=(500, 3))))
    b = field(x, unit(rng.normal(size=(500, 3))))
    assert isinstance(a, StaticOutput)
    assert np.all(a.sigma.value >= 0) and np.all((a.v.value >= 0) & (a.v.value <= 1))
    np.testing.assert_array_equal(a.sigma.value, b.sigma.value)
    np.testing.assert_array_equal(a.v.value, b.v.value)


def test_non_finite_input_rejected():
    field = StaticField(small_cfg())
    with pytest.raises(ValueError):
        field(np.array([[np.nan, 0, 0]]), np.array([[0, 0, 1.0]]))
    dyn = DynamicField(small_cfg(), total_time=3)
    with pytest.raises(ValueError):
        dyn(np.zeros((1, 3)), np.array([[0, 0, 1.0]]), np.inf)


def test_deterministic_outputs():
    rng = np.random.default_rng(3)
    x, d = rng.normal(size=(20, 3)), unit(rng.normal(size=(20, 3)))
    a = DynamicField(small_cfg(), 5, seed=4)(x, d, 1)
    b = DynamicField(small_cfg(), 5, seed=4)(x, d, 1)
    assert a.color.value.tobytes() == b.color.value.tobytes()


def _fd_check(field, call, rel_tol=1e-3, h=1e-6):
    rng = np.random.default_rng(5)
    weights = {}

    def scalar():
        out = call()
        total = 0.0
        parts = [p for p in vars(out).values() if p is not None]
        for k, part in enumerate(parts):
            w = weights.setdefault(k, rng.normal(size=part.shape))
            total = total + ad.sum_(part * w)
        return total

    params = field.parameters()
    ad.zero_grad(params)
    ad.backward(scalar())
    for p in params:
        flat, grad = p.value.reshape(-1), p.grad.reshape(-1)
        for k in range(flat.size):
            o = flat[k]
            flat[k] = o + h
            up = float(scalar().value)
            flat[k] = o - h
            dn = float(scalar().value)
            flat[k] = o
            fd = (up - dn) / (2 * h)
            assert abs(fd - grad[k]) <= rel_tol * max(abs(fd), abs(grad[k]), 1e-6), p.name


def test_dynamic_gradients_match_finite_differences():
    rng = np.random.default_rng(6)
    field = DynamicField(small_cfg(width=5), total_time=6)
    x, d = rng.normal(size=(4, 3)), unit(rng.normal(size=(4, 3)))
    t = np.array([0, 1, 3, 5])
    _fd_check(field, lambda: field(x, d, t))


def test_static_gradients_match_finite_differences():
    rng = np.random.default_rng(7)
    field = StaticField(small_cfg(width=5))
    x, d = rng.normal(size=(4, 3)), unit(rng.normal(size=(4, 3)))
    _fd_check(field, lambda: field(x, d))


def _outputs(c_dy, s_dy, c_st, s_st, v):
    dyn = FieldOutput(np.array(c_dy, float), np.array(s_dy, float), None, None)
    st = StaticOutput(np.array(c_st, float), np.array(s_st, float), np.array(v, float))
    return dyn, st


def test_blend_examples():
    dyn, st = _outputs([[0.2, 0.4, 0.6]], [2.0], [[0.9, 0.1, 0.3]], [5.0], [0.0])
    c, s = blend(dyn, st)
    np.testing.assert_array_equal(c.value, [[0.2, 0.4, 0.6]])
    assert float(s.value[0]) == 2.0
    dyn, st = _outputs([[0.2, 0.4, 0.6]], [2.0], [[0.9, 0.1, 0.3]], [5.0], [1.0])
    c, s = blend(dyn, st)
    np.testing.assert_array_equal(c.value, [[0.9, 0.1, 0.3]])
    assert float(s.value[0]) == 5.0
    dyn, st = _outputs([[1.0, 0.0, 0.0]], [1.0], [[0.0, 1.0, 0.0]], [3.0], [0.5])
    c, s = blend(dyn, st)
    np.testing.assert_allclose(c.value, [[0.5, 0.5, 0.0]])
    assert float(s.value[0]) == 2.0


def test_blend_is_convex():
    rng = np.random.default_rng(8)
    c1, c2 = rng.uniform(size=(50, 3)), rng.uniform(size=(50, 3))
    s1, s2, v = rng.uniform(0, 5, 50), rng.uniform(0, 5, 50), rng.uniform(size=50)
    c, s = blend(*_outputs(c1, s1, c2, s2, v))
    assert np.all(c.value <= np.maximum(c1, c2) + 1e-15)
    assert np.all(c.value >= np.minimum(c1, c2) - 1e-15)
    assert np.all(s.value <= np.maximum(s1, s2) + 1e-15)
