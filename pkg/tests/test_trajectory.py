import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from blurf import autodiff as ad
from blurf.trajectory import (dct_table, eval_trajectory, fixed_basis, flatten_time,
                              init_learnable_basis, scene_flow, unflatten_time, warp_point)


def brute_force(psi, total, t):
    out = np.zeros(3)
    for k in range(1, psi.shape[0] + 1):
        out += psi[k - 1] * np.cos(np.pi / (2 * total) * (2 * t + 1) * k)
    return np.sqrt(2.0 / total) * out


def test_flatten_roundtrip_and_bounds():
    n = 7
    for i in (1, 3):
        for l in (1, 4, 7):
            assert unflatten_time(flatten_time(i, l, n), n) == (i, l)
    assert flatten_time(2, 1, 7) == 7
    with pytest.raises(IndexError):
        flatten_time(1, 8, 7)
    with pytest.raises(IndexError):
        flatten_time(0, 1, 7)


def test_zero_coefficients_give_zero_everywhere():
    basis = fixed_basis(7, 12, 6)
    assert np.all(eval_trajectory(np.zeros((6, 3)), basis, np.arange(84)) == 0)


def test_single_coefficient_closed_form():
    n, N = 3, 2
    basis = fixed_basis(n, N, 1)
    psi = np.array([[1.0, 0.0, 0.0]])
    got = eval_trajectory(psi, basis, 0)
    assert got[0] == pytest.approx(np.sqrt(2 / 6) * np.cos(np.pi / 12))


@given(st.integers(1, 4), st.integers(1, 5), st.integers(1, 6), st.integers(0, 2 ** 31))
@settings(max_examples=40, deadline=None)
def test_matches_brute_force(n, N, K, seed):
    rng = np.random.default_rng(seed)
    psi = rng.normal(size=(K, 3))
    basis = fixed_basis(n, N, K)
    t = np.arange(n * N)
    fast = eval_trajectory(psi, basis, t)
    for tt in t:
        np.testing.assert_allclose(fast[tt], brute_force(psi, n * N, tt), atol=1e-12)


@given(st.integers(0, 2 ** 31), st.floats(-3, 3), st.floats(-3, 3))
@settings(max_examples=30, deadline=None)
def test_linearity(seed, a, b):
    rng = np.random.default_rng(seed)
    basis = fixed_basis(7, 4, 6)
    p, q = rng.normal(size=(2, 6, 3))
    t = np.arange(28)
    lhs = eval_trajectory(a * p + b * q, basis, t)
    rhs = a * eval_trajectory(p, basis, t) + b * eval_trajectory(q, basis, t)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_scene_flow_antisymmetry_and_self_flow():
    rng = np.random.default_rng(1)
    basis = fixed_basis(7, 3, 6)
    psi = rng.normal(size=(5, 6, 3))
    fw = scene_flow(psi, basis, 2, 9)
    bw = scene_flow(psi, basis, 9, 2)
    np.testing.assert_array_equal(fw, -bw)
    assert np.all(scene_flow(psi, basis, 4, 4) == 0)
    x = rng.normal(size=(5, 3))
    np.testing.assert_allclose(warp_point(x, psi, basis, 2, 9), x + fw)


def test_broadcast_shapes_and_tape():
    rng = np.random.default_rng(2)
    basis = init_learnable_basis(7, 2, 6)
    psi = ad.Parameter(rng.normal(size=(7, 4, 6, 3)))
    t = np.arange(7)[:, None]
    out = eval_trajectory(psi, basis, t)
    assert out.shape == (7, 4, 3)
    np.testing.assert_allclose(out.value, eval_trajectory(psi.value, fixed_basis(7, 2, 6), t),
                               atol=1e-14)
    ad.backward(ad.sum_(out))
    assert basis.table.grad.shape == (14, 6)
    assert np.all(basis.table.grad[7:] == 0)


def test_invalid_queries():
    basis = fixed_basis(2, 2, 3)
    with pytest.raises(IndexError):
        basis.rows(4)
    with pytest.raises(IndexError):
        basis.rows(1.5)
    with pytest.raises(ValueError):
        eval_trajectory(np.zeros((2, 3)), basis, 0)
    with pytest.raises(ValueError):
        init_learnable_basis(0, 2, 3)


def test_table_orthogonality():
    total = 12
    table = dct_table(total, total - 1)
    gram = (2.0 / total) * table.T @ table
    np.testing.assert_allclose(gram, np.eye(total - 1), atol=1e-12)
