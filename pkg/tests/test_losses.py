from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from blurf import autodiff as ad
from blurf.losses import (TERMS, LossReport, LossWeights, cross_term, loss_cross, loss_data,
                          loss_rgb_dynamic, loss_rgb_static, loss_scene_flow,
                          occlusion_regulariser, total_loss)


def val(x):
    return float(ad.value_of(x))


def test_rgb_dynamic_examples():
    gt = np.random.default_rng(0).uniform(size=(8, 3))
    assert val(loss_rgb_dynamic(gt, gt)) == 0
    assert val(loss_rgb_dynamic(gt + 0.1, gt)) == pytest.approx(0.01, abs=1e-15)
    with pytest.raises(ValueError):
        loss_rgb_dynamic(gt[:4], gt)


def test_rgb_dynamic_scalar_loop():
    rng = np.random.default_rng(1)
    a, b = rng.uniform(size=(2, 17, 3))
    ref = sum((a[r, c] - b[r, c]) ** 2 for r in range(17) for c in range(3)) / (17 * 3)
    assert val(loss_rgb_dynamic(a, b)) == pytest.approx(ref, abs=1e-12)


def test_rgb_static_examples():
    rng = np.random.default_rng(2)
    a, b = rng.uniform(size=(2, 10, 3))
    assert val(loss_rgb_static(a, b, np.ones(10))) == 0
    assert val(loss_rgb_static(a, b, np.zeros(10))) == pytest.approx(val(loss_rgb_dynamic(a, b)),
                                                                      abs=1e-15)
    half = np.array([1, 0] * 5)
    assert val(loss_rgb_static(b + 0.1, b, half)) == pytest.approx(0.01, abs=1e-15)


@given(st.integers(0, 2 ** 31))
@settings(max_examples=30, deadline=None)
def test_shrinking_static_set_never_grows_residual_sum(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.uniform(size=(2, 12, 3))
    mask = rng.integers(0, 2, 12)
    more = np.maximum(mask, rng.integers(0, 2, 12))

    def residual_sum(m):
        count = max((1 - m).sum(), 1)
        return val(loss_rgb_static(a, b, m)) * count

    assert residual_sum(more) <= residual_sum(mask) + 1e-12


def test_cross_examples():
    rng = np.random.default_rng(3)
    gt = rng.uniform(size=(6, 3))
    warped = SimpleNamespace(blurry=rng.uniform(size=(6, 3)), disocclusion=np.zeros(6))
    assert val(loss_cross([warped], gt)) == 0
    assert val(loss_cross([], gt)) == 0
    # unit weights and an unwarped prediction reduce to the plain reconstruction loss
    pred = rng.uniform(size=(6, 3))
    same = SimpleNamespace(blurry=pred, disocclusion=np.ones(6))
    assert val(loss_cross([same], gt)) == pytest.approx(val(loss_rgb_dynamic(pred, gt)), abs=1e-15)


def test_cross_hand_composed_and_stop_gradient():
    gt = np.array([[0.25, 0.4, 0.6], [0.4, 0.5, 0.5]])
    # two timestamps per target; blurry = mean of them
    c_prev = np.array([[[0.3, 0.4, 0.6], [0.5, 0.5, 0.7]], [[0.1, 0.4, 0.6], [0.5, 0.5, 0.3]]])
    c_next = np.array([[[0.2, 0.2, 0.6], [0.9, 0.5, 0.5]], [[0.2, 0.6, 0.6], [0.5, 0.5, 0.5]]])
    w_prev, w_next = np.array([0.5, 1.0]), np.array([0.25, 0.0])
    renders = []
    for c, w in ((c_prev, w_prev), (c_next, w_next)):
        renders.append(SimpleNamespace(blurry=ad.Parameter(c.mean(axis=0)),
                                       disocclusion=ad.Parameter(w)))
    total = loss_cross(renders, gt)
    ref = 0.0
    for c, w in ((c_prev, w_prev), (c_next, w_next)):
        b = c.mean(axis=0)
        ref += np.mean([w[r] * np.mean((b[r] - gt[r]) ** 2) for r in range(2)])
    assert val(total) == pytest.approx(ref, abs=1e-15)
    ad.backward(total)
    assert renders[0].disocclusion.grad is None or np.all(renders[0].disocclusion.grad == 0)
    assert np.any(renders[0].blurry.grad != 0)


def test_cross_term_shape_check():
    with pytest.raises(ValueError):
        cross_term(np.zeros((3, 3)), np.ones(3), np.zeros((2, 3)))


def test_data_examples():
    rng = np.random.default_rng(4)
    d, f = rng.uniform(1, 5, 9), rng.normal(size=(9, 2))
    dd, ff = loss_data(d, f, d, f)
    assert val(dd) == 0 and val(ff) == 0
    dd, ff = loss_data(d + 2.0, f, d, f)
    assert val(dd) + val(ff) == pytest.approx(2.0)
    dd, ff = loss_data(d, None, d, f)
    assert val(ff) == 0
    dd, ff = loss_data(d + 1, f + 1, d, f, np.zeros(9, bool), np.zeros(9, bool))
    assert val(dd) == 0 and val(ff) == 0


def test_data_scalar_loop():
    rng = np.random.default_rng(5)
    pd, gd = rng.uniform(1, 5, (2, 11))
    pf, gf = rng.normal(size=(2, 11, 2))
    dv, fv = rng.integers(0, 2, 11).astype(bool), rng.integers(0, 2, 11).astype(bool)
    dv[0] = fv[0] = True
    dd, ff = loss_data(pd, pf, gd, gf, dv, fv)
    ref_d = sum(abs(pd[k] - gd[k]) for k in range(11) if dv[k]) / dv.sum()
    ref_f = sum(abs(pf[k, 0] - gf[k, 0]) + abs(pf[k, 1] - gf[k, 1])
                for k in range(11) if fv[k]) / fv.sum()
    assert val(dd) == pytest.approx(ref_d, abs=1e-12)
    assert val(ff) == pytest.approx(ref_f, abs=1e-12)


def test_scene_flow_zero_field():
    z = np.zeros((4, 6, 3))
    for term in loss_scene_flow({1: z, 3: z}, {1: z, 3: z}, {1: np.zeros((4, 6))}):
        assert val(term) == 0


def test_scene_flow_linear_trajectory():
    # constant velocity: forward flows to i-1 and i+1 are opposite, backward undoes forward
    rng = np.random.default_rng(6)
    v = rng.normal(size=(5, 1, 3)) * np.ones((1, 4, 1))
    cyc, smooth, minimal = loss_scene_flow({1: -v, 3: v}, {1: v, 3: -v})
    assert val(cyc) == 0
    assert val(smooth) == pytest.approx(0.0, abs=1e-15)    # uniform along each ray too
    assert val(minimal) == pytest.approx(2 * np.mean(np.abs(v).sum(-1)))


def test_scene_flow_spatial_term_and_occlusion_factor():
    f = np.zeros((1, 3, 3))
    f[0, 1] = [1.0, -2.0, 0.5]
    _, smooth, _ = loss_scene_flow({2: f})
    assert val(smooth) == pytest.approx((3.5 + 3.5) / 2)
    b = np.ones((1, 3, 3))
    full, _, _ = loss_scene_flow({2: f}, {2: b})
    none, _, _ = loss_scene_flow({2: f}, {2: b}, {2: np.ones((1, 3))})
    half, _, _ = loss_scene_flow({2: f}, {2: b}, {2: np.full((1, 3), 0.5)})
    assert val(none) == 0
    assert val(half) == pytest.approx(0.5 * val(full))


def test_occlusion_regulariser():
    assert val(occlusion_regulariser(np.zeros(5))) == 0
    assert val(occlusion_regulariser(np.array([0.2, 0.4]))) == pytest.approx(0.3)


def test_total_loss_arithmetic():
    w = LossWeights(lambda_data=1, lambda_sf=1, lambda_st=1, lambda_cyc=1, lambda_occ=0)
    total, report = total_loss({k: 1.0 for k in TERMS if k != "data_flow"}, w)
    assert val(total) == 8.0 and report.total == 8.0
    total, _ = total_loss({}, LossWeights())
    assert val(total) == 0


def test_data_weight_decay():
    w = LossWeights(decay_interval=100)
    terms = {"data_depth": 1.0, "data_flow": 1.0}
    before = val(total_loss(terms, w, 99)[0])
    after = val(total_loss(terms, w, 100)[0])
    assert after == pytest.approx(0.1 * before, rel=1e-14)
    assert w.data_weight(250) == pytest.approx(0.04 * 0.01)


def test_weights_validation_and_report_columns():
    with pytest.raises(ValueError):
        LossWeights(lambda_sf=-1)
    with pytest.raises(ValueError):
        LossWeights(decay_interval=0)
    cols = LossReport.columns()
    assert cols[0] == "step" and cols[-1] == "total"
    assert set(TERMS) <= set(cols)


@given(st.integers(0, 2 ** 31))
@settings(max_examples=30, deadline=None)
def test_losses_nonnegative(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.uniform(size=(2, 5, 3))
    assert val(loss_rgb_dynamic(a, b)) >= 0
    assert val(loss_rgb_static(a, b, rng.integers(0, 2, 5))) >= 0
    f = rng.normal(size=(5, 4, 3))
    assert all(val(t) >= 0 for t in loss_scene_flow({1: f, 3: -f * 0.5}, {1: f}))
