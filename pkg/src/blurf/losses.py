"""Training objectives and their weighted composition.

Batch reductions are means (over rays, channels, samples and exposure
timestamps); sums run only over target frames ``j``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import autodiff as ad

TERMS = ("rgb_dy", "rgb_st", "rgb_cb", "cross", "data_depth", "data_flow",
         "cyc", "smooth", "min", "occ_reg")


def _zero(like=None) -> ad.Tensor:
    return ad.Tensor(0.0)


def _check_shapes(a, b):
    if ad.value_of(a).shape != np.shape(ad.value_of(b)):
        raise ValueError(f"shape mismatch {ad.value_of(a).shape} vs {np.shape(ad.value_of(b))}")


def loss_rgb_dynamic(pred, gt) -> ad.Tensor:
    """Mean squared error between rendered and observed blurry colours."""
    _check_shapes(pred, gt)
    return ad.mean(ad.square(ad.as_tensor(pred) - gt))


def loss_rgb_static(pred, gt, mask) -> ad.Tensor:
    """Squared error restricted to static pixels (mask == 0 marks static)."""
    _check_shapes(pred, gt)
    static = 1.0 - np.asarray(mask, dtype=ad.value_of(pred).dtype)
    count = float(static.sum())
    if count == 0.0:
        return _zero()
    per_ray = ad.mean(ad.square(ad.as_tensor(pred) - gt), axis=-1)
    return ad.sum_(per_ray * static) / count


def cross_term(blurry_warped, disocclusion, gt) -> ad.Tensor:
    """One target frame's contribution; the disocclusion map is a constant weight."""
    _check_shapes(blurry_warped, gt)
    weight = ad.value_of(disocclusion)
    per_ray = ad.mean(ad.square(ad.as_tensor(blurry_warped) - gt), axis=-1)
    return ad.mean(per_ray * weight)


def loss_cross(warped_renders, gt) -> ad.Tensor:
    """Sum of disocclusion-weighted residuals over target frames.

    ``warped_renders`` is a sequence of objects with ``blurry`` and
    ``disocclusion`` attributes (see :class:`blurf.renderer.WarpedRender`).
    """
    total = _zero()
    for w in warped_renders:
        total = total + cross_term(w.blurry, w.disocclusion, gt)
    return total


def _masked_mean(values, valid) -> ad.Tensor:
    valid = np.asarray(valid, dtype=bool)
    count = int(valid.sum())
    if count == 0:
        return _zero()
    return ad.sum_(ad.where(valid, values, 0.0)) / float(count)


def loss_data(pred_depth, pred_flow, gt_depth, gt_flow, depth_valid=None, flow_valid=None):
    """L1 depth + L1 flow, each averaged over its valid pixels.

    Returns ``(depth_term, flow_term)``; ``pred_flow`` may be None (no next frame).
    """
    gt_depth = np.asarray(gt_depth)
    if depth_valid is None:
        depth_valid = np.ones(gt_depth.shape, dtype=bool)
    d_term = _masked_mean(ad.abs_(ad.as_tensor(pred_depth) - gt_depth), depth_valid)
    if pred_flow is None or gt_flow is None:
        return d_term, _zero()
    gt_flow = np.asarray(gt_flow)
    if flow_valid is None:
        flow_valid = np.ones(gt_flow.shape[:-1], dtype=bool)
    f_l1 = ad.sum_(ad.abs_(ad.as_tensor(pred_flow) - gt_flow), axis=-1)
    return d_term, _masked_mean(f_l1, flow_valid)


def _l1(x, axis=-1):
    return ad.sum_(ad.abs_(x), axis=axis)


def loss_scene_flow(forward: dict, backward: dict | None = None, occlusion: dict | None = None):
    """Cycle, spatial/temporal smoothness and minimal-flow regularisers.

    ``forward[j]``  : flow of each sample from frame i towards frame j, (..., M, 3)
    ``backward[j]`` : flow re-predicted at the warped sample from j back to i
    ``occlusion[j]``: disocclusion weight w^{i->j} of each sample, (..., M)
    Keys are the available neighbour frames; the temporal term needs both
    ``i-1`` and ``i+1`` and is given under keys ``"prev"``/``"next"`` semantics
    by passing the frames themselves (smaller key = previous frame).
    """
    backward = backward or {}
    occlusion = occlusion or {}
    cyc, smooth, minimal = _zero(), _zero(), _zero()
    for j, f in forward.items():
        f = ad.as_tensor(f)
        if j in backward:
            w = occlusion.get(j)
            resid = _l1(f + backward[j])
            if w is not None:
                resid = resid * (1.0 - ad.as_tensor(w))
            cyc = cyc + ad.mean(resid)
        if f.shape[-2] > 1:
            smooth = smooth + ad.mean(_l1(f[..., 1:, :] - f[..., :-1, :]))
        minimal = minimal + ad.mean(_l1(f))
    if len(forward) == 2:
        a, b = (ad.as_tensor(forward[k]) for k in sorted(forward))
        smooth = smooth + 0.5 * ad.mean(ad.sum_(ad.square(a + b), axis=-1))
    return cyc, smooth, minimal


def occlusion_regulariser(w) -> ad.Tensor:
    """L1 pull of the predicted disocclusion weights towards zero."""
    return ad.mean(ad.as_tensor(w))


@dataclass
class LossWeights:
    lambda_data: float = 0.04
    lambda_sf: float = 0.1
    lambda_st: float = 1.0
    lambda_cyc: float = 1.0
    lambda_occ: float = 0.01
    data_decay: float = 0.1
    decay_interval: int = 3333

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"{f.name} must be non-negative")
        if self.decay_interval < 1:
            raise ValueError("decay_interval must be >= 1")

    def data_weight(self, step: int) -> float:
        return self.lambda_data * self.data_decay ** (step // self.decay_interval)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class LossReport:
    step: int = 0
    rgb_dy: float = 0.0
    rgb_st: float = 0.0
    rgb_cb: float = 0.0
    cross: float = 0.0
    data_depth: float = 0.0
    data_flow: float = 0.0
    cyc: float = 0.0
    smooth: float = 0.0
    min: float = 0.0
    occ_reg: float = 0.0
    lambda_data: float = 0.0
    total: float = 0.0

    @classmethod
    def columns(cls) -> list:
        return [f.name for f in fields(cls)]

    def row(self) -> list:
        return [getattr(self, c) for c in self.columns()]


def total_loss(terms: dict, weights: LossWeights, step: int = 0):
    """Weighted sum of the loss terms; returns ``(total_tensor, LossReport)``.

    total = rgb_cb + rgb_dy + l_st*rgb_st + cross + l_data(step)*(depth + flow)
            + l_sf*(l_cyc*cyc + smooth + min) + l_occ*occ_reg
    """
    t = {k: ad.as_tensor(terms.get(k, 0.0)) for k in TERMS}
    lam_data = weights.data_weight(step)
    total = (t["rgb_cb"] + t["rgb_dy"] + weights.lambda_st * t["rgb_st"] + t["cross"]
             + lam_data * (t["data_depth"] + t["data_flow"])
             + weights.lambda_sf * (weights.lambda_cyc * t["cyc"] + t["smooth"] + t["min"])
             + weights.lambda_occ * t["occ_reg"])
    report = LossReport(step=step, lambda_data=lam_data, total=float(total.value),
                        **{k: float(v.value) for k, v in t.items()})
    return total, report
