"""Quadrature volume rendering, exposure averaging, cross-time warping and EVC.

All batched entry points render a set of pixels ``(rows, cols)`` of one
frame ``i`` (1-based).  Leading axes are ``(n, R, M)`` = (timestamps in the
exposure, rays, samples along each ray).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .fields import blend
from .geometry import Ray, pixel_rays
from .trajectory import scene_flow

MODES = ("dynamic", "static", "combined")


# -- sampling ------------------------------------------------------------------
@dataclass
class SampleSet:
    depths: np.ndarray      # (..., M) ascending in [near, far]
    far: float
    mode: str = "midpoint"


def sample_depths(near: float, far: float, M: int, shape=(), rng=None,
                  dtype=np.float64) -> np.ndarray:
    """Stratified samples when ``rng`` is given, bin midpoints otherwise."""
    edges = np.linspace(near, far, M + 1, dtype=np.float64)
    lo, width = edges[:-1], np.diff(edges)
    shape = tuple(np.atleast_1d(shape)) if shape != () else ()
    if rng is None:
        u = np.full(shape + (M,), 0.5)
    else:
        u = rng.random(shape + (M,))
    return (lo + u * width).astype(dtype)


def sample_deltas(depths: np.ndarray, far: float) -> np.ndarray:
    last = far - depths[..., -1:]
    return np.concatenate([np.diff(depths, axis=-1), last], axis=-1)


# -- quadrature ------------------------------------------------------------------
@dataclass
class RenderOutput:
    color: object            # (..., 3)
    depth: object            # (...,)
    alpha: object            # (...,) accumulated opacity
    weights: object          # (..., M)
    final_transmittance: object


def composite(sigma, color, depths: np.ndarray, far: float) -> RenderOutput:
    """Alpha-composite per-sample emissions; ``sigma`` (..., M), ``color`` (..., M, 3)."""
    if not np.all(np.isfinite(ad.value_of(sigma))):
        raise ValueError("non-finite density")
    sigma = ad.as_tensor(sigma)
    delta = sample_deltas(np.asarray(depths), far).astype(sigma.dtype)
    sd = sigma * delta
    cum = ad.cumsum(sd, axis=-1)
    trans = ad.exp(-(cum - sd))
    alpha = 1.0 - ad.exp(-sd)
    weights = trans * alpha
    out_color = ad.sum_(ad.expand_dims(weights, -1) * color, axis=-2)
    depth = ad.sum_(weights * depths.astype(sigma.dtype), axis=-1)
    acc = ad.sum_(weights, axis=-1)
    final = ad.exp(-cum[..., -1])
    return RenderOutput(out_color, depth, acc, weights, final)


def render_ray(ray: Ray, samples: SampleSet, emit) -> RenderOutput:
    """Render one ray.  ``emit(points, direction) -> (color (M,3), sigma (M,))``."""
    pts = ray.origin[None, :] + ray.direction[None, :] * samples.depths[:, None]
    color, sigma = emit(pts, ray.direction)
    return composite(sigma, color, samples.depths, samples.far)


# -- exposure rendering ------------------------------------------------------------
@dataclass
class ExposureQueries:
    """Rays and field evaluations for all ``n`` timestamps of one exposure."""

    frame: int
    rows: np.ndarray
    cols: np.ndarray
    depths: np.ndarray       # (n, R, M) or broadcastable
    origins: object          # (n, R, 3)
    dirs: object             # (n, R, 3)
    points: object           # (n, R, M, 3)
    times: np.ndarray        # (n,) flat timestamps
    dyn: object = None       # FieldOutput
    st: object = None        # StaticOutput


@dataclass
class ExposureRender:
    per_timestamp: RenderOutput     # fields stacked over (n, R, ...)
    blurry: object                  # (R, 3) = mean over timestamps

    @property
    def colors(self):
        return self.per_timestamp.color


def exposure_rays(model, i: int, rows, cols):
    origins, dirs = [], []
    for l in range(1, model.n + 1):
        r, t = model.pose_tensors(i, model.fraction(l))
        o, d = pixel_rays(model.camera, r, t, rows, cols)
        origins.append(o)
        dirs.append(d)
    return ad.stack(origins, 0), ad.stack(dirs, 0)


def exposure_queries(model, i: int, rows, cols, depths=None, modes=MODES) -> ExposureQueries:
    rows = np.atleast_1d(np.asarray(rows))
    cols = np.atleast_1d(np.asarray(cols))
    cam = model.camera
    if depths is None:
        depths = sample_depths(cam.near, cam.far, 64, (1, len(rows)))
    depths = np.asarray(depths)
    origins, dirs = exposure_rays(model, i, rows, cols)
    points = ad.expand_dims(origins, -2) + ad.expand_dims(dirs, -2) * depths[..., None]
    times = np.array([model.time_index(i, l) for l in range(1, model.n + 1)])
    q = ExposureQueries(i, rows, cols, depths, origins, dirs, points, times)
    dview = ad.expand_dims(dirs, -2)
    if "dynamic" in modes or "combined" in modes:
        q.dyn = model.dynamic(points, dview, times[:, None, None])
    if "static" in modes or "combined" in modes:
        q.st = model.static(points, dview)
    return q


def _emissions(q: ExposureQueries, mode: str):
    if mode == "dynamic":
        return q.dyn.color, q.dyn.sigma
    if mode == "static":
        return q.st.color, q.st.sigma
    if mode == "combined":
        return blend(q.dyn, q.st)
    raise ValueError(f"unknown render mode {mode!r}")


def render_queries(q: ExposureQueries, mode: str, far: float) -> ExposureRender:
    color, sigma = _emissions(q, mode)
    out = composite(sigma, color, q.depths, far)
    return ExposureRender(out, ad.mean(out.color, axis=0))


def render_exposure(model, i: int, rows, cols, mode: str = "combined", depths=None) -> ExposureRender:
    """Blurry colour of pixels of frame ``i``: uniform mean over the n sharp renders."""
    if mode not in MODES:
        raise ValueError(f"unknown render mode {mode!r}")
    q = exposure_queries(model, i, rows, cols, depths, modes=(mode,))
    return render_queries(q, mode, model.camera.far)


# -- cross-time rendering --------------------------------------------------------------
@dataclass
class WarpedRender:
    target: int
    per_timestamp: RenderOutput      # warped renders C_l^{j->i}, (n, R, ...)
    blurry: object                   # B^{j->i}, (R, 3)
    flow: object                     # forward scene flow of each sample, (n, R, M, 3)
    warped: object                   # FieldOutput at warped points and target times
    occlusion: object                # W_l^{j->i}, (n, R)
    disocclusion: object             # W^{j->i} = mean_l W_l, (R,)


def render_warped_queries(model, q: ExposureQueries, j: int) -> WarpedRender:
    """Render frame ``i`` rays through the dynamic field at frame ``j``'s timestamps."""
    i = q.frame
    if not 1 <= j <= model.N:
        raise IndexError(f"target frame {j} outside 1..{model.N}")
    t_src = q.times[:, None, None]
    t_dst = np.array([model.time_index(j, l) for l in range(1, model.n + 1)])[:, None, None]
    flow = scene_flow(q.dyn.psi, model.basis, t_src, t_dst)
    warped_pts = q.points + flow
    out = model.dynamic(warped_pts, ad.expand_dims(q.dirs, -2), t_dst)
    render = composite(out.sigma, out.color, q.depths, model.camera.far)
    if j == i:
        occ_w = ad.Tensor(np.zeros(ad.value_of(out.sigma).shape))
    else:
        occ_w = q.dyn.w[..., 0] if j > i else q.dyn.w[..., 1]
    occlusion = ad.sum_(render.weights * (1.0 - occ_w), axis=-1)
    return WarpedRender(j, render, ad.mean(render.color, axis=0), flow, out, occlusion,
                        ad.mean(occlusion, axis=0))


def render_warped(model, i: int, rows, cols, j: int, l: int | None = None,
                  depths=None) -> RenderOutput:
    """Warped render of frame ``i`` pixels towards frame ``j`` (one timestamp or all)."""
    q = exposure_queries(model, i, rows, cols, depths, modes=("dynamic",))
    w = render_warped_queries(model, q, j)
    if l is None:
        return w.per_timestamp
    k = l - 1
    p = w.per_timestamp
    return RenderOutput(p.color[k], p.depth[k], p.alpha[k], p.weights[k], p.final_transmittance[k])


def render_disocclusion(model, i: int, rows, cols, j: int, l: int | None = None, depths=None):
    """Disocclusion map W_l^{j->i} for timestamp ``l``, or the exposure mean when ``l`` is None."""
    q = exposure_queries(model, i, rows, cols, depths, modes=("dynamic",))
    w = render_warped_queries(model, q, j)
    return w.disocclusion if l is None else w.occlusion[l - 1]


# -- depth / flow priors with extreme value compositing --------------------------------------
def evc_depth(depth_stack):
    """Per-pixel minimum over timestamps (axis 0); ties resolve to the first."""
    return ad.min_(depth_stack, axis=0)


def evc_flow(flow_stack):
    """Per-pixel flow of largest Euclidean norm over timestamps (axis 0), first on ties."""
    v = ad.value_of(flow_stack)
    idx = np.argmax(np.sum(v * v, axis=-1), axis=0)[None, ..., None]
    picked = ad.take_along_axis(flow_stack, np.broadcast_to(idx, (1,) + v.shape[1:]), axis=0)
    return ad.squeeze(picked, 0)


def average_stack(stack):
    return ad.mean(stack, axis=0)


def project_points(model, i: int, s: float, points):
    """World points -> (col, row) pixels in frame ``i``'s camera at fraction ``s``."""
    r, t = model.pose_tensors(i, s)
    cam_pts = ad.matmul(ad.reshape(points - t, (-1, 3)), r)
    cam_pts = ad.reshape(cam_pts, ad.value_of(points).shape)
    z = cam_pts[..., 2]
    z = ad.where(ad.value_of(z) > 1e-3, z, 1e-3)
    cam = model.camera
    u = cam_pts[..., 0] / z * cam.fx + cam.cx
    v = cam_pts[..., 1] / z * cam.fy + cam.cy
    return ad.stack([u, v], axis=-1)


def flow_stack(model, q: ExposureQueries, weights, flow_next=None):
    """Per-timestamp 2D flow (dx, dy) of frame ``i`` pixels towards frame ``i+1``.

    Each sample is moved by its scene flow, projected with the camera of the
    same timestamp in the next exposure, and the offsets are alpha-composited
    with ``weights`` (n, R, M).  Returns None for the last frame.
    """
    i = q.frame
    if i >= model.N:
        return None
    if flow_next is None:
        t_dst = np.array([model.time_index(i + 1, l) for l in range(1, model.n + 1)])
        flow_next = scene_flow(q.dyn.psi, model.basis, q.times[:, None, None], t_dst[:, None, None])
    moved = q.points + flow_next
    src = np.stack([q.cols, q.rows], axis=-1).astype(ad.value_of(weights).dtype)   # (R, 2)
    flows = []
    for l in range(1, model.n + 1):
        pix = project_points(model, i + 1, model.fraction(l), moved[l - 1])      # (R, M, 2)
        flows.append(ad.sum_(ad.expand_dims(weights[l - 1], -1) * (pix - src[:, None, :]), axis=-2))
    return ad.stack(flows, 0)


@dataclass
class Priors:
    depth: object              # (R,)
    flow: object               # (R, 2) or None for the last frame
    depth_stack: object        # (n, R)
    flow_stack: object         # (n, R, 2) or None


def composite_priors(depth_stack, flows, evc: bool = True) -> Priors:
    if evc:
        d = evc_depth(depth_stack)
        f = None if flows is None else evc_flow(flows)
    else:
        d = average_stack(depth_stack)
        f = None if flows is None else average_stack(flows)
    return Priors(d, f, depth_stack, flows)


def render_priors(model, i: int, rows, cols, depths=None, evc: bool = True) -> Priors:
    """Rendered depth (min over the exposure) and flow (largest over the exposure)."""
    mode = "dynamic" if model.static is None else "combined"
    q = exposure_queries(model, i, rows, cols, depths, modes=(mode,))
    cb = render_queries(q, mode, model.camera.far).per_timestamp
    return composite_priors(cb.depth, flow_stack(model, q, cb.weights), evc)


def render_image(model, i: int, s: float = 0.5, mode: str = "combined", M: int = 64,
                 chunk: int = 4096):
    """Sharp full-frame render at exposure fraction ``s`` (midpoint samples, no grad)."""
    if mode == "combined" and model.static is None:
        mode = "dynamic"
    cam = model.camera
    rows, cols = np.meshgrid(np.arange(cam.height), np.arange(cam.width), indexing="ij")
    rows, cols = rows.ravel(), cols.ravel()
    t = _fractional_time(model, i, s)
    colors, depth = [], []
    with ad.no_grad():
        r, tr = model.pose_tensors(i, s)
        for a in range(0, rows.size, chunk):
            o, d = pixel_rays(cam, r, tr, rows[a:a + chunk], cols[a:a + chunk])
            z = sample_depths(cam.near, cam.far, M, (1,))
            pts = ad.expand_dims(o, -2) + ad.expand_dims(d, -2) * z[..., None]
            dview = ad.expand_dims(d, -2)
            q = ExposureQueries(i, None, None, z, o, d, pts, np.array([t]))
            if mode in ("dynamic", "combined"):
                q.dyn = model.dynamic(pts, dview, t)
            if mode in ("static", "combined"):
                q.st = model.static(pts, dview)
            color, sigma = _emissions(q, mode)
            out = composite(sigma, color, z, cam.far)
            colors.append(out.color.value)
            depth.append(out.depth.value)
    shape = (cam.height, cam.width)
    return np.concatenate(colors).reshape(shape + (3,)), np.concatenate(depth).reshape(shape)


def _fractional_time(model, i: int, s: float) -> float:
    return (i - 1) * model.n + s * (model.n - 1)
