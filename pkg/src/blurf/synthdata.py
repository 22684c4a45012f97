"""Analytic dynamic scenes with exact sharp / blurry / depth / flow ground truth.

A scene is a textured wall (plane ``z = wall_depth``) plus moving primitives
(fronto-parallel quads, axis-aligned boxes, spheres), seen by a pinhole camera
that moves along a piecewise-geodesic path over global time ``[0, 1]``.
Frame ``i`` (1-based) is exposed over an interval centred at ``(i - 0.5)/N``;
its blurry image is the mean of ``S`` sharp rasters spanning that interval and
its sharp ground truth is the raster at the interval centre.
"""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .geometry import Camera, Pose, interpolate_fraction, so3_exp
from .imageio import read_mask, read_pfm, read_png, write_mask, write_pfm, write_png

SCHEMA_VERSION = 1
INF = np.inf


# -- scene description -----------------------------------------------------------
@dataclass
class Texture:
    """``clip(base + sum_k amp_k * sin(2 pi (fu_k u + fv_k v) + phase_k))`` per channel."""

    base: tuple = (0.5, 0.5, 0.5)
    waves: list = field(default_factory=list)   # [fu, fv, phase, (ar, ag, ab)]

    def __call__(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        out = np.broadcast_to(np.asarray(self.base, dtype=np.float64),
                              u.shape + (3,)).copy()
        for fu, fv, phase, amp in self.waves:
            s = np.sin(2.0 * np.pi * (fu * u + fv * v) + phase)
            out += s[..., None] * np.asarray(amp, dtype=np.float64)
        return np.clip(out, 0.0, 1.0)

    @classmethod
    def random(cls, rng, n_waves: int, freq: float, amp: float, base=None,
               spread: float = np.pi / 2) -> "Texture":
        """Random waves whose direction lies within ``spread`` radians of the u axis."""
        waves = []
        for _ in range(n_waves):
            ang = rng.uniform(-spread, spread)
            f = freq * rng.uniform(0.7, 1.3)
            waves.append([f * np.cos(ang), f * np.sin(ang), rng.uniform(0, 2 * np.pi),
                          list(rng.uniform(-amp, amp, 3))])
        base = tuple(rng.uniform(0.35, 0.65, 3)) if base is None else tuple(base)
        return cls(base, waves)


@dataclass
class Trajectory:
    """Polynomial drift ``sum_k coeffs[k] t^k`` plus an optional bob ``amp * sin(2 pi freq t + phase)``."""

    coeffs: list = field(default_factory=lambda: [[0.0, 0.0, 0.0]])
    amp: tuple = (0.0, 0.0, 0.0)
    freq: float = 0.0
    phase: float = 0.0

    def __call__(self, t: float) -> np.ndarray:
        c = np.asarray(self.coeffs, dtype=np.float64)
        pos = sum(c[k] * t ** k for k in range(len(c)))
        return pos + np.asarray(self.amp, dtype=np.float64) * np.sin(
            2 * np.pi * self.freq * t + self.phase)


@dataclass
class Mover:
    kind: str                        # quad | box | sphere
    size: tuple                      # half extents (quad/box) or (radius,) for spheres
    trajectory: Trajectory
    texture: Texture

    def position(self, t: float) -> np.ndarray:
        return self.trajectory(t)


@dataclass
class SceneScript:
    name: str = "scene"
    width: int = 96
    height: int = 54
    focal: float = 80.0
    near: float = 1.5
    far: float = 5.5
    frames: int = 12
    n: int = 7
    substeps: int = 21
    exposure: float = 0.5
    wall_depth: float = 4.0
    wall_texture: Texture = field(default_factory=Texture)
    movers: list = field(default_factory=list)
    camera_keys: list = field(default_factory=lambda: [[0.0, np.eye(4)[:3].ravel().tolist()]])
    prior_dilation: int = 0           # >0: fatten foreground in depth/flow priors (pixels)

    def __post_init__(self):
        if self.substeps < 1 or not 0 < self.exposure <= 1:
            raise ValueError("need substeps >= 1 and exposure in (0, 1]")
        if self.substeps < self.n:
            raise ValueError("substeps must oversample the model timestamps (S >= n)")

    @property
    def camera(self) -> Camera:
        return Camera.centered(self.width, self.height, self.focal, self.near, self.far)

    def camera_pose(self, t: float) -> Pose:
        keys = self.camera_keys
        if len(keys) == 1 or t <= keys[0][0]:
            return Pose.from_matrix(keys[0][1])
        for (t0, m0), (t1, m1) in zip(keys[:-1], keys[1:]):
            if t <= t1:
                s = (t - t0) / (t1 - t0)
                return interpolate_fraction(Pose.from_matrix(m0), Pose.from_matrix(m1), s)
        return Pose.from_matrix(keys[-1][1])

    def exposure_interval(self, i: int) -> tuple:
        centre = (i - 0.5) / self.frames
        half = self.exposure / (2.0 * self.frames)
        return centre - half, centre + half

    def substep_times(self, i: int, S: int | None = None) -> np.ndarray:
        S = self.substeps if S is None else S
        a, b = self.exposure_interval(i)
        if S == 1:
            return np.array([(a + b) / 2.0])
        return a + (b - a) * np.arange(S) / (S - 1)

    # -- (de)serialisation -------------------------------------------------------------
    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SceneScript":
        d = dict(d)
        d["wall_texture"] = Texture(**d.get("wall_texture", {}))
        movers = []
        for m in d.get("movers", []):
            m = dict(m)
            m["trajectory"] = Trajectory(**m["trajectory"])
            m["texture"] = Texture(**m["texture"])
            movers.append(Mover(**m))
        d["movers"] = movers
        return cls(**d)


# -- ray casting -------------------------------------------------------------------------
def _intersect(kind: str, size, center, origin, dirs):
    """Hit distance per ray (inf on miss) for one primitive."""
    size = np.asarray(size, dtype=np.float64)
    rel = origin - center
    if kind == "sphere":
        r = size[0]
        b = dirs @ rel
        c = rel @ rel - r * r
        disc = b * b - c
        t = -b - np.sqrt(np.maximum(disc, 0.0))
        return np.where((disc >= 0) & (t > 0), t, INF)
    if kind == "quad":
        dz = dirs[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = -rel[2] / dz
        hit = rel[None, :2] + t[:, None] * dirs[:, :2]
        inside = (np.abs(hit[:, 0]) <= size[0]) & (np.abs(hit[:, 1]) <= size[1])
        return np.where(inside & (t > 0) & np.isfinite(t), t, INF)
    if kind == "box":
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / dirs
            t1 = (-size - rel) * inv
            t2 = (size - rel) * inv
        tmin = np.nanmax(np.minimum(t1, t2), axis=1)
        tmax = np.nanmin(np.maximum(t1, t2), axis=1)
        return np.where((tmax >= tmin) & (tmin > 0), tmin, INF)
    raise ValueError(f"unknown primitive {kind!r}")


@dataclass
class Raster:
    image: np.ndarray        # (H, W, 3)
    depth: np.ndarray        # (H, W) hit distance along the unit ray
    mask: np.ndarray         # (H, W) 1 on mover pixels
    owner: np.ndarray        # (H, W) -1 wall, k mover index
    points: np.ndarray       # (H, W, 3) world hit points


def _pixel_rays(script: SceneScript, pose: Pose):
    cam = script.camera
    rows, cols = np.meshgrid(np.arange(cam.height), np.arange(cam.width), indexing="ij")
    local = cam.local_directions(rows.ravel(), cols.ravel())
    dirs = local @ pose.rotation.T
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return pose.translation, dirs


def raster_sharp(script: SceneScript, t: float) -> Raster:
    """Nearest-hit analytic render of the scene at global time ``t``."""
    cam = script.camera
    origin, dirs = _pixel_rays(script, script.camera_pose(t))
    with np.errstate(divide="ignore", invalid="ignore"):
        t_wall = (script.wall_depth - origin[2]) / dirs[:, 2]
    depth = np.where(t_wall > 0, t_wall, INF)
    owner = np.full(depth.shape, -1)
    centers = []
    for k, m in enumerate(script.movers):
        c = m.position(t)
        centers.append(c)
        tk = _intersect(m.kind, m.size, c, origin, dirs)
        closer = tk < depth
        depth = np.where(closer, tk, depth)
        owner = np.where(closer, k, owner)
    pts = origin + dirs * depth[:, None]
    image = script.wall_texture(pts[:, 0], pts[:, 1])
    for k, m in enumerate(script.movers):
        sel = owner == k
        if np.any(sel):
            local = pts[sel] - centers[k]
            image[sel] = m.texture(local[:, 0], local[:, 1])
    shape = (cam.height, cam.width)
    return Raster(image.reshape(shape + (3,)), depth.reshape(shape),
                  (owner >= 0).astype(np.float64).reshape(shape), owner.reshape(shape),
                  pts.reshape(shape + (3,)))


def flow_between(script: SceneScript, t_a: float, t_b: float, raster: Raster | None = None):
    """Pixel displacement (dx, dy) of the point visible at each pixel from ``t_a`` to ``t_b``."""
    raster = raster_sharp(script, t_a) if raster is None else raster
    pts = raster.points.copy()
    for k, m in enumerate(script.movers):
        sel = raster.owner == k
        pts[sel] += m.position(t_b) - m.position(t_a)
    pose = script.camera_pose(t_b)
    cam_pts = (pts - pose.translation) @ pose.rotation
    pix = script.camera.project(cam_pts)
    cam = script.camera
    rows, cols = np.meshgrid(np.arange(cam.height), np.arange(cam.width), indexing="ij")
    return pix - np.stack([cols, rows], axis=-1)


def gt_flow(script: SceneScript, i: int, l: int, n: int | None = None) -> np.ndarray:
    """Flow from timestamp ``l`` of exposure ``i`` to timestamp ``l`` of exposure ``i+1``."""
    if not 1 <= i < script.frames:
        raise IndexError("forward flow needs a next frame")
    n = script.n if n is None else n
    ta = script.substep_times(i, n)[l - 1]
    tb = script.substep_times(i + 1, n)[l - 1]
    return flow_between(script, ta, tb)


def make_blurry(script: SceneScript, i: int, S: int | None = None) -> np.ndarray:
    """Mean of ``S`` sharp rasters uniformly spanning exposure ``i``."""
    times = script.substep_times(i, S)
    acc = np.zeros((script.height, script.width, 3))
    for t in times:
        acc += raster_sharp(script, t).image
    return acc / len(times)


def sharp_frame(script: SceneScript, i: int) -> Raster:
    a, b = script.exposure_interval(i)
    return raster_sharp(script, (a + b) / 2.0)


def _dilate_priors(depth, flow, radius: int):
    """Fatten foreground: each pixel takes the nearest-depth value in a disk."""
    yy, xx = np.mgrid[-radius:radius + 1, -radius:radius + 1]
    foot = (yy ** 2 + xx ** 2) <= radius ** 2
    H, W = depth.shape
    padded = np.pad(depth, radius, mode="edge")
    best = depth.copy()
    arg = np.zeros(depth.shape + (2,), dtype=int)
    for dy, dx in zip(yy[foot], xx[foot]):
        cand = padded[radius + dy:radius + dy + H, radius + dx:radius + dx + W]
        better = cand < best
        best = np.where(better, cand, best)
        arg[better] = (dy, dx)
    if flow is None:
        return best, None
    rows, cols = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
    r = np.clip(rows + arg[..., 0], 0, H - 1)
    c = np.clip(cols + arg[..., 1], 0, W - 1)
    return best, flow[r, c]


# -- datasets ------------------------------------------------------------------------------
def _quantize(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0


@dataclass
class Dataset:
    camera: Camera
    n: int
    blurry: np.ndarray          # (N, H, W, 3), 8-bit quantised
    sharp: np.ndarray           # (N, H, W, 3)
    depth: np.ndarray           # (N, H, W) exposure-min depth prior
    flow: np.ndarray            # (N, H, W, 2) largest-magnitude forward flow prior
    flow_valid: np.ndarray      # (N, H, W) bool
    mask: np.ndarray            # (N, H, W) 1 = dynamic during the exposure
    starts: list
    ends: list
    intervals: list
    script: SceneScript | None = None

    @property
    def N(self) -> int:
        return len(self.starts)


def generate(script: SceneScript) -> Dataset:
    N, S = script.frames, script.substeps
    H, W = script.height, script.width
    blurry = np.zeros((N, H, W, 3))
    sharp = np.zeros((N, H, W, 3))
    depth = np.zeros((N, H, W))
    flow = np.zeros((N, H, W, 2))
    valid = np.zeros((N, H, W), dtype=bool)
    mask = np.zeros((N, H, W))
    starts, ends, intervals = [], [], []
    for i in range(1, N + 1):
        times = script.substep_times(i)
        nxt = script.substep_times(i + 1) if i < N else None
        d_min = np.full((H, W), INF)
        f_best = np.zeros((H, W, 2))
        for s, t in enumerate(times):
            r = raster_sharp(script, t)
            blurry[i - 1] += r.image / len(times)
            d_min = np.minimum(d_min, r.depth)
            mask[i - 1] = np.maximum(mask[i - 1], r.mask)
            if nxt is not None:
                f = flow_between(script, t, nxt[s], r)
                bigger = np.sum(f * f, -1) > np.sum(f_best * f_best, -1)
                f_best = np.where(bigger[..., None], f, f_best)
        if script.prior_dilation > 0:
            d_min, f_best = _dilate_priors(d_min, f_best, script.prior_dilation)
        depth[i - 1] = d_min
        flow[i - 1] = f_best
        valid[i - 1] = nxt is not None
        sharp[i - 1] = sharp_frame(script, i).image
        a, b = script.exposure_interval(i)
        starts.append(script.camera_pose(a))
        ends.append(script.camera_pose(b))
        intervals.append((a, b))
    return Dataset(script.camera, script.n, _quantize(blurry), _quantize(sharp),
                   depth.astype(np.float32).astype(np.float64),
                   flow.astype(np.float32).astype(np.float64), valid, mask,
                   starts, ends, intervals, script)


def write_dataset(ds: Dataset, out: str) -> str:
    """Write images, priors and ``manifest.json``; returns the manifest path."""
    os.makedirs(out, exist_ok=True)
    frames = []
    for k in range(ds.N):
        stem = f"{k + 1:03d}"
        entry = {
            "blurry": f"blurry_{stem}.png", "sharp": f"sharp_{stem}.png",
            "depth": f"depth_{stem}.pfm", "flow": f"flow_{stem}.pfm", "mask": f"mask_{stem}.png",
            "pose_start": ds.starts[k].as_3x4().ravel().tolist(),
            "pose_end": ds.ends[k].as_3x4().ravel().tolist(),
            "exposure_interval": list(ds.intervals[k]),
        }
        write_png(os.path.join(out, entry["blurry"]), ds.blurry[k])
        write_png(os.path.join(out, entry["sharp"]), ds.sharp[k])
        write_pfm(os.path.join(out, entry["depth"]), ds.depth[k])
        f3 = np.concatenate([ds.flow[k], ds.flow_valid[k][..., None].astype(np.float64)], -1)
        write_pfm(os.path.join(out, entry["flow"]), f3)
        write_mask(os.path.join(out, entry["mask"]), ds.mask[k] > 0.5)
        frames.append(entry)
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "camera": ds.camera.to_dict(),
        "n": ds.n,
        "frames": frames,
        "script": ds.script.to_dict() if ds.script is not None else None,
    }
    path = os.path.join(out, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=1)
    return path


def read_dataset(path: str) -> Dataset:
    root = path if os.path.isdir(path) else os.path.dirname(path)
    with open(os.path.join(root, "manifest.json")) as fh:
        m = json.load(fh)
    if m.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported manifest schema {m.get('schema_version')}")
    cam = Camera(**m["camera"])
    fr = m["frames"]
    j = lambda name: os.path.join(root, name)  # noqa: E731
    flows = [read_pfm(j(f["flow"])) for f in fr]
    script = SceneScript.from_dict(m["script"]) if m.get("script") else None
    return Dataset(
        cam, int(m["n"]),
        np.stack([read_png(j(f["blurry"])) for f in fr]),
        np.stack([read_png(j(f["sharp"])) for f in fr]),
        np.stack([read_pfm(j(f["depth"])) for f in fr]).astype(np.float64),
        np.stack([f[..., :2] for f in flows]).astype(np.float64),
        np.stack([f[..., 2] > 0.5 for f in flows]),
        np.stack([read_mask(j(f["mask"])) for f in fr]).astype(np.float64),
        [Pose.from_matrix(f["pose_start"]) for f in fr],
        [Pose.from_matrix(f["pose_end"]) for f in fr],
        [tuple(f["exposure_interval"]) for f in fr],
        script,
    )


# -- preset scenes -----------------------------------------------------------------------------
def _pose_key(t: float, x: float, y: float = 0.0, yaw: float = 0.0) -> list:
    p = Pose(so3_exp([0.0, yaw, 0.0]), [x, y, 0.0])
    return [t, p.as_3x4().ravel().tolist()]


def shaky_path(shake: float, segments: int, yaw: float, drift: float = 0.0) -> list:
    """Zig-zag handheld path: keyframes alternate left/right ``segments`` times over [0, 1].

    With ``segments`` dividing ``2 * frames`` the corners fall between exposures,
    so every exposure sees a single geodesic segment.
    """
    keys = []
    for k in range(segments + 1):
        sign = -1.0 if k % 2 == 0 else 1.0
        t = k / segments
        keys.append(_pose_key(t, sign * shake / 2, drift * (t - 0.5), sign * yaw / 2))
    return keys


def moving_square(seed: int = 0, shake: float = 2.0, segments: int = 6, yaw: float = 0.02,
                  travel: float = 2.0, bob: float = 0.3, depth: float = 2.5,
                  **overrides) -> SceneScript:
    """A textured square crossing a textured wall, filmed by a shaking camera."""
    rng = np.random.default_rng(seed)
    wall = Texture.random(rng, 3, freq=1.25, amp=0.22, spread=0.6)
    square = Texture.random(rng, 2, freq=2.5, amp=0.2, base=(0.8, 0.3, 0.2))
    traj = Trajectory([[-travel / 2.0, 0.0, depth], [travel, 0.0, 0.0]],
                      amp=(0.0, bob, 0.0), freq=1.0)
    script = SceneScript(
        name="moving-square", wall_texture=wall,
        movers=[Mover("quad", (0.35, 0.35), traj, square)],
        camera_keys=shaky_path(shake, segments, yaw) if shake or yaw else [_pose_key(0.0, 0.0)],
    )
    for k, v in overrides.items():
        setattr(script, k, v)
    return script


def two_movers(seed: int = 0, shake: float = 2.0, segments: int = 6, yaw: float = 0.02,
               **overrides) -> SceneScript:
    """Two textured squares on crossing paths at different depths (mutual occlusion)."""
    rng = np.random.default_rng(seed + 100)
    wall = Texture.random(rng, 3, freq=1.25, amp=0.22, spread=0.6)
    a = Texture.random(rng, 2, freq=2.5, amp=0.2, base=(0.85, 0.25, 0.2))
    b = Texture.random(rng, 2, freq=2.5, amp=0.2, base=(0.2, 0.3, 0.85))
    ta = Trajectory([[-1.3, -0.15, 2.3], [2.6, 0.3, 0.0]])
    tb = Trajectory([[1.2, 0.1, 3.0], [-2.4, -0.2, 0.0]])
    script = SceneScript(
        name="two-movers", wall_texture=wall,
        movers=[Mover("quad", (0.3, 0.3), ta, a), Mover("quad", (0.4, 0.35), tb, b)],
        camera_keys=shaky_path(shake, segments, yaw),
    )
    for k, v in overrides.items():
        setattr(script, k, v)
    return script


PRESETS = {"moving-square": moving_square, "two-movers": two_movers}
