"""Adam, training configuration, the per-step objective and checkpoints."""
from __future__ import annotations

import csv
import hashlib
import json
import os
import struct
from dataclasses import asdict, dataclass, field, fields
from typing import Callable

import numpy as np

from . import autodiff as ad
from . import losses as L
from . import renderer as rd
from .fields import DynamicField, MLPConfig, StaticField
from .model import BlurModel
from .trajectory import fixed_basis, init_learnable_basis, scene_flow


# -- optimiser -----------------------------------------------------------------
@dataclass
class AdamState:
    lr: dict = field(default_factory=lambda: dict(ad.GROUP_LEARNING_RATES))
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    skipped: int = 0


def adam_step(params, grads, state: AdamState, lr_scale: float = 1.0):
    """One bias-corrected Adam update, in place.  Non-finite gradients skip their tensor."""
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for p, g in zip(params, grads):
        if g is None:
            continue
        g = np.asarray(g)
        if g.shape != p.value.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.value.shape}")
        if not np.all(np.isfinite(g)):
            state.skipped += 1
            continue
        key = p.name or str(id(p))
        m = state.m.get(key)
        if m is None:
            m = np.zeros_like(p.value)
            state.v[key] = np.zeros_like(p.value)
        v = state.v[key]
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        state.m[key], state.v[key] = m, v
        lr = state.lr[getattr(p, "group", "mlp")] * lr_scale
        p.value = (p.value - lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.value.dtype)
    return params


# -- configuration -------------------------------------------------------------------
@dataclass
class TrainConfig:
    steps: int = 20000
    batch: int = 1024
    samples: int = 64
    n: int = 7
    K: int = 6
    seed: int = 0
    deterministic: bool = True
    # field architecture
    width: int = 128
    depth: int = 4
    skip: int = 2
    pos_freqs: int = 10
    dir_freqs: int = 4
    time_freqs: int = 6
    dtype: str = "float64"
    # optimisation
    lr_mlp: float = 5e-4
    lr_camera: float = 1e-3
    lr_basis: float = 1.25e-4
    lr_final_factor: float = 1.0         # exponential decay of every rate to this factor
    stratified: bool = True
    curriculum_start: int = 2
    curriculum_ramp: float = 0.5         # fraction of the run over which the radius grows
    checkpoint_every: int = 5000
    # components (ablation switches)
    use_cross: bool = True
    use_evc: bool = True
    use_static: bool = True
    use_scene_flow: bool = True
    learn_basis: bool = True
    learn_poses: bool = True
    weights: L.LossWeights = field(default_factory=L.LossWeights)

    def __post_init__(self):
        if isinstance(self.weights, dict):
            self.weights = L.LossWeights(**self.weights)
        if self.n < 1 or self.K < 1:
            raise ValueError("need n >= 1 and K >= 1")
        if self.steps < 0 or self.batch < 1 or self.samples < 1:
            raise ValueError("steps >= 0, batch >= 1 and samples >= 1 required")

    def mlp(self, center=(0.0, 0.0, 0.0), scale=1.0) -> MLPConfig:
        return MLPConfig(self.width, self.depth, self.skip, self.pos_freqs, self.dir_freqs,
                         self.time_freqs, self.K, tuple(center), float(scale), self.dtype)

    def learning_rates(self) -> dict:
        return {"mlp": self.lr_mlp, "camera": self.lr_camera, "dct_basis": self.lr_basis}

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path: str) -> "TrainConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path: str) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def desk_config(**kw) -> TrainConfig:
    """The desk-scale defaults (20k steps, 1024 rays, 64 samples, 128-wide MLPs)."""
    return TrainConfig(**kw)


def compact_config(**kw) -> TrainConfig:
    """Single-core budget: narrower MLPs, fewer rays and samples, same schedule shape."""
    base = dict(batch=32, samples=16, width=64, depth=4, pos_freqs=6, dir_freqs=2,
                time_freqs=4, lr_mlp=2e-3, lr_final_factor=0.1, dtype="float32")
    base.update(kw)
    return TrainConfig(**base)


PRESETS = {"desk": desk_config, "compact": compact_config}


# -- model construction ----------------------------------------------------------------
def scene_bounds(camera, poses) -> tuple:
    """Centre and half-extent of the region swept by every camera frustum."""
    corners = camera.local_directions([0, 0, camera.height - 1, camera.height - 1],
                                      [0, camera.width - 1, 0, camera.width - 1])
    corners /= np.linalg.norm(corners, axis=1, keepdims=True)
    pts = []
    for p in poses:
        d = corners @ p.rotation.T
        for z in (camera.near, camera.far):
            pts.append(p.translation + z * d)
    pts = np.concatenate(pts)
    lo, hi = pts.min(0), pts.max(0)
    return (lo + hi) / 2.0, float(np.max(hi - lo) / 2.0)


def build_model(dataset, config: TrainConfig) -> BlurModel:
    center, scale = scene_bounds(dataset.camera, list(dataset.starts) + list(dataset.ends))
    mcfg = config.mlp(center, scale)
    N = len(dataset.starts)
    total = config.n * N
    dynamic = DynamicField(mcfg, total, seed=config.seed)
    static = StaticField(mcfg, seed=config.seed + 1) if config.use_static else None
    basis = (init_learnable_basis if config.learn_basis else fixed_basis)(config.n, N, config.K)
    return BlurModel(dataset.camera, config.n, dataset.starts, dataset.ends, dynamic, static,
                     basis, learn_poses=config.learn_poses)


# -- schedules ---------------------------------------------------------------------------------
def curriculum_radius(step: int, N: int, config: TrainConfig) -> int:
    ramp = config.curriculum_ramp * config.steps
    frac = 1.0 if ramp <= 0 else min(1.0, step / ramp)
    start = config.curriculum_start
    return max(start, int(round(start + (N - start) * frac)))


def curriculum_q(i: int, step: int, config: TrainConfig, N: int, rng) -> int:
    """Extra cross-time target: uniform over frames != i within the current radius."""
    if N < 2:
        raise ValueError("curriculum frame needs N >= 2")
    r = curriculum_radius(step, N, config)
    choices = [j for j in range(max(1, i - r), min(N, i + r) + 1) if j != i]
    return int(choices[rng.integers(len(choices))])


# -- one optimisation step ----------------------------------------------------------------------
class TrainingDiverged(RuntimeError):
    pass


@dataclass
class StepBatch:
    frame: int
    rows: np.ndarray
    cols: np.ndarray
    depths: np.ndarray
    q: int | None


def sample_batch(dataset, config: TrainConfig, step: int, rng) -> StepBatch:
    cam = dataset.camera
    N = len(dataset.starts)
    i = int(rng.integers(1, N + 1))
    pix = rng.choice(cam.width * cam.height, size=config.batch, replace=False)
    rows, cols = np.divmod(pix, cam.width)
    depths = rd.sample_depths(cam.near, cam.far, config.samples, (1, config.batch),
                              rng if config.stratified else None, np.dtype(config.dtype))
    q = curriculum_q(i, step, config, N, rng) if (config.use_cross and N > 1) else None
    return StepBatch(i, rows, cols, depths, q)


def step_terms(model: BlurModel, dataset, batch: StepBatch, config: TrainConfig,
               frozen: dict | None = None) -> dict:
    """Forward pass of every loss term for one batch (shared field queries).

    The disocclusion maps weighting the cross-time residuals carry no
    gradient.  Passing an empty dict as ``frozen`` records them; passing it
    back replays the recorded maps, which lets a finite-difference check
    evaluate exactly the function the tape differentiates.
    """
    i, rows, cols = batch.frame, batch.rows, batch.cols
    N = model.N
    gt = dataset.blurry[i - 1][rows, cols].astype(config.dtype)
    modes = ("dynamic", "static") if config.use_static else ("dynamic",)
    q = rd.exposure_queries(model, i, rows, cols, batch.depths, modes=modes)
    far = model.camera.far
    terms = {}
    dy = rd.render_queries(q, "dynamic", far)
    terms["rgb_dy"] = L.loss_rgb_dynamic(dy.blurry, gt)
    prior_render = dy
    if config.use_static:
        st = rd.render_queries(q, "static", far)
        cb = rd.render_queries(q, "combined", far)
        mask = dataset.mask[i - 1][rows, cols]
        terms["rgb_st"] = L.loss_rgb_static(st.blurry, gt, mask)
        terms["rgb_cb"] = L.loss_rgb_dynamic(cb.blurry, gt)
        prior_render = cb

    neighbours = [j for j in (i - 1, i + 1) if 1 <= j <= N]
    targets = list(neighbours) if (config.use_cross or config.use_scene_flow) else []
    if config.use_cross and batch.q is not None and batch.q not in targets:
        targets.append(batch.q)
    warped = {j: rd.render_warped_queries(model, q, j) for j in targets}

    if config.use_cross:
        cross_set = [warped[j] for j in sorted(set(neighbours) | {batch.q} - {None})]
        if frozen is not None:
            for w in cross_set:
                if w.target in frozen:
                    w.disocclusion = frozen[w.target]
                else:
                    frozen[w.target] = ad.value_of(w.disocclusion).copy()
        terms["cross"] = L.loss_cross(cross_set, gt)

    flow_next = warped[i + 1].flow if (i + 1) in warped else None
    flows = rd.flow_stack(model, q, prior_render.per_timestamp.weights, flow_next)
    pri = rd.composite_priors(prior_render.per_timestamp.depth, flows, config.use_evc)
    d_term, f_term = L.loss_data(
        pri.depth, pri.flow, dataset.depth[i - 1][rows, cols],
        None if pri.flow is None else dataset.flow[i - 1][rows, cols],
        None, None if pri.flow is None else dataset.flow_valid[i - 1][rows, cols])
    terms["data_depth"], terms["data_flow"] = d_term, f_term

    if config.use_scene_flow:
        fwd, bwd, occ = {}, {}, {}
        t_src = q.times[:, None, None]
        for j in neighbours:
            w = warped[j]
            t_dst = np.array([model.time_index(j, l) for l in range(1, model.n + 1)])[:, None, None]
            fwd[j] = w.flow
            bwd[j] = scene_flow(w.warped.psi, model.basis, t_dst, t_src)
            occ[j] = q.dyn.w[..., 0] if j > i else q.dyn.w[..., 1]
        terms["cyc"], terms["smooth"], terms["min"] = L.loss_scene_flow(fwd, bwd, occ)
    terms["occ_reg"] = L.occlusion_regulariser(q.dyn.w)
    return terms


def _diagnose(terms: dict) -> str:
    bad = [k for k, v in terms.items() if not np.all(np.isfinite(ad.value_of(v)))]
    vals = ", ".join(f"{k}={float(ad.value_of(v)):.4g}" for k, v in terms.items())
    return f"non-finite loss terms {bad or ['total']} ({vals})"


# -- checkpoints -------------------------------------------------------------------------------------
MAGIC = b"BLURFCKP"
CKPT_VERSION = 1


def save_checkpoint(path: str, arrays: dict, meta: dict) -> None:
    """Deterministic binary: magic, version, JSON header length, header, raw little-endian data."""
    names = sorted(arrays)
    entries, blobs, offset = [], [], 0
    for name in names:
        a = np.ascontiguousarray(arrays[name])
        a = a.astype(a.dtype.newbyteorder("<"))
        raw = a.tobytes()
        entries.append({"name": name, "dtype": a.dtype.str, "shape": list(a.shape),
                        "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"meta": meta, "arrays": entries}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<II", CKPT_VERSION, len(header)) + header)
        for raw in blobs:
            fh.write(raw)


def load_checkpoint(path: str) -> tuple:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint")
    version, hlen = struct.unpack("<II", data[8:16])
    if version != CKPT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    header = json.loads(data[16:16 + hlen])
    base = 16 + hlen
    arrays = {}
    for e in header["arrays"]:
        buf = data[base + e["offset"]: base + e["offset"] + e["nbytes"]]
        arrays[e["name"]] = np.frombuffer(buf, dtype=e["dtype"]).reshape(e["shape"]).copy()
    return arrays, header["meta"]


def checkpoint_arrays(model: BlurModel, opt: AdamState | None = None) -> dict:
    out = {f"param/{k}": v for k, v in model.state_dict().items()}
    if opt is not None:
        for k in opt.m:
            out[f"adam_m/{k}"] = opt.m[k]
            out[f"adam_v/{k}"] = opt.v[k]
    return out


def restore_model(model: BlurModel, arrays: dict) -> None:
    model.load_state_dict({k[6:]: v for k, v in arrays.items() if k.startswith("param/")})


def checkpoint_name(step: int) -> str:
    return f"ckpt_{step:06d}"


# -- training loop --------------------------------------------------------------------------------------
@dataclass
class TrainResult:
    model: BlurModel
    reports: list
    optimizer: AdamState
    checkpoints: list


def _write_reports(path: str, reports: list) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(L.LossReport.columns())
        for r in reports:
            w.writerow([f"{v:.10g}" if isinstance(v, float) else v for v in r.row()])


def train(dataset, config: TrainConfig, out: str | None = None,
          callback: Callable | None = None, model: BlurModel | None = None) -> TrainResult:
    """Optimise all parameter groups jointly; writes ``ckpt_<step>`` and ``losses.csv`` to ``out``."""
    rng = np.random.default_rng(config.seed)
    model = build_model(dataset, config) if model is None else model
    opt = AdamState(lr=config.learning_rates())
    groups = model.parameter_groups()
    params = [p for ps in groups.values() for p in ps]
    reports, ckpts = [], []
    meta = {"config_hash": config.hash(), "seed": config.seed, "config": config.to_dict()}

    def checkpoint(step):
        if out is None:
            return
        path = os.path.join(out, checkpoint_name(step))
        save_checkpoint(path, checkpoint_arrays(model, opt), dict(meta, step=step,
                                                                 adam_step=opt.step))
        ckpts.append(path)

    if out is not None:
        os.makedirs(out, exist_ok=True)
        config.save(os.path.join(out, "config.json"))
        checkpoint(0)
    for step in range(config.steps):
        batch = sample_batch(dataset, config, step, rng)
        terms = step_terms(model, dataset, batch, config)
        total, report = L.total_loss(terms, config.weights, step)
        if not np.isfinite(report.total):
            raise TrainingDiverged(f"step {step}, frame {batch.frame}: {_diagnose(terms)}")
        ad.zero_grad(params)
        ad.backward(total)
        model.mask_frozen_grads()
        frac = step / max(config.steps, 1)
        adam_step(params, [p.grad for p in params], opt, config.lr_final_factor ** frac)
        reports.append(report)
        if callback is not None:
            callback(step, report, model)
        if config.checkpoint_every and (step + 1) % config.checkpoint_every == 0 \
                and step + 1 != config.steps:
            checkpoint(step + 1)
    if out is not None:
        if config.steps > 0:
            checkpoint(config.steps)
        _write_reports(os.path.join(out, "losses.csv"), reports)
    return TrainResult(model, reports, opt, ckpts)


def load_model(dataset, ckpt_path: str, config: TrainConfig | None = None) -> BlurModel:
    """Rebuild a model for ``dataset`` and restore parameters from a checkpoint."""
    arrays, meta = load_checkpoint(ckpt_path)
    if config is None:
        if "config" in meta:
            config = TrainConfig.from_dict(meta["config"])
        else:
            config = TrainConfig.load(os.path.join(os.path.dirname(ckpt_path), "config.json"))
    model = build_model(dataset, config)
    restore_model(model, arrays)
    return model
