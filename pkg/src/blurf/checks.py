"""Self-contained numerical checks: gradient fidelity and rendering / geometry oracles.

Each check returns a :class:`CheckResult` holding the measured error and the
tolerance it is held to.  ``run_all`` backs the ``check`` CLI command and the
acceptance tests reuse the same functions.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from types import SimpleNamespace

import numpy as np

from . import autodiff as ad
from . import renderer as rd
from .fields import FieldOutput, MLPConfig, DynamicField, StaticField
from .geometry import (Camera, Pose, Twist, interpolate_fraction, interpolate_pose, se3_exp,
                       se3_log, so3_exp)
from .losses import LossWeights, loss_cross, loss_rgb_dynamic, total_loss
from .model import BlurModel
from .trajectory import dct_table, eval_trajectory, fixed_basis, init_learnable_basis


@dataclass
class CheckResult:
    name: str
    error: float
    tolerance: float
    seconds: float = 0.0
    detail: str = ""

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.error) and self.error <= self.tolerance)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} {self.name}: error {self.error:.3e} <= {self.tolerance:.0e}"
                f" ({self.seconds:.1f}s){' ' + self.detail if self.detail else ''}")


def _timed(name, tol, fn):
    t0 = time.perf_counter()
    err, detail = fn()
    return CheckResult(name, float(err), tol, time.perf_counter() - t0, detail)


def random_pose(rng, max_angle: float = 3.0, max_trans: float = 2.0) -> Pose:
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return Pose(so3_exp(axis * rng.uniform(0, max_angle)), rng.uniform(-max_trans, max_trans, 3))


# -- toy problem shared by the gradient and cross-time checks --------------------------------------
def toy_problem(seed: int = 0, n: int = 2, N: int = 2, width: int = 8, K: int = 2,
                freeze_first: bool = False):
    """A 2-frame, 6x5-pixel problem with random targets and a tiny float64 model."""
    rng = np.random.default_rng(seed)
    cam = Camera.centered(6, 5, 5.0, 1.0, 3.0)
    starts, ends = [], []
    for k in range(N):
        s = Pose(so3_exp(rng.normal(scale=0.05, size=3)), rng.normal(scale=0.1, size=3))
        starts.append(s)
        ends.append(s @ se3_exp(Twist.from_vector(rng.normal(scale=0.05, size=6))))
    H, W = cam.height, cam.width
    data = SimpleNamespace(
        camera=cam, starts=starts, ends=ends,
        blurry=rng.uniform(0, 1, (N, H, W, 3)),
        mask=(rng.uniform(size=(N, H, W)) < 0.5).astype(float),
        depth=rng.uniform(1.2, 2.8, (N, H, W)),
        flow=rng.normal(scale=0.5, size=(N, H, W, 2)),
        flow_valid=np.stack([np.full((H, W), k < N - 1) for k in range(N)]),
    )
    cfg = MLPConfig(width=width, depth=2, skip=1, pos_freqs=2, dir_freqs=1, time_freqs=1, K=K,
                    scene_center=(0.0, 0.0, 2.0), scene_scale=2.0)
    dyn = DynamicField(cfg, n * N, seed=seed)
    # larger motion coefficients so scene flow is not negligible
    dyn.psi_head.W.value *= 30.0
    st = StaticField(cfg, seed=seed + 1)
    basis = init_learnable_basis(n, N, K)
    model = BlurModel(cam, n, starts, ends, dyn, st, basis, freeze_first=freeze_first)
    return model, data


def _toy_loss(model, data, batch, config, frozen=None):
    from .training import step_terms
    terms = step_terms(model, data, batch, config, frozen)
    total, _ = total_loss(terms, config.weights, 0)
    return total


def gradient_check(seed: int = 0, h: float = 1e-5, floor: float = 1e-6):
    """Tape gradients of the full objective vs central differences on a toy graph.

    4 pixels, 8 samples, 2 frames; every scalar of every parameter group.
    The disocclusion weights of the cross-time term are a stop-gradient
    factor, so the perturbed evaluations replay their unperturbed values.
    Returns (max relative error, {group: max relative error}).
    """
    from .training import StepBatch, TrainConfig

    model, data = toy_problem(seed)
    config = TrainConfig(n=model.n, K=model.basis.K, samples=8, batch=4,
                         weights=LossWeights(lambda_data=0.5))
    rng = np.random.default_rng(seed + 7)
    pix = rng.choice(data.camera.width * data.camera.height, 4, replace=False)
    rows, cols = np.divmod(pix, data.camera.width)
    depths = rd.sample_depths(data.camera.near, data.camera.far, 8, (1, 4), rng)
    batch = StepBatch(1, rows, cols, depths, 2)
    groups = model.parameter_groups()
    groups = {"mlp_dynamic": list(model.dynamic.parameters()),
              "mlp_static": list(model.static.parameters()),
              "camera": groups["camera"], "dct_basis": groups["dct_basis"]}
    params = [p for ps in groups.values() for p in ps]
    ad.zero_grad(params)
    frozen = {}
    ad.backward(_toy_loss(model, data, batch, config, frozen))
    worst = {}
    for gname, ps in groups.items():
        err = 0.0
        for p in ps:
            flat = p.value.reshape(-1)
            grad = p.grad.reshape(-1)
            for k in range(flat.size):
                orig = flat[k]
                with ad.no_grad():
                    flat[k] = orig + h
                    up = float(_toy_loss(model, data, batch, config, frozen).value)
                    flat[k] = orig - h
                    down = float(_toy_loss(model, data, batch, config, frozen).value)
                flat[k] = orig
                fd = (up - down) / (2 * h)
                rel = abs(fd - grad[k]) / max(abs(fd), abs(grad[k]), floor)
                err = max(err, rel)
        worst[gname] = err
    return max(worst.values()), worst


# -- rendering oracles -----------------------------------------------------------------------------
def two_sample_oracle():
    c1, c2 = np.array([0.2, 0.4, 0.6]), np.array([0.9, 0.1, 0.5])
    depths = np.array([1.0, 2.0])
    sigma = np.array([np.log(2.0), np.log(2.0)])        # delta = 1 for both samples
    out = rd.composite(sigma, np.stack([c1, c2]), depths, far=3.0)
    return float(np.max(np.abs(out.color.value - (0.5 * c1 + 0.25 * c2))))


def telescoping(n_rays: int = 10000, M: int = 32, seed: int = 0):
    rng = np.random.default_rng(seed)
    depths = rd.sample_depths(0.5, 4.0, M, (n_rays,), rng)
    sigma = rng.exponential(2.0, (n_rays, M)) * (rng.uniform(size=(n_rays, M)) < 0.5)
    out = rd.composite(sigma, rng.uniform(size=(n_rays, M, 3)), depths, far=4.0)
    return float(np.max(np.abs(out.alpha.value + out.final_transmittance.value - 1.0)))


# -- SE(3) ------------------------------------------------------------------------------------------
def se3_suite(pairs: int = 1000, seed: int = 0):
    """Endpoint exactness, exp(log) round trip and geodesic consistency."""
    rng = np.random.default_rng(seed)
    end_err = rt_err = geo_err = 0.0
    for _ in range(pairs):
        a, b = random_pose(rng), random_pose(rng)
        p0 = interpolate_fraction(a, b, 0.0)
        p1 = interpolate_fraction(a, b, 1.0)
        end_err = max(end_err, np.abs(p0.matrix() - a.matrix()).max(),
                      np.abs(p1.matrix() - b.matrix()).max())
        rel = a.inverse() @ b
        if np.pi - rel.angle() > 1e-3:
            back = se3_exp(se3_log(rel))
            rt_err = max(rt_err, np.abs(back.matrix() - rel.matrix()).max())
            # interpolating from the midpoint to the end stays on the same geodesic
            s, u = rng.uniform(0, 1), rng.uniform(0, 1)
            mid = interpolate_fraction(a, b, s)
            direct = interpolate_fraction(a, b, s + u * (1 - s))
            nested = interpolate_fraction(mid, b, u)
            geo_err = max(geo_err, np.abs(direct.matrix() - nested.matrix()).max())
    return end_err, rt_err, geo_err


# -- DCT ------------------------------------------------------------------------------------------------
def dct_suite(trials: int = 100, n: int = 7, N: int = 12, K: int = 6, seed: int = 0):
    """Vectorised trajectories vs a brute-force double loop, plus linearity."""
    rng = np.random.default_rng(seed)
    basis = fixed_basis(n, N, K)
    total = n * N
    t_all = np.arange(total)
    worst = lin = 0.0
    for _ in range(trials):
        psi = rng.normal(size=(K, 3))
        fast = eval_trajectory(psi, basis, t_all)
        brute = np.zeros((total, 3))
        for t in range(total):
            for k in range(1, K + 1):
                brute[t] += psi[k - 1] * np.cos(np.pi / (2 * total) * (2 * t + 1) * k)
        brute *= np.sqrt(2.0 / total)
        worst = max(worst, np.abs(fast - brute).max())
        psi2, a, b = rng.normal(size=(K, 3)), rng.normal(), rng.normal()
        combo = eval_trajectory(a * psi + b * psi2, basis, t_all)
        sep = a * fast + b * eval_trajectory(psi2, basis, t_all)
        lin = max(lin, np.abs(combo - sep).max() / max(1.0, np.abs(sep).max()))
    return worst, lin


# -- EVC --------------------------------------------------------------------------------------------------
def evc_example():
    stack = np.array([[10.0], [100.0], [100.0]])
    evc = rd.composite_priors(stack, None, evc=True).depth.value
    avg = rd.composite_priors(stack, None, evc=False).depth.value
    return abs(float(evc[0]) - 10.0) + abs(float(avg[0]) - 70.0)


# -- scripted fields ---------------------------------------------------------------------------------------
class ScriptedField:
    """Analytic, time-independent density / colour with zero motion and zero occlusion."""

    def __init__(self, K: int, sigma_scale: float = 3.0, total_time: int = 1):
        self.K = K
        self.sigma_scale = sigma_scale

    def __call__(self, x, d, t):
        x = ad.as_tensor(x)
        lead = x.shape[:-1]
        r = ad.sum_(ad.square(x), axis=-1)
        sigma = self.sigma_scale * (1.0 + ad.sin(3.0 * x[..., 0]) * ad.cos(2.0 * x[..., 1])) \
            * ad.exp(-0.1 * r)
        color = ad.sigmoid(ad.stack([x[..., 0], x[..., 1] - x[..., 2], x[..., 2]], -1))
        return FieldOutput(color, sigma, ad.Tensor(np.zeros(lead + (self.K, 3))),
                           ad.Tensor(np.zeros(lead + (2,))))

    def parameters(self):
        return []


def scripted_model(n: int = 3, N: int = 3, K: int = 2, sigma_scale: float = 3.0, seed: int = 0):
    rng = np.random.default_rng(seed)
    cam = Camera.centered(8, 6, 6.0, 1.0, 4.0)
    starts = [random_pose(rng, 0.2, 0.3) for _ in range(N)]
    ends = [s @ se3_exp(Twist.from_vector(rng.normal(scale=0.05, size=6))) for s in starts]
    field = ScriptedField(K, sigma_scale)
    return BlurModel(cam, n, starts, ends, field, None, fixed_basis(n, N, K))


def cross_time_degeneracy(seed: int = 0):
    """Zero flow + time-constant field: warped == direct render; loss_cross == residual."""
    model = scripted_model(sigma_scale=400.0, seed=seed)
    rng = np.random.default_rng(seed)
    rows, cols = rng.integers(0, 6, 10), rng.integers(0, 8, 10)
    depths = rd.sample_depths(model.camera.near, model.camera.far, 48, (1, 10))
    q = rd.exposure_queries(model, 2, rows, cols, depths, modes=("dynamic",))
    direct = rd.render_queries(q, "dynamic", model.camera.far)
    render_err = 0.0
    gt = rng.uniform(size=(10, 3))
    loss_err = 0.0
    for j in (1, 2, 3):
        w = rd.render_warped_queries(model, q, j)
        render_err = max(render_err, np.abs(w.per_timestamp.color.value
                                            - direct.per_timestamp.color.value).max())
        lc = loss_cross([w], gt).value
        plain = loss_rgb_dynamic(direct.blurry, gt).value
        loss_err = max(loss_err, abs(float(lc) - float(plain)))
    return render_err, loss_err


def exposure_oracle(seed: int = 0):
    """render_exposure vs independent per-timestamp single-ray renders averaged by hand."""
    model = scripted_model(seed=seed)
    rng = np.random.default_rng(seed + 1)
    rows, cols = rng.integers(0, 6, 5), rng.integers(0, 8, 5)
    M = 24
    depths = rd.sample_depths(model.camera.near, model.camera.far, M, (1, 5))
    out = rd.render_exposure(model, 2, rows, cols, "dynamic", depths).blurry.value
    err = 0.0
    from .geometry import pixel_ray
    for r in range(5):
        acc = np.zeros(3)
        for l in range(1, model.n + 1):
            pose = interpolate_pose(model.starts[1], model.ends[1], l, model.n)
            ray = pixel_ray(model.camera, pose, rows[r], cols[r])
            t = model.time_index(2, l)
            emit = lambda p, d: (lambda o: (o.color, o.sigma))(model.dynamic(p, d, t))  # noqa: E731
            acc += rd.render_ray(ray, rd.SampleSet(depths[0, r], model.camera.far), emit).color.value
        err = max(err, np.abs(acc / model.n - out[r]).max())
    return err


def line_kernel_oracle(u: int = 20):
    """Moving-square blur under a static camera vs an explicit layered line-kernel convolution."""
    from . import synthdata as sd

    script = line_kernel_script(u)
    i = 5
    times = script.substep_times(i)
    first = sd.raster_sharp(script, times[0])
    empty = sd.SceneScript.from_dict(dict(script.to_dict(), movers=[]))
    bg = sd.raster_sharp(empty, 0.0).image
    alpha = first.mask[..., None]
    fg = alpha * first.image
    S = len(times)
    conv_fg = np.zeros_like(fg)
    conv_a = np.zeros_like(alpha)
    step = u // (S - 1)
    for s in range(S):
        conv_fg[:, s * step:] += fg[:, :fg.shape[1] - s * step]
        conv_a[:, s * step:] += alpha[:, :alpha.shape[1] - s * step]
    oracle = conv_fg / S + bg * (1.0 - conv_a / S)
    blurry = sd.make_blurry(script, i)
    band = np.any(conv_a[..., 0] > 0, axis=1)
    return float(np.abs(blurry[band] - oracle[band]).max())


def line_kernel_script(u: int = 20):
    """Static camera; the square moves exactly ``u / (S-1)`` pixels between substeps.

    The square's edges sit half-way between pixel centres so coverage never
    changes by a partial hit.
    """
    from . import synthdata as sd

    base = sd.moving_square(shake=0.0, yaw=0.0, bob=0.0)
    f, z = base.focal, 2.5
    S = base.substeps
    step_px = u // (S - 1)
    dt = base.exposure / base.frames / (S - 1)
    speed = step_px * z / f / dt                       # world units per unit time
    cx = (base.width - 1) / 2.0
    # centre pixel 30 at t=0 of exposure 5, half-width 10.5 px
    t0 = base.substep_times(5)[0]
    x0 = (30.0 - cx) * z / f - speed * t0
    y0 = (0.0 + 0.5) * z / f                            # rows centred between pixel centres
    half = 10.5 * z / f
    base.movers[0].trajectory = sd.Trajectory([[x0, y0, z], [speed, 0.0, 0.0]])
    base.movers[0].size = (half, half)
    return base


# -- Adam -----------------------------------------------------------------------------------------------------
def adam_one_step():
    from .training import AdamState, adam_step
    p = ad.Parameter(np.array([0.0]), group="mlp", name="x")
    state = AdamState(lr={"mlp": 0.1})
    adam_step([p], [np.array([1.0])], state)
    return abs(abs(float(p.value[0])) - 0.1 / (1.0 + 1e-8))


def run_all(fast: bool = False) -> list:
    """Every check with its tolerance.  ``fast`` trims the sample counts."""
    scale = 10 if fast else 1
    results = []
    results.append(_timed("gradient fidelity (all groups)", 1e-3,
                          lambda: (lambda r: (r[0], str({k: f"{v:.1e}" for k, v in r[1].items()})))(
                              gradient_check())))
    results.append(_timed("two-sample transmittance", 1e-10, lambda: (two_sample_oracle(), "")))
    results.append(_timed("weights + final transmittance = 1", 1e-9,
                          lambda: (telescoping(10000 // scale), "")))
    se3 = se3_suite(1000 // scale)
    results.append(CheckResult("SE(3) endpoints", se3[0], 1e-9))
    results.append(CheckResult("SE(3) exp(log) round trip", se3[1], 1e-8))
    results.append(CheckResult("SE(3) geodesic consistency", se3[2], 1e-8))
    dct = dct_suite(100 // scale)
    results.append(CheckResult("DCT brute-force agreement", dct[0], 1e-12))
    results.append(CheckResult("DCT linearity", dct[1], 1e-13))
    results.append(_timed("EVC worked example", 0.0, lambda: (evc_example(), "")))
    cross = cross_time_degeneracy()
    results.append(CheckResult("cross-time render degeneracy", cross[0], 1e-10))
    results.append(CheckResult("cross-time loss degeneracy", cross[1], 1e-10))
    results.append(_timed("exposure render-then-average oracle", 1e-12,
                          lambda: (exposure_oracle(), "")))
    results.append(_timed("line-kernel blur oracle", 1e-6, lambda: (line_kernel_oracle(), "")))
    results.append(_timed("one-step Adam", 1e-12, lambda: (adam_one_step(), "")))
    return results
