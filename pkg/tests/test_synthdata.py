import json
import os

import numpy as np
import pytest

from blurf import synthdata as sd
from blurf.checks import line_kernel_oracle
from blurf.geometry import Pose


def tiny(**kw):
    base = dict(name="tiny", width=9, height=7, focal=8.0, frames=3, n=3, substeps=5,
                wall_texture=sd.Texture((0.4, 0.5, 0.6), [[1.0, 0.5, 0.2, [0.2, 0.1, -0.1]]]))
    base.update(kw)
    return sd.SceneScript(**base)


def box(center, half=0.3, kind="box", velocity=(0.0, 0.0, 0.0)):
    traj = sd.Trajectory([list(center), list(velocity)])
    size = (half,) if kind == "sphere" else (half, half, half)
    return sd.Mover(kind, size, traj, sd.Texture((0.9, 0.1, 0.1)))


def translating_camera(dx):
    return [sd._pose_key(0.0, 0.0), sd._pose_key(1.0, dx)]


def test_empty_scene_is_wall():
    s = tiny()
    r = sd.raster_sharp(s, 0.3)
    assert np.all(r.mask == 0) and np.all(r.owner == -1)
    np.testing.assert_allclose(r.image, s.wall_texture(r.points[..., 0], r.points[..., 1]))
    np.testing.assert_allclose(r.points[..., 2], 4.0)


@pytest.mark.parametrize("kind,expected", [("box", 1.7), ("sphere", 1.7), ("quad", 2.0)])
def test_primitive_on_axis_depth(kind, expected):
    r = sd.raster_sharp(tiny(movers=[box((0.0, 0.0, 2.0), kind=kind)]), 0.5)
    assert r.depth[3, 4] == pytest.approx(expected, abs=1e-12)
    assert r.mask[3, 4] == 1 and r.mask[0, 0] == 0


def test_mover_outside_frustum_changes_nothing():
    a = sd.raster_sharp(tiny(), 0.5)
    b = sd.raster_sharp(tiny(movers=[box((40.0, 0.0, 2.0))]), 0.5)
    np.testing.assert_array_equal(a.image, b.image)
    np.testing.assert_array_equal(a.depth, b.depth)


def test_static_scene_blur_is_sharp():
    s = tiny(movers=[box((0.0, 0.0, 2.0))])
    for i in (1, 3):
        np.testing.assert_allclose(sd.make_blurry(s, i), sd.sharp_frame(s, i).image, atol=1e-15)


def test_single_substep_blur_is_raster():
    s = tiny(movers=[box((-0.5, 0.0, 2.0), velocity=(3.0, 0.0, 0.0))],
             camera_keys=translating_camera(0.5))
    times = s.substep_times(2, 1)
    np.testing.assert_array_equal(sd.make_blurry(s, 2, 1), sd.raster_sharp(s, times[0]).image)


def test_line_kernel_blur():
    assert line_kernel_oracle(20) <= 1e-6


def test_static_flow_is_zero():
    s = tiny(movers=[box((0.0, 0.0, 2.0))])
    np.testing.assert_allclose(sd.gt_flow(s, 1, 2), 0.0, atol=1e-12)


def test_camera_translation_gives_uniform_background_flow():
    dx = 0.6
    s = tiny(camera_keys=translating_camera(dx))
    ta, tb = s.substep_times(1)[0], s.substep_times(2)[0]
    flow = sd.gt_flow(s, 1, 1)
    expected = -s.focal * dx * (tb - ta) / s.wall_depth
    np.testing.assert_allclose(flow[..., 0], expected, atol=1e-10)
    np.testing.assert_allclose(flow[..., 1], 0.0, atol=1e-10)


def test_mover_flow_differs_from_background():
    s = tiny(movers=[box((0.0, 0.0, 2.0), velocity=(1.5, 0.0, 0.0), kind="quad")])
    r = sd.raster_sharp(s, s.substep_times(1, 3)[1])
    flow = sd.gt_flow(s, 1, 2)
    fg = flow[r.mask > 0]
    bg = flow[r.mask == 0]
    assert np.all(fg[:, 0] > 0.1) and np.allclose(bg, 0.0, atol=1e-12)
    with pytest.raises(IndexError):
        sd.gt_flow(s, 3, 1)


def test_blur_converges_with_substeps():
    for script in (sd.moving_square(width=48, height=27, focal=40.0),
                   sd.two_movers(width=48, height=27, focal=40.0)):
        ref = sd.make_blurry(script, 4, 21)
        errs = [np.abs(sd.make_blurry(script, 4, S) - ref).max() for S in (3, 5, 11)]
        assert errs[0] >= errs[1] >= errs[2] > 0, errs


def test_min_depth_prior_on_mover_edges():
    s = sd.moving_square(shake=0.0, yaw=0.0, bob=0.0, width=48, height=27, focal=40.0,
                         frames=4, substeps=7, n=7)
    ds = sd.generate(s)
    cam = s.camera
    rows, cols = np.meshgrid(np.arange(cam.height), np.arange(cam.width), indexing="ij")
    dirs = cam.local_directions(rows.ravel(), cols.ravel()).reshape(cam.height, cam.width, 3)
    dirs = dirs / np.linalg.norm(dirs, axis=-1, keepdims=True)
    mover_depth = 2.5 / dirs[..., 2]
    for k in range(ds.N):
        sharp_mask = sd.sharp_frame(s, k + 1).mask
        covered = ds.mask[k] > 0
        edge = covered & (sharp_mask == 0)          # covered only at some substeps
        assert edge.any()
        np.testing.assert_allclose(ds.depth[k][covered], mover_depth[covered], rtol=1e-6)
        assert np.all(ds.depth[k][~covered] > 3.9)


def test_dilated_priors_fatten_foreground():
    base = sd.moving_square(width=48, height=27, focal=40.0, frames=3, substeps=7)
    fat = sd.moving_square(width=48, height=27, focal=40.0, frames=3, substeps=7,
                           prior_dilation=2)
    a, b = sd.generate(base), sd.generate(fat)
    assert np.all(b.depth <= a.depth)
    assert (b.depth < a.depth - 0.5).sum() > 0
    np.testing.assert_array_equal(a.blurry, b.blurry)


def test_script_validation_and_dict_roundtrip():
    with pytest.raises(ValueError):
        tiny(substeps=2)
    with pytest.raises(ValueError):
        tiny(exposure=0.0)
    s = sd.two_movers()
    back = sd.SceneScript.from_dict(json.loads(json.dumps(s.to_dict())))
    assert json.dumps(back.to_dict()) == json.dumps(json.loads(json.dumps(s.to_dict())))
    np.testing.assert_array_equal(sd.raster_sharp(back, 0.3).image, sd.raster_sharp(s, 0.3).image)
    with pytest.raises(ValueError):
        sd.raster_sharp(tiny(movers=[box((0, 0, 2), kind="cone")]), 0.0)


def test_exposure_timing():
    s = sd.moving_square()
    a, b = s.exposure_interval(1)
    assert (a + b) / 2 == pytest.approx(0.5 / 12)
    assert b - a == pytest.approx(0.5 / 12)
    t = s.substep_times(1)
    assert len(t) == 21 and t[0] == a and t[-1] == pytest.approx(b)


def test_manifest_roundtrip(tmp_path):
    s = sd.moving_square(width=24, height=16, focal=20.0, frames=3, n=3, substeps=3)
    ds = sd.generate(s)
    path = sd.write_dataset(ds, str(tmp_path))
    with open(path) as fh:
        manifest = json.load(fh)
    assert manifest["schema_version"] == sd.SCHEMA_VERSION
    for f in manifest["frames"]:
        for key in ("blurry", "sharp", "depth", "flow", "mask"):
            assert os.path.exists(tmp_path / f[key])
    back = sd.read_dataset(str(tmp_path))
    assert back.N == 3 and back.n == 3 and back.camera == ds.camera
    for p, q in zip(back.starts + back.ends, ds.starts + ds.ends):
        assert isinstance(p, Pose) and p.allclose(q, 0)
    np.testing.assert_array_equal(back.blurry, ds.blurry)
    np.testing.assert_array_equal(back.sharp, ds.sharp)
    np.testing.assert_array_equal(back.depth, ds.depth)
    np.testing.assert_array_equal(back.flow, ds.flow)
    np.testing.assert_array_equal(back.flow_valid, ds.flow_valid)
    np.testing.assert_array_equal(back.mask, ds.mask)
    assert back.intervals == ds.intervals
    assert back.script.to_dict() == json.loads(json.dumps(ds.script.to_dict()))
    assert not back.flow_valid[-1].any() and back.flow_valid[0].all()


def test_bad_schema_rejected(tmp_path):
    (tmp_path / "manifest.json").write_text(json.dumps({"schema_version": 99}))
    with pytest.raises(ValueError):
        sd.read_dataset(str(tmp_path))


def test_generation_is_deterministic():
    s = sd.two_movers(width=24, height=16, focal=20.0, frames=2, substeps=7)
    a, b = sd.generate(s), sd.generate(sd.two_movers(width=24, height=16, focal=20.0, frames=2,
                                                       substeps=7))
    assert a.blurry.tobytes() == b.blurry.tobytes()
