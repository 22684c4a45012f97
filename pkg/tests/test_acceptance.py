"""One pass/fail line per acceptance criterion, at the stated tolerances.

Criteria 8-10 need long training runs.  They are read from the cache filled by
``tests/acceptance_runs.py`` when its key matches the current sources, and are
trained here otherwise (hours on one core).
"""
import os
import time

import numpy as np
import pytest

from blurf import checks

import acceptance_runs as runs

LINES = []


def report(number, passed, text):
    line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {text}"
    LINES.append(line)
    print(line)
    return passed


@pytest.fixture(scope="module", autouse=True)
def summary():
    yield
    print("\n" + "\n".join(LINES))


def test_01_gradient_fidelity():
    t0 = time.perf_counter()
    err, per_group = checks.gradient_check()
    secs = time.perf_counter() - t0
    groups = ", ".join(f"{k} {v:.1e}" for k, v in per_group.items())
    ok = err <= 1e-3 and secs < 30 and set(per_group) == {"mlp_dynamic", "mlp_static",
                                                          "camera", "dct_basis"}
    assert report(1, ok, f"max rel err {err:.2e} <= 1e-3 ({groups}); {secs:.1f}s < 30s")


def test_02_volume_rendering_oracle():
    two = checks.two_sample_oracle()
    tele = checks.telescoping(10000)
    ok = two <= 1e-10 and tele <= 1e-9
    assert report(2, ok, f"two-sample err {two:.1e} <= 1e-10; telescoping err {tele:.1e} <= 1e-9"
                         " over 10k rays")


def test_03_se3_suite():
    end, rt, geo = checks.se3_suite(1000)
    ok = end <= 1e-9 and rt <= 1e-8 and geo <= 1e-8
    assert report(3, ok, f"1000 pairs: endpoints {end:.1e} <= 1e-9, exp(log) {rt:.1e} <= 1e-8, "
                         f"geodesic {geo:.1e} <= 1e-8")


def test_04_dct_suite():
    brute, lin = checks.dct_suite(100)
    ok = brute <= 1e-12 and lin <= 1e-13
    assert report(4, ok, f"brute force {brute:.1e} <= 1e-12; linearity {lin:.1e} (machine precision)")


def test_05_evc_example():
    from blurf.renderer import composite_priors
    stack = np.array([[10.0], [100.0], [100.0]])
    evc = float(composite_priors(stack, None, evc=True).depth.value[0])
    avg = float(composite_priors(stack, None, evc=False).depth.value[0])
    assert report(5, evc == 10.0 and avg == 70.0, f"EVC {evc:g} (want 10), average {avg:g} (want 70)")


def test_06_cross_time_degeneracy():
    render, loss = checks.cross_time_degeneracy()
    ok = render <= 1e-10 and loss <= 1e-10
    assert report(6, ok, f"warped vs direct {render:.1e} <= 1e-10; loss_cross vs residual "
                         f"{loss:.1e} <= 1e-10")


def test_07_blur_formation():
    exposure = checks.exposure_oracle()
    kernel = checks.line_kernel_oracle()
    ok = exposure <= 1e-12 and kernel <= 1e-6
    assert report(7, ok, f"render-then-average {exposure:.1e} <= 1e-12; line kernel "
                         f"{kernel:.1e} <= 1e-6")


@pytest.fixture(scope="module")
def deblur():
    return runs.run(runs.deblur_spec())


def test_08_end_to_end_deblurring(deblur):
    gain = deblur["mean_psnr"] - deblur["baseline_psnr"]
    hours = deblur["train_seconds"] / 3600
    ok = gain >= 3.0 and hours <= 2.0
    assert report(8, ok, f"moving-square {deblur['steps']} steps: render {deblur['mean_psnr']:.2f} dB"
                         f" vs blurry {deblur['baseline_psnr']:.2f} dB, gain {gain:+.2f} >= +3 dB;"
                         f" training {hours:.2f} h <= 2 h")


def test_09_ablation_directions():
    psnr = {}
    for seed in runs.ABLATION_SEEDS:
        for arm in runs.ABLATIONS:
            psnr[arm, seed] = runs.run(runs.ablation_spec(arm, seed))["mean_psnr"]
    failures = []
    parts = []
    for arm in runs.ABLATIONS:
        if arm == "full":
            continue
        margins = [psnr["full", s] - psnr[arm, s] for s in runs.ABLATION_SEEDS]
        parts.append(f"full - {arm}: " + "/".join(f"{m:+.2f}" for m in margins))
        failures += [(arm, s) for s, m in zip(runs.ABLATION_SEEDS, margins) if m <= 0]
    full = "/".join(f"{psnr['full', s]:.2f}" for s in runs.ABLATION_SEEDS)
    # context only, not part of the pass condition: shifted-camera views
    novel = {arm: np.mean([runs.novel_view(runs.ablation_spec(arm, s))["mean_psnr"]
                           for s in runs.ABLATION_SEEDS]) for arm in runs.ABLATIONS}
    extra = ", ".join(f"{arm} {v:.2f}" for arm, v in novel.items())
    assert report(9, not failures, f"two-movers, seeds {runs.ABLATION_SEEDS}, full {full} dB; "
                                   + "; ".join(parts) + " dB (all must be > 0)"
                                   + f" [unscored novel-view means: {extra}]")


def test_10_determinism(deblur):
    repeat = runs.run(runs.deblur_spec("deblur-repeat"))
    a, b = runs.deblur_spec().directory(), runs.deblur_spec("deblur-repeat").directory()
    same = []
    for name in (deblur["checkpoint"], "eval.json", "eval.csv", "losses.csv"):
        with open(os.path.join(a, name), "rb") as fa, open(os.path.join(b, name), "rb") as fb:
            same.append(fa.read() == fb.read())
    ok = all(same) and repeat["checkpoint_sha256"] == deblur["checkpoint_sha256"]
    assert report(10, ok, f"two seeded runs: checkpoint, eval.json, eval.csv, losses.csv "
                          f"byte-identical = {same}")
