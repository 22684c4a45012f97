"""Mid-exposure sharp renders scored against ground-truth sharp frames."""
from __future__ import annotations

import os

import numpy as np

from .imageio import to_uint8, write_png
from .metrics import EvalReport
from .renderer import render_image


def evaluate(model, dataset, out: str | None = None, samples: int = 64,
             frames=None) -> EvalReport:
    """Render each frame once at the exposure midpoint and compare with its sharp frame.

    Renders are quantised to 8 bits before scoring so the numbers match the
    PNGs written to ``out``.
    """
    report = EvalReport(label="render")
    frames = range(1, model.N + 1) if frames is None else frames
    for i in frames:
        img, _ = render_image(model, i, 0.5, "combined", samples)
        img = to_uint8(img) / 255.0
        name = f"render_{i:03d}.png"
        if out is not None:
            os.makedirs(out, exist_ok=True)
            write_png(os.path.join(out, name), img)
        report.add(i, img, dataset.sharp[i - 1], name, f"sharp_{i:03d}.png")
    return report


def blurry_baseline(dataset) -> EvalReport:
    """Score the blurry inputs themselves against the sharp frames."""
    report = EvalReport(label="blurry-input")
    for k in range(len(dataset.starts)):
        report.add(k + 1, dataset.blurry[k], dataset.sharp[k], f"blurry_{k + 1:03d}.png",
                   f"sharp_{k + 1:03d}.png")
    return report


def offset_view(model, i: int, shift=(0.1, 0.0, 0.0), samples: int = 64) -> np.ndarray:
    """Render frame ``i``'s midpoint time from a laterally shifted camera (novel view)."""
    from .geometry import Pose

    base = model.pose(i, 0.5)
    moved = Pose(base.rotation, base.translation + base.rotation @ np.asarray(shift, float))

    class _Shifted:
        def __getattr__(self, name):
            return getattr(model, name)

        def pose_tensors(self, frame, s):
            from . import autodiff as ad
            return ad.Tensor(moved.rotation), ad.Tensor(moved.translation)

    img, _ = render_image(_Shifted(), i, 0.5, "combined", samples)
    return img
