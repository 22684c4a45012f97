"""Container tying fields, learnable exposure poses and the DCT basis together."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .geometry import Camera, Pose, compose_tensor, se3_exp, se3_exp_tensor, se3_log, Twist
from .trajectory import DCTBasis, flatten_time


class BlurModel:
    """Everything needed to render an exposure.

    Each frame ``i`` keeps its fixed initial start pose plus two learnable
    twists: a correction of the start pose and the relative motion over the
    exposure.  The pose at exposure fraction ``s`` is

        P0_start[i] o exp(delta[i]) o exp(s * rel[i])

    which is the geodesic interpolation between the refined start pose and
    the refined end pose ``P0_start o exp(delta) o exp(rel)``.
    """

    def __init__(self, camera: Camera, n: int, starts: Sequence[Pose], ends: Sequence[Pose],
                 dynamic: Callable, static: Callable | None, basis: DCTBasis,
                 learn_poses: bool = True, freeze_first: bool = True):
        if n < 1:
            raise ValueError("n must be >= 1")
        if len(starts) != len(ends):
            raise ValueError("need one start and one end pose per frame")
        self.camera = camera
        self.n = int(n)
        self.N = len(starts)
        if basis.total != self.n * self.N:
            raise ValueError(f"basis covers {basis.total} timestamps, need {self.n * self.N}")
        self.starts = list(starts)
        self.ends = list(ends)
        self.dynamic = dynamic
        self.static = static
        self.basis = basis
        rel = np.stack([se3_log(s.inverse() @ e).vector() for s, e in zip(starts, ends)])
        self.pose_delta = ad.Parameter(np.zeros((self.N, 6)), group="camera", name="pose.delta")
        self.pose_rel = ad.Parameter(rel, group="camera", name="pose.rel")
        self.learn_poses = learn_poses
        self.freeze_first = freeze_first
        self._base = [(ad.Tensor(s.rotation), ad.Tensor(s.translation)) for s in starts]

    # -- time / pose -------------------------------------------------------------
    def time_index(self, i: int, l: int) -> int:
        """Flat timestamp of 1-based frame ``i`` and timestamp ``l``."""
        return flatten_time(i, l, self.n)

    def fraction(self, l: int) -> float:
        if not 1 <= l <= self.n:
            raise IndexError(f"timestamp {l} outside 1..{self.n}")
        return 0.0 if self.n == 1 else (l - 1) / (self.n - 1)

    def pose_tensors(self, i: int, s: float) -> tuple:
        """(R, t) tape tensors of frame ``i`` (1-based) at exposure fraction ``s``."""
        k = i - 1
        r0, t0 = self._base[k]
        delta = self.pose_delta[k]
        rel = self.pose_rel[k]
        if not self.learn_poses:
            delta, rel = delta.detach(), rel.detach()
        r1, t1 = se3_exp_tensor(delta)
        r, t = compose_tensor(r0, t0, r1, t1)
        if s != 0.0:
            r2, t2 = se3_exp_tensor(rel * s)
            r, t = compose_tensor(r, t, r2, t2)
        return r, t

    def pose(self, i: int, s: float) -> Pose:
        k = i - 1
        p = self.starts[k] @ se3_exp(Twist.from_vector(self.pose_delta.value[k]))
        if s != 0.0:
            p = p @ se3_exp(Twist.from_vector(self.pose_rel.value[k] * s))
        return p

    def refined_endpoints(self, i: int) -> tuple:
        return self.pose(i, 0.0), self.pose(i, 1.0)

    # -- parameters --------------------------------------------------------------
    def parameter_groups(self) -> dict:
        groups = {"mlp": list(self.dynamic.parameters())}
        if self.static is not None and hasattr(self.static, "parameters"):
            groups["mlp"] += list(self.static.parameters())
        groups["camera"] = [self.pose_delta, self.pose_rel] if self.learn_poses else []
        groups["dct_basis"] = [self.basis.table] if self.basis.learnable else []
        return groups

    def parameters(self) -> list:
        return [p for ps in self.parameter_groups().values() for p in ps]

    def mask_frozen_grads(self) -> None:
        """Pin the gauge: frame 1's start pose never moves."""
        if self.freeze_first and self.pose_delta.grad is not None:
            self.pose_delta.grad[0] = 0.0

    def state_dict(self) -> dict:
        out = {}
        for p in self.parameters():
            out[p.name] = p.value
        out.setdefault("pose.delta", self.pose_delta.value)
        out.setdefault("pose.rel", self.pose_rel.value)
        if not self.basis.learnable:
            out["dct_basis"] = self.basis.values()
        return out

    def load_state_dict(self, state: dict) -> None:
        params = {p.name: p for p in self.parameters()}
        params.setdefault("pose.delta", self.pose_delta)
        params.setdefault("pose.rel", self.pose_rel)
        for name, value in state.items():
            if name == "dct_basis" and not self.basis.learnable:
                self.basis.table = np.array(value)
                continue
            if name not in params:
                raise KeyError(f"unknown parameter {name!r}")
            if params[name].value.shape != np.shape(value):
                raise ValueError(f"shape mismatch for {name}")
            params[name].value = np.array(value, dtype=params[name].value.dtype)
