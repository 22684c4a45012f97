"""Positional encoding and the dynamic / static radiance-field MLPs."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad


def encode(x, L: int, include_input: bool = True):
    """Frequency encoding ``[x, sin(2^0 pi x), cos(2^0 pi x), ..., cos(2^(L-1) pi x)]``.

    ``x`` has shape (..., D); the result has shape (..., D * (2L + include_input)).
    Accepts ndarrays or tape tensors.
    """
    if L < 0:
        raise ValueError("L must be >= 0")
    x = ad.as_tensor(x)
    parts = [x] if include_input else []
    if L > 0:
        freqs = (2.0 ** np.arange(L) * np.pi).astype(x.dtype)
        scaled = ad.mul(ad.expand_dims(x, -2), freqs[:, None])        # (..., L, D)
        sc = ad.stack([ad.sin(scaled), ad.cos(scaled)], axis=-2)       # (..., L, 2, D)
        parts.append(ad.reshape(sc, x.shape[:-1] + (2 * L * x.shape[-1],)))
    if not parts:
        return ad.Tensor(np.zeros(x.shape[:-1] + (0,), dtype=x.dtype))
    return parts[0] if len(parts) == 1 else ad.concat(parts, axis=-1)


def encoded_dim(dim: int, L: int, include_input: bool = True) -> int:
    return dim * (2 * L + int(include_input))


@dataclass
class MLPConfig:
    width: int = 128
    depth: int = 4
    skip: int = 2            # trunk layer index that re-reads the encoded input
    pos_freqs: int = 10
    dir_freqs: int = 4
    time_freqs: int = 6
    K: int = 6
    scene_center: tuple = (0.0, 0.0, 0.0)
    scene_scale: float = 1.0
    dtype: str = "float64"

    def __post_init__(self):
        if self.width < 1 or self.depth < 1:
            raise ValueError("width and depth must be >= 1")
        self.scene_center = tuple(float(c) for c in self.scene_center)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class FieldOutput:
    color: object        # (..., 3) in [0, 1]
    sigma: object        # (...,)  >= 0
    psi: object          # (..., K, 3)
    w: object            # (..., 2): (w_fw, w_bw) in [0, 1]

    @property
    def w_fw(self):
        return self.w[..., 0]

    @property
    def w_bw(self):
        return self.w[..., 1]


@dataclass
class StaticOutput:
    color: object
    sigma: object
    v: object            # blend weight, (...,) in [0, 1]


class _Linear:
    def __init__(self, fan_in: int, fan_out: int, rng, name: str, dtype, gain: float = 1.0,
                 bias: float = 0.0):
        bound = gain * np.sqrt(6.0 / fan_in)
        self.W = ad.Parameter(rng.uniform(-bound, bound, (fan_in, fan_out)).astype(dtype),
                              group="mlp", name=name + ".W")
        self.b = ad.Parameter(np.full(fan_out, bias, dtype=dtype), group="mlp", name=name + ".b")

    def __call__(self, h):
        return ad.matmul(h, self.W) + self.b

    def parameters(self) -> list:
        return [self.W, self.b]


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(ad.value_of(a))):
            raise ValueError("non-finite field input")


class _Trunk:
    """ReLU trunk with one skip connection re-injecting the encoded input."""

    def __init__(self, in_dim: int, cfg: MLPConfig, rng, prefix: str, dtype):
        self.skip = cfg.skip
        self.layers = []
        dim = in_dim
        for k in range(cfg.depth):
            if k == self.skip and k > 0:
                dim += in_dim
            self.layers.append(_Linear(dim, cfg.width, rng, f"{prefix}.trunk{k}", dtype))
            dim = cfg.width

    def __call__(self, inp):
        h = inp
        for k, layer in enumerate(self.layers):
            if k == self.skip and k > 0:
                h = ad.concat([h, inp], axis=-1)
            h = ad.relu(layer(h))
        return h

    def parameters(self) -> list:
        return [p for layer in self.layers for p in layer.parameters()]


class _Field:
    cfg: MLPConfig

    def _normalise(self, x):
        c = np.asarray(self.cfg.scene_center, dtype=self.dtype)
        return (ad.cast(x, self.dtype) - c) * (1.0 / float(self.cfg.scene_scale))

    @property
    def dtype(self):
        return np.dtype(self.cfg.dtype)

    def _flatten(self, t):
        return ad.reshape(t, (-1, t.shape[-1]))

    def _color(self, feat, d, lead_shape):
        """View-dependent colour head; ``d`` may have fewer leading elements than ``feat``."""
        d = ad.cast(d, self.dtype)
        d_term = self.color_dir(encode(d, self.cfg.dir_freqs))                  # (d..., W/2)
        f_term = ad.reshape(self.color_feat(feat), lead_shape + (self.half,))
        hidden = ad.relu(f_term + d_term)
        return ad.sigmoid(self.color_out(hidden))

    def parameters(self) -> list:
        return [p for part in self._parts() for p in part.parameters()]

    def named_parameters(self) -> dict:
        return {p.name: p for p in self.parameters()}


class DynamicField(_Field):
    """(x, d, t) -> colour, density, DCT coefficients, disocclusion weights."""

    def __init__(self, cfg: MLPConfig, total_time: int, seed: int = 0):
        self.cfg = cfg
        self.total_time = int(total_time)
        rng = np.random.default_rng(seed)
        dt = self.dtype
        in_dim = encoded_dim(3, cfg.pos_freqs) + encoded_dim(1, cfg.time_freqs)
        self.half = max(cfg.width // 2, 1)
        self.trunk = _Trunk(in_dim, cfg, rng, "dy", dt)
        self.sigma_head = _Linear(cfg.width, 1, rng, "dy.sigma", dt, gain=0.5)
        self.psi_head = _Linear(cfg.width, 3 * cfg.K, rng, "dy.psi", dt, gain=0.01)
        self.w_head = _Linear(cfg.width, 2, rng, "dy.occ", dt, gain=0.1, bias=-2.0)
        self.color_feat = _Linear(cfg.width, self.half, rng, "dy.feat", dt)
        self.color_dir = _Linear(encoded_dim(3, cfg.dir_freqs), self.half, rng, "dy.dir", dt)
        self.color_out = _Linear(self.half, 3, rng, "dy.rgb", dt, gain=0.5)

    def _parts(self):
        return [self.trunk, self.sigma_head, self.psi_head, self.w_head,
                self.color_feat, self.color_dir, self.color_out]

    def __call__(self, x, d, t) -> FieldOutput:
        """``x``: (..., 3); ``d``: broadcastable to x; ``t``: flat timestamps broadcastable to x[..., 0]."""
        _check_finite(x, d, t)
        x = ad.as_tensor(x)
        lead = x.shape[:-1]
        t_norm = np.broadcast_to(np.asarray(t, dtype=self.dtype) / self.total_time, lead)[..., None]
        inp = ad.concat([encode(self._normalise(x), self.cfg.pos_freqs),
                         encode(t_norm, self.cfg.time_freqs)], axis=-1)
        h = self.trunk(self._flatten(inp))
        sigma = ad.softplus(ad.reshape(self.sigma_head(h), lead) - 1.0)
        psi = ad.reshape(self.psi_head(h), lead + (self.cfg.K, 3))
        w = ad.sigmoid(ad.reshape(self.w_head(h), lead + (2,)))
        color = self._color(h, d, lead)
        return FieldOutput(color, sigma, psi, w)


class StaticField(_Field):
    """(x, d) -> colour, density and blend weight ``v``."""

    def __init__(self, cfg: MLPConfig, seed: int = 1):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        dt = self.dtype
        in_dim = encoded_dim(3, cfg.pos_freqs)
        self.half = max(cfg.width // 2, 1)
        self.trunk = _Trunk(in_dim, cfg, rng, "st", dt)
        self.sigma_head = _Linear(cfg.width, 2, rng, "st.sigma_v", dt, gain=0.5)
        self.color_feat = _Linear(cfg.width, self.half, rng, "st.feat", dt)
        self.color_dir = _Linear(encoded_dim(3, cfg.dir_freqs), self.half, rng, "st.dir", dt)
        self.color_out = _Linear(self.half, 3, rng, "st.rgb", dt, gain=0.5)

    def _parts(self):
        return [self.trunk, self.sigma_head, self.color_feat, self.color_dir, self.color_out]

    def __call__(self, x, d) -> StaticOutput:
        _check_finite(x, d)
        x = ad.as_tensor(x)
        lead = x.shape[:-1]
        h = self.trunk(self._flatten(encode(self._normalise(x), self.cfg.pos_freqs)))
        raw = ad.reshape(self.sigma_head(h), lead + (2,))
        sigma = ad.softplus(raw[..., 0] - 1.0)
        v = ad.sigmoid(raw[..., 1])
        color = self._color(h, d, lead)
        return StaticOutput(color, sigma, v)


def blend(dynamic: FieldOutput, static: StaticOutput) -> tuple:
    """Mix dynamic and static emissions with the static blend weight ``v``."""
    v = static.v
    one_minus = 1.0 - ad.as_tensor(v)
    color = ad.as_tensor(dynamic.color) * ad.expand_dims(one_minus, -1) \
        + ad.as_tensor(static.color) * ad.expand_dims(ad.as_tensor(v), -1)
    sigma = ad.as_tensor(dynamic.sigma) * one_minus + ad.as_tensor(static.sigma) * v
    return color, sigma
