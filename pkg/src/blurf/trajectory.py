"""DCT motion trajectories over the flattened exposure timeline.

A sequence of ``N`` exposures with ``n`` timestamps each gives ``nN`` global
timestamps ``t = (i-1)*n + (l-1)``.  A point carries ``K`` coefficient
3-vectors and its position offset at timestamp ``t`` is

    T(t) = sqrt(2/nN) * sum_{k=1..K} psi_k * basis[t, k]

with ``basis[t, k] = cos(pi/(2 nN) * (2t+1) * k)`` unless the basis is learnt.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad


def flatten_time(i: int, l: int, n: int) -> int:
    """1-based frame ``i`` and timestamp ``l`` -> flat index in [0, nN)."""
    if l < 1 or l > n or i < 1:
        raise IndexError(f"invalid time index (i={i}, l={l}, n={n})")
    return (i - 1) * n + (l - 1)


def unflatten_time(t: int, n: int) -> tuple:
    return t // n + 1, t % n + 1


def dct_table(total: int, K: int) -> np.ndarray:
    t = np.arange(total)[:, None]
    k = np.arange(1, K + 1)[None, :]
    return np.cos(np.pi / (2.0 * total) * (2 * t + 1) * k)


@dataclass
class DCTBasis:
    table: object           # (nN, K) ndarray, or a Parameter when learnable
    learnable: bool = False

    @property
    def total(self) -> int:
        return int(ad.value_of(self.table).shape[0])

    @property
    def K(self) -> int:
        return int(ad.value_of(self.table).shape[1])

    @property
    def scale(self) -> float:
        return float(np.sqrt(2.0 / self.total))

    def values(self) -> np.ndarray:
        return ad.value_of(self.table)

    def rows(self, t):
        """Basis rows at integer timestamps ``t`` (any shape) -> (..., K)."""
        t = np.asarray(t)
        if t.dtype.kind not in "iu":
            if not np.all(t == np.round(t)):
                raise IndexError("timestamps must be integers")
            t = t.astype(np.int64)
        if np.any(t < 0) or np.any(t >= self.total):
            raise IndexError(f"timestamp outside [0, {self.total})")
        if self.learnable:
            return ad.getitem(self.table, t)
        return self.values()[t]


def fixed_basis(n: int, N: int, K: int) -> DCTBasis:
    return DCTBasis(dct_table(n * N, K), learnable=False)


def init_learnable_basis(n: int, N: int, K: int) -> DCTBasis:
    if min(n, N, K) < 1:
        raise ValueError("n, N, K must be >= 1")
    return DCTBasis(ad.Parameter(dct_table(n * N, K), group="dct_basis", name="dct_basis"),
                    learnable=True)


def eval_trajectory(psi, basis: DCTBasis, t):
    """Trajectory positions; ``psi`` is (..., K, 3), ``t`` broadcasts with ``...``.

    Works on plain arrays (returns ndarray) and on tape tensors.
    """
    K = ad.value_of(psi).shape[-2]
    if K != basis.K:
        raise ValueError(f"psi has {K} coefficients, basis has {basis.K}")
    rows = basis.rows(t)                          # (..., K)
    if isinstance(psi, ad.Tensor) or isinstance(rows, ad.Tensor):
        weighted = ad.mul(psi, ad.expand_dims(ad.as_tensor(rows), -1))
        return ad.sum_(weighted, axis=-2) * basis.scale
    return basis.scale * np.sum(np.asarray(psi) * np.asarray(rows)[..., None], axis=-2)


def scene_flow(psi, basis: DCTBasis, t_from, t_to):
    """Displacement T(t_to) - T(t_from) of the trajectory described by ``psi``."""
    return eval_trajectory(psi, basis, t_to) - eval_trajectory(psi, basis, t_from)


def warp_point(x, psi, basis: DCTBasis, t_from, t_to):
    return x + scene_flow(psi, basis, t_from, t_to)
