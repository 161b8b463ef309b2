"""Region-weighted BEV maps and depthwise cross-correlation fusion."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .config import ConfigError
from .nn import Linear, Module
from .tensor import DimensionError, Tensor


class RegionAttention(Module):
    """Fully-connected projection of each region embedding to one scalar weight."""

    def __init__(self, dim: int, rng: np.random.Generator, squash: bool = False):
        self.proj = Linear(dim, 1, rng)
        self._squash = squash

    def forward(self, g: Tensor) -> Tensor:
        w = self.proj(g)
        return T.sigmoid(w) if self._squash else w


def region_attention(g: Tensor, proj: Linear, squash: bool = False) -> Tensor:
    w = proj(g)
    return T.sigmoid(w) if squash else w


def apply_region_weights(m: Tensor, w: Tensor, region: int) -> Tensor:
    """Scale every cell of region ``i`` (row-major R x R blocks) by ``w[i]``."""
    x, y, f = m.shape
    if x % region or y % region:
        raise ConfigError(f"map {(x, y)} not divisible by region size {region}")
    n = (x // region) * (y // region)
    if w.shape not in ((n, 1), (n,)):
        raise ConfigError(f"{n} regions but weights of shape {w.shape}")
    cols = T.unfold_blocks(m, (region, region))
    cols = cols * T.reshape(w, (n, 1))
    return T.fold_blocks(cols, (x, y), (region, region), f)


def depthwise_xcorr(m_s: Tensor, m_t: Tensor) -> Tensor:
    """Per-channel correlation with the template as a full-size kernel -> ``(1, 1, F)``."""
    if m_s.shape != m_t.shape:
        raise DimensionError(f"xcorr needs equal shapes, got {m_s.shape} and {m_t.shape}")
    return T.reshape(T.tsum(m_s * m_t, axis=(0, 1)), (1, 1, m_s.shape[-1]))


def fuse(m_s: Tensor, sim: Tensor) -> Tensor:
    if sim.shape[-1] != m_s.shape[-1]:
        raise DimensionError(f"similarity has {sim.shape[-1]} channels, map has {m_s.shape[-1]}")
    return m_s * T.reshape(sim, (1, 1, m_s.shape[-1]))
