"""Two-level region/point transformer encoder and the cross-attention decoder."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .config import ConfigError, RunConfig
from .nn import FeedForward, LayerNorm, Linear, Module
from .tensor import DimensionError, Parameter, Tensor


def _swap_last(x: Tensor) -> Tensor:
    perm = list(range(x.ndim))
    perm[-1], perm[-2] = perm[-2], perm[-1]
    return T.transpose(x, perm)


def attention(q: Tensor, k: Tensor, v: Tensor, trace: list | None = None) -> Tensor:
    """Scaled dot-product attention over the last two axes (batched)."""
    if k.shape[-2] != v.shape[-2] or q.shape[-1] != k.shape[-1]:
        raise DimensionError(f"attention shapes q={q.shape} k={k.shape} v={v.shape}")
    scores = T.matmul(q, _swap_last(k)) * (1.0 / math.sqrt(k.shape[-1]))
    weights = T.softmax(scores, axis=-1)
    if trace is not None:
        trace.append(weights.data.copy())
    return T.matmul(weights, v)


def _split_heads(x: Tensor, heads: int) -> Tensor:
    *lead, n, d = x.shape
    x = T.reshape(x, tuple(lead) + (n, heads, d // heads))
    perm = list(range(len(lead))) + [len(lead) + 1, len(lead), len(lead) + 2]
    return T.transpose(x, perm)


def _merge_heads(x: Tensor) -> Tensor:
    *lead, h, n, d = x.shape
    perm = list(range(len(lead))) + [len(lead) + 1, len(lead), len(lead) + 2]
    return T.reshape(T.transpose(x, perm), tuple(lead) + (n, h * d))


def mha(q: Tensor, k: Tensor, v: Tensor, wq: Tensor, wk: Tensor, wv: Tensor, wo: Tensor,
        heads: int, trace: list | None = None) -> Tensor:
    """Multi-head attention; head i uses column block i of each projection."""
    dim = wq.shape[1]
    if dim % heads:
        raise ConfigError(f"model dim {dim} not divisible by {heads} heads")
    qh = _split_heads(T.matmul(q, wq), heads)
    kh = _split_heads(T.matmul(k, wk), heads)
    vh = _split_heads(T.matmul(v, wv), heads)
    return T.matmul(_merge_heads(attention(qh, kh, vh, trace)), wo)


class MultiHeadAttention(Module):
    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        if dim % heads:
            raise ConfigError(f"dim {dim} not divisible by {heads} heads")
        bound = math.sqrt(6.0 / dim)
        self.wq = Parameter(rng.uniform(-bound, bound, (dim, dim)))
        self.wk = Parameter(rng.uniform(-bound, bound, (dim, dim)))
        self.wv = Parameter(rng.uniform(-bound, bound, (dim, dim)))
        self.wo = Parameter(rng.uniform(-bound, bound, (dim, dim)))
        self.heads = heads

    def forward(self, q: Tensor, k: Tensor, v: Tensor, trace: list | None = None) -> Tensor:
        return mha(q, k, v, self.wq, self.wk, self.wv, self.wo, self.heads, trace)


# -- region split ---------------------------------------------------------------

def unfold_regions(m: Tensor, region: int, point_grid: int) -> Tensor:
    """``(X, Y, F)`` -> ``(N, point_grid**2, b*b*F)`` with ``b = region // point_grid``.

    Regions are ordered row-major over the region grid, point tokens row-major
    inside each region.
    """
    x, y, f = m.shape
    if x % region or y % region:
        raise ConfigError(f"BEV {(x, y)} not divisible by region size {region}")
    if region % point_grid:
        raise ConfigError(f"region size {region} not divisible by point grid {point_grid}")
    b = region // point_grid
    t = T.reshape(m, (x // region, point_grid, b, y // region, point_grid, b, f))
    t = T.transpose(t, (0, 3, 1, 4, 2, 5, 6))
    return T.reshape(t, ((x // region) * (y // region), point_grid * point_grid, b * b * f))


def fold_regions(tokens: Tensor, shape: tuple, region: int, point_grid: int) -> Tensor:
    """Inverse of :func:`unfold_regions` for a map of ``shape = (X, Y, F)``."""
    x, y, f = shape
    b = region // point_grid
    t = T.reshape(tokens, (x // region, y // region, point_grid, point_grid, b, b, f))
    t = T.transpose(t, (0, 2, 4, 1, 3, 5, 6))
    return T.reshape(t, (x, y, f))


@dataclass
class RegionSet:
    point_tokens: Tensor
    region_tokens: Tensor | None
    region_size: int
    point_grid: int

    @property
    def n_regions(self) -> int:
        return self.point_tokens.shape[0]

    @property
    def n_points(self) -> int:
        return self.point_tokens.shape[1]


def split_regions(m: Tensor, region: int, point_grid: int, proj: Linear | None = None) -> RegionSet:
    tokens = unfold_regions(m, region, point_grid)
    if proj is not None:
        tokens = proj(tokens)
    return RegionSet(tokens, None, region, point_grid)


# -- encoder --------------------------------------------------------------------

class EncoderLayer(Module):
    def __init__(self, n_points: int, point_dim: int, region_dim: int, heads: int,
                 ffn_ratio: int, rng: np.random.Generator):
        self.point_norm1 = LayerNorm(point_dim)
        self.point_attn = MultiHeadAttention(point_dim, heads, rng)
        self.point_norm2 = LayerNorm(point_dim)
        self.point_ffn = FeedForward(point_dim, ffn_ratio * point_dim, rng)
        self.phi = Linear(n_points * point_dim, region_dim, rng)
        self.region_norm1 = LayerNorm(region_dim)
        self.region_attn = MultiHeadAttention(region_dim, heads, rng)
        self.region_norm2 = LayerNorm(region_dim)
        self.region_ffn = FeedForward(region_dim, ffn_ratio * region_dim, rng)

    def forward(self, u: Tensor, g: Tensor, e_point: Tensor, e_region: Tensor,
                trace: dict | None = None) -> tuple[Tensor, Tensor]:
        pt = trace.setdefault("point_attention", []) if trace is not None else None
        rt = trace.setdefault("region_attention", []) if trace is not None else None
        # point level, batched over regions
        a = self.point_norm1(u + e_point)
        u = u + self.point_attn(a, a, a, pt)
        u = u + self.point_ffn(self.point_norm2(u))
        # region memories absorb their region tensors; the class token has none
        n = u.shape[0]
        update = self.phi(T.reshape(u, (n, -1)))
        g = T.concat([g[0:1], g[1:] + update], axis=0)
        # region level
        a = self.region_norm1(g + e_region)
        g = g + self.region_attn(a, a, a, rt)
        g = g + self.region_ffn(self.region_norm2(g))
        return u, g


class Encoder(Module):
    """Region/point encoder producing ``(N + 1, D)`` region embeddings (row 0 = class token)."""

    def __init__(self, config: RunConfig, rng: np.random.Generator):
        r, rp = config.region_size, config.point_grid
        b = r // rp
        n = config.n_regions
        n_points = rp * rp
        self.region_size = r
        self.point_grid = rp
        self.point_proj = Linear(b * b * config.feature_dim, config.point_dim, rng)
        self.memories = Parameter(rng.normal(0.0, 0.02, (n + 1, config.region_dim)))
        self.region_pos = Parameter(rng.normal(0.0, 0.02, (n + 1, config.region_dim)))
        self.point_pos = Parameter(rng.normal(0.0, 0.02, (n_points, config.point_dim)))
        self.layers = [EncoderLayer(n_points, config.point_dim, config.region_dim, config.heads,
                                    config.ffn_ratio, rng) for _ in range(config.layers)]

    def encode(self, m: Tensor, trace: dict | None = None) -> Tensor:
        regions = split_regions(m, self.region_size, self.point_grid, self.point_proj)
        if regions.n_regions + 1 != self.memories.shape[0]:
            raise ConfigError(f"map yields {regions.n_regions} regions, encoder built for "
                              f"{self.memories.shape[0] - 1}")
        u, g = regions.point_tokens, self.memories
        for layer in self.layers:
            u, g = layer(u, g, self.point_pos, self.region_pos, trace)
        return g

    forward = encode


# -- decoder --------------------------------------------------------------------

class Decoder(Module):
    """Self-attention over search regions, then cross-attention into template regions."""

    def __init__(self, dim: int, heads: int, ffn_ratio: int, rng: np.random.Generator):
        self.norm1 = LayerNorm(dim)
        self.self_attn = MultiHeadAttention(dim, heads, rng)
        self.norm2 = LayerNorm(dim)
        self.memory_norm = LayerNorm(dim)
        self.cross_attn = MultiHeadAttention(dim, heads, rng)
        self.norm3 = LayerNorm(dim)
        self.ffn = FeedForward(dim, ffn_ratio * dim, rng)

    def decode(self, g_s: Tensor, g_t: Tensor, trace: dict | None = None) -> Tensor:
        if g_s.shape[-1] != g_t.shape[-1] or g_s.shape[-1] != self.norm1.gain.shape[0]:
            raise DimensionError(f"decoder dims: search {g_s.shape}, template {g_t.shape}")
        ct = trace.setdefault("cross_attention", []) if trace is not None else None
        a = self.norm1(g_s)
        g = g_s + self.self_attn(a, a, a)
        mem = self.memory_norm(g_t)
        g = g + self.cross_attn(self.norm2(g), mem, mem, ct)
        return g + self.ffn(self.norm3(g))

    forward = decode
