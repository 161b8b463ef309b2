"""Shared-weight voxel backbone: strided 3D convs, BEV collapse, 2D convs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .config import ConfigError, RunConfig
from .nn import ChannelNorm, Conv, LayerNorm, Module
from .scene import VoxelGrid
from .tensor import Tensor


@dataclass(frozen=True)
class BevGeometry:
    """Metric layout of a BEV map: cell (i, j) spans origin + [i, i+1) * cell."""

    shape: tuple
    cell: tuple
    origin: tuple

    @classmethod
    def from_config(cls, config: RunConfig) -> "BevGeometry":
        return cls(config.bev_shape, config.bev_cell, tuple(config.range[:2]))


@dataclass
class FeatureMap:
    tensor: Tensor
    geometry: BevGeometry

    @property
    def stride_m(self) -> tuple:
        return self.geometry.cell


class ConvBlock(Module):
    """conv -> normalization -> relu.

    Voxel volumes are mostly empty, so the 3D blocks normalize each channel over
    the whole volume; a per-position norm would map an empty voxel from exactly 0
    to unit scale as soon as the conv bias moves.  The dense BEV blocks use a
    per-position layer norm over channels.
    """

    def __init__(self, dims: int, c_in: int, c_out: int, rng, stride: int):
        self.conv = Conv(dims, c_in, c_out, rng, kernel=3, stride=stride, padding=1)
        self.norm = ChannelNorm(c_out) if dims == 3 else LayerNorm(c_out)

    def forward(self, x: Tensor, occupied=None) -> Tensor:
        return T.relu(self.norm(self.conv(x, occupied)))


class Backbone(Module):
    def __init__(self, config: RunConfig, rng: np.random.Generator, in_channels: int = 4):
        c = in_channels
        self.blocks3d = []
        for width in config.channels_3d:
            self.blocks3d.append(ConvBlock(3, c, width, rng, stride=2))
            c = width
        depth = config.grid_extents[2]
        for _ in range(3):
            depth = (depth - 1) // 2 + 1
        c = c * depth
        self.blocks2d = []
        for width in config.channels_2d:
            self.blocks2d.append(ConvBlock(2, c, width, rng, stride=1))
            c = width
        self._extents = config.grid_extents
        self._geometry = BevGeometry.from_config(config)

    def extract(self, grid: VoxelGrid | np.ndarray | Tensor) -> FeatureMap:
        occupied = None
        if isinstance(grid, VoxelGrid):
            occupied = grid.occupied_index()
            grid = grid.features
        x = T.as_tensor(grid)
        if x.ndim != 4:
            raise ConfigError(f"expected a (W, L, H, C) voxel volume, got {x.shape}")
        if x.shape[0] % 8 or x.shape[1] % 8:
            raise ConfigError(f"grid extents {x.shape[:3]} not divisible by 8")
        for i, block in enumerate(self.blocks3d):
            x = block(x, occupied if i == 0 else None)
        bx, by, bz, c = x.shape
        x = T.reshape(x, (bx, by, bz * c))
        for block in self.blocks2d:
            x = block(x)
        geom = self._geometry
        if x.shape[:2] != tuple(geom.shape):
            geom = BevGeometry(x.shape[:2], geom.cell, geom.origin)
        return FeatureMap(x, geom)

    forward = extract


def siamese_extract(search: VoxelGrid, template: VoxelGrid, backbone: Backbone) -> tuple[FeatureMap, FeatureMap]:
    """Run both branches through one backbone (shared weights)."""
    if isinstance(search, VoxelGrid) and isinstance(template, VoxelGrid):
        if search.extents != template.extents or not np.allclose(search.voxel_size, template.voxel_size):
            raise ConfigError("search and template grids must share extents and voxel size")
    return backbone.extract(search), backbone.extract(template)
