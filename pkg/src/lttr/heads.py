"""Center-based prediction heads, training targets, losses and box decoding."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .backbone import BevGeometry
from .nn import Conv, Module
from .scene import Box3D
from .tensor import Tensor

HEAD_CHANNELS = {"heatmap": 1, "offset": 2, "z": 1, "orientation": 2}
CLAMP_EPS = 1e-6


class OutOfRange(ValueError):
    """The label centre falls outside the BEV map; the sample should be skipped."""


class Head(Module):
    """Four 3x3 convs: three channel-preserving with ReLU, one linear output."""

    def __init__(self, channels: int, out_channels: int, rng: np.random.Generator, depth: int = 4):
        self.convs = [Conv(2, channels, channels, rng) for _ in range(depth - 1)]
        self.out = Conv(2, channels, out_channels, rng)

    def forward(self, x: Tensor) -> Tensor:
        for conv in self.convs:
            x = T.relu(conv(x))
        return self.out(x)


@dataclass
class PredictionMaps:
    heatmap: Tensor
    offset: Tensor
    z: Tensor
    orientation: Tensor


class CenterHeads(Module):
    def __init__(self, channels: int, rng: np.random.Generator):
        self.heatmap = Head(channels, 1, rng)
        self.offset = Head(channels, 2, rng)
        self.z = Head(channels, 1, rng)
        self.orientation = Head(channels, 2, rng)

    def forward(self, m: Tensor) -> PredictionMaps:
        return PredictionMaps(T.sigmoid(self.heatmap(m)), self.offset(m), self.z(m), self.orientation(m))


def heads_forward(m: Tensor, heads: CenterHeads) -> PredictionMaps:
    return heads(m)


# -- targets ----------------------------------------------------------------------

@dataclass
class TargetMaps:
    heatmap: np.ndarray
    center_cell: tuple
    offset: np.ndarray
    z: float
    orientation: np.ndarray


def heat_value(d: float) -> float:
    if d == 0:
        return 1.0
    if d == 1:
        return 0.8
    return 1.0 / d


def build_targets(label_box: Box3D, geometry: BevGeometry) -> TargetMaps:
    sx, sy = geometry.cell
    fx = (label_box.center[0] - geometry.origin[0]) / sx
    fy = (label_box.center[1] - geometry.origin[1]) / sy
    cx, cy = math.floor(fx), math.floor(fy)
    nx, ny = geometry.shape
    if not (0 <= cx < nx and 0 <= cy < ny):
        raise OutOfRange(f"centre cell {(cx, cy)} outside {geometry.shape}")
    ix, iy = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    dist = np.sqrt((ix - cx) ** 2 + (iy - cy) ** 2)
    heat = np.empty_like(dist)
    heat[dist == 0] = 1.0
    heat[dist == 1] = 0.8
    rest = (dist != 0) & (dist != 1)
    heat[rest] = 1.0 / dist[rest]
    return TargetMaps(
        heatmap=heat[..., None],
        center_cell=(cx, cy),
        offset=np.array([fx - cx, fy - cy]),
        z=label_box.center[2],
        orientation=np.array([math.sin(label_box.yaw), math.cos(label_box.yaw)]),
    )


# -- losses -----------------------------------------------------------------------

def focal_loss(pred: Tensor, target: np.ndarray, alpha: float = 2.0, beta: float = 4.0,
               eps: float = CLAMP_EPS) -> Tensor:
    """Penalty-reduced focal loss, normalized by the number of cells equal to 1."""
    target = np.asarray(target, dtype=np.float64)
    p = T.clip(pred, eps, 1.0 - eps)
    pos = (target == 1.0).astype(np.float64)
    n_pos = max(1.0, pos.sum())
    pos_term = T.power(1.0 - p, alpha) * T.log(p) * pos
    neg_weight = (1.0 - target) ** beta * (1.0 - pos)
    neg_term = T.power(p, alpha) * T.log(1.0 - p) * neg_weight
    return T.tsum(pos_term + neg_term) * (-1.0 / n_pos)


def l1_head_loss(pred: Tensor, target, cell: tuple) -> Tensor:
    """Mean absolute error of the prediction vector at ``cell``."""
    target = np.atleast_1d(np.asarray(target, dtype=np.float64))
    at = pred[cell[0], cell[1]]
    return T.mean(T.tabs(at - target))


def total_loss(heat, off, z, ori, lambda_off: float = 1.0, lambda_z: float = 1.5,
               lambda_ori: float = 1.0):
    return heat + off * lambda_off + z * lambda_z + ori * lambda_ori


# -- decoding ---------------------------------------------------------------------

def _arr(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def decode_box(preds: PredictionMaps, geometry: BevGeometry, known_size) -> tuple[Box3D, float]:
    """Box at the heatmap argmax (ties -> lowest row-major index) and its score."""
    heat = _arr(preds.heatmap)[..., 0]
    flat = int(np.argmax(heat))
    i, j = np.unravel_index(flat, heat.shape)
    off = _arr(preds.offset)[i, j]
    x = (i + off[0]) * geometry.cell[0] + geometry.origin[0]
    y = (j + off[1]) * geometry.cell[1] + geometry.origin[1]
    z = float(_arr(preds.z)[i, j, 0])
    s, c = _arr(preds.orientation)[i, j]
    yaw = math.atan2(s, c)
    return Box3D((x, y, z), known_size, yaw), float(heat[i, j])
