"""Synthetic tracking sequences, box-frame transforms and voxelization."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig

MAX_STEP = 0.4
MAX_YAW_STEP = 0.15


def wrap_angle(a: float) -> float:
    """Map an angle into (-pi, pi]."""
    a = math.fmod(a, 2 * math.pi)
    if a <= -math.pi:
        a += 2 * math.pi
    elif a > math.pi:
        a -= 2 * math.pi
    return a


def _rot(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True)
class Box3D:
    """Oriented box: ``size`` is (w, l, h) with ``l`` along the heading."""

    center: tuple
    size: tuple
    yaw: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(v) for v in self.center))
        object.__setattr__(self, "size", tuple(float(v) for v in self.size))
        object.__setattr__(self, "yaw", wrap_angle(float(self.yaw)))
        if len(self.center) != 3 or len(self.size) != 3:
            raise ValueError("center and size need three components")
        if min(self.size) <= 0:
            raise ValueError(f"box size must be positive, got {self.size}")

    @property
    def volume(self) -> float:
        w, l, h = self.size
        return w * l * h

    def corners_bev(self) -> np.ndarray:
        """The four BEV corners, counter-clockwise, shape (4, 2)."""
        w, l, _ = self.size
        local = np.array([[l, w], [-l, w], [-l, -w], [l, -w]]) / 2.0
        return local @ _rot(self.yaw).T + np.array(self.center[:2])

    def to_local(self, points: np.ndarray) -> np.ndarray:
        """World points -> box frame (origin at center, heading along +x)."""
        p = np.asarray(points, dtype=np.float64).reshape(-1, 3) - np.array(self.center)
        out = p.copy()
        out[:, :2] = p[:, :2] @ _rot(self.yaw)
        return out

    def to_world(self, points: np.ndarray) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        out = p.copy()
        out[:, :2] = p[:, :2] @ _rot(self.yaw).T
        return out + np.array(self.center)

    def contains(self, points: np.ndarray, tol: float = 1e-9) -> np.ndarray:
        local = self.to_local(points)
        w, l, h = self.size
        half = np.array([l, w, h]) / 2.0 + tol
        return np.all(np.abs(local) <= half, axis=1)

    def to_dict(self) -> dict:
        return {"center": list(self.center), "size": list(self.size), "yaw": self.yaw}

    @classmethod
    def from_dict(cls, d: dict) -> "Box3D":
        return cls(d["center"], d["size"], d["yaw"])


@dataclass
class PointCloud:
    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(self.points)):
            raise ValueError("point cloud contains non-finite coordinates")

    def __len__(self) -> int:
        return len(self.points)


@dataclass
class Frame:
    cloud: PointCloud
    gt_box: Box3D


@dataclass
class Sequence:
    frames: list
    object_size: tuple

    def __post_init__(self):
        for fr in self.frames:
            if not np.allclose(fr.gt_box.size, self.object_size, rtol=0, atol=1e-12):
                raise ValueError("frame box size differs from the sequence object size")

    def __len__(self) -> int:
        return len(self.frames)


# -- generation ---------------------------------------------------------------

def _shell_points(rng: np.random.Generator, size, n: int, inset: float = 0.98) -> np.ndarray:
    """Uniform samples on the surface of a box (local frame, heading +x)."""
    w, l, h = size
    half = np.array([l, w, h]) / 2.0 * inset
    areas = np.array([w * h, w * h, l * h, l * h, l * w, l * w])
    faces = rng.choice(6, size=n, p=areas / areas.sum())
    pts = rng.uniform(-1.0, 1.0, size=(n, 3)) * half
    axis = faces // 2
    sign = np.where(faces % 2 == 0, 1.0, -1.0)
    pts[np.arange(n), axis] = sign * half[axis]
    return pts


def generate_sequence(seed: int, n_frames: int, clutter_density: float = 0.5,
                      point_budget: int = 400) -> Sequence:
    """A rigid box-shaped object moving along a smooth random path.

    ``clutter_density`` is uniform background points per square metre in an
    8 m square around the object; ``point_budget`` is the number of surface
    points on the object before per-frame dropout.
    """
    if n_frames < 2:
        raise ValueError("a sequence needs at least two frames")
    rng = np.random.default_rng(seed)
    size = (rng.uniform(1.5, 1.9), rng.uniform(3.5, 4.5), rng.uniform(1.4, 1.7))
    shell = _shell_points(rng, size, point_budget)

    center = np.array([rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-0.3, 0.3)])
    yaw = rng.uniform(-math.pi, math.pi)
    speed = rng.uniform(0.1, 0.35)
    yaw_rate = rng.uniform(-0.05, 0.05)

    frames = []
    for t in range(n_frames):
        if t > 0:
            speed = float(np.clip(speed + rng.normal(0, 0.04), 0.0, 0.38))
            yaw_rate = float(np.clip(yaw_rate + rng.normal(0, 0.03), -0.1, 0.1))
            yaw = wrap_angle(yaw + yaw_rate)
            dz = float(np.clip(rng.normal(0, 0.01), -0.02, 0.02))
            center = center + np.array([speed * math.cos(yaw), speed * math.sin(yaw), dz])
        box = Box3D(center, size, yaw)
        keep = rng.uniform(size=point_budget) < rng.uniform(0.4, 0.9)
        if not keep.any():
            keep[rng.integers(point_budget)] = True
        obj = box.to_world(shell[keep])
        n_clutter = rng.poisson(clutter_density * 64.0)
        clutter = np.column_stack([
            rng.uniform(-4, 4, n_clutter) + center[0],
            rng.uniform(-4, 4, n_clutter) + center[1],
            rng.uniform(-1.5, 1.0, n_clutter) + center[2],
        ])
        clutter = clutter[~box.contains(clutter)]
        frames.append(Frame(PointCloud(np.vstack([obj, clutter])), box))
    return Sequence(frames, tuple(float(v) for v in size))


# -- box-frame transforms -----------------------------------------------------

def in_range(points: np.ndarray, point_range) -> np.ndarray:
    lo = np.asarray(point_range[:3])
    hi = np.asarray(point_range[3:])
    return np.all((points >= lo) & (points < hi), axis=1)


def box_in_frame(box: Box3D, ref: Box3D) -> Box3D:
    """Express a world box in ``ref``'s box frame."""
    return Box3D(ref.to_local(np.array(box.center))[0], box.size, box.yaw - ref.yaw)


def decanonicalize(box: Box3D, ref: Box3D) -> Box3D:
    """Inverse of :func:`box_in_frame`."""
    return Box3D(ref.to_world(np.array(box.center))[0], box.size, box.yaw + ref.yaw)


def canonicalize(frame: Frame, ref_box: Box3D, rng: np.random.Generator | None = None,
                 train_mode: bool = False, point_range=None, shift_range: float = 0.8,
                 shift=None) -> tuple[PointCloud, Box3D]:
    """Crop ``frame`` around ``ref_box`` in the box's own frame.

    In ``train_mode`` the reference centre is moved by a uniform offset in
    ``[-shift_range, shift_range]`` along its own x and y axes first (or by
    ``shift`` if given), so the label box sits off-centre.
    """
    if point_range is None:
        point_range = RunConfig().range
    if train_mode:
        if shift is None:
            shift = rng.uniform(-shift_range, shift_range, size=2)
        offset = _rot(ref_box.yaw) @ np.asarray(shift, dtype=np.float64)
        ref_box = Box3D(np.array(ref_box.center) + np.array([offset[0], offset[1], 0.0]),
                        ref_box.size, ref_box.yaw)
    local = ref_box.to_local(frame.cloud.points)
    local = local[in_range(local, point_range)]
    return PointCloud(local), box_in_frame(frame.gt_box, ref_box)


def make_template(frame: Frame, gt_box: Box3D) -> tuple[PointCloud, bool]:
    """Points inside ``gt_box`` in its heading-aligned frame, plus a non-empty flag."""
    inside = frame.cloud.points[gt_box.contains(frame.cloud.points)]
    cloud = PointCloud(gt_box.to_local(inside))
    return cloud, len(cloud) > 0


# -- voxelization -------------------------------------------------------------

@dataclass
class VoxelGrid:
    extents: tuple
    voxel_size: tuple
    origin: tuple
    voxels: dict
    features: np.ndarray
    max_points: int = 5

    def occupied_index(self) -> np.ndarray:
        """Sorted flat indices of non-empty voxels."""
        if not self.voxels:
            return np.zeros(0, dtype=np.int64)
        return np.ravel_multi_index(tuple(np.array(list(self.voxels)).T), self.extents)

    def cell_bounds(self, cell) -> tuple[np.ndarray, np.ndarray]:
        lo = np.array(self.origin) + np.array(cell) * np.array(self.voxel_size)
        return lo, lo + np.array(self.voxel_size)


def voxelize(cloud: PointCloud, config: RunConfig, rng: np.random.Generator | None = None) -> VoxelGrid:
    """Bin points into voxels, keeping at most ``max_points`` random points each.

    Per-voxel features (4 channels): mean offset of the kept points from the
    voxel centre in voxel units, and kept-point count / ``max_points``.
    """
    config.validate()
    if rng is None:
        rng = np.random.default_rng(config.seed)
    extents = config.grid_extents
    vs = np.asarray(config.voxel_size, dtype=np.float64)
    origin = np.asarray(config.range[:3], dtype=np.float64)
    pts = cloud.points[in_range(cloud.points, config.range)]
    pts = pts[rng.permutation(len(pts))]

    cells = np.floor((pts - origin) / vs + 1e-9).astype(np.int64)
    cells = np.clip(cells, 0, np.array(extents) - 1)
    keys = np.ravel_multi_index(cells.T, extents) if len(pts) else np.zeros(0, np.int64)
    order = np.argsort(keys, kind="stable")
    keys, pts, cells = keys[order], pts[order], cells[order]
    starts = np.r_[0, np.flatnonzero(np.diff(keys)) + 1] if len(keys) else np.zeros(0, np.int64)
    rank = np.arange(len(keys)) - np.repeat(starts, np.diff(np.r_[starts, len(keys)]))
    keep = rank < config.max_points
    keys, pts, cells = keys[keep], pts[keep], cells[keep]

    # canonical order inside each voxel so sums do not depend on input order
    order = np.lexsort((pts[:, 2], pts[:, 1], pts[:, 0], keys))
    keys, pts, cells = keys[order], pts[order], cells[order]

    features = np.zeros(tuple(extents) + (4,))
    if len(keys):
        centers = origin + (cells + 0.5) * vs
        offsets = (pts - centers) / vs
        flat = features.reshape(-1, 4)
        np.add.at(flat[:, :3], keys, offsets)
        np.add.at(flat[:, 3], keys, 1.0)
        occupied = flat[:, 3] > 0
        flat[occupied, :3] /= flat[occupied, 3:4]
        flat[:, 3] /= config.max_points

    voxels = {}
    if len(keys):
        bounds = np.r_[0, np.flatnonzero(np.diff(keys)) + 1, len(keys)]
        for a, b in zip(bounds[:-1], bounds[1:]):
            voxels[tuple(int(c) for c in cells[a])] = pts[a:b]
    return VoxelGrid(tuple(extents), tuple(float(v) for v in vs), tuple(float(v) for v in origin),
                     voxels, features, config.max_points)


# -- sequence files -----------------------------------------------------------

def write_sequence(seq: Sequence, path) -> None:
    lines = []
    for fr in seq.frames:
        lines.append(json.dumps({"points": fr.cloud.points.tolist(), "box": fr.gt_box.to_dict()}))
    Path(path).write_text("\n".join(lines) + "\n")


def read_sequence(path) -> Sequence:
    frames = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        doc = json.loads(line)
        frames.append(Frame(PointCloud(np.array(doc["points"], dtype=np.float64).reshape(-1, 3)),
                            Box3D.from_dict(doc["box"])))
    if not frames:
        raise ValueError(f"{path}: no frames")
    return Sequence(frames, frames[0].gt_box.size)


def read_dataset(data_dir) -> list[Sequence]:
    paths = sorted(Path(data_dir).glob("*.jsonl"))
    return [read_sequence(p) for p in paths]


__all__ = [
    "Box3D", "ConfigError", "Frame", "PointCloud", "Sequence", "VoxelGrid", "canonicalize",
    "decanonicalize", "generate_sequence", "make_template", "read_dataset", "read_sequence",
    "voxelize", "write_sequence",
]
