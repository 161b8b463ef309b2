"""Oriented-box IoU and one-pass-evaluation (OPE) Success / Precision."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .scene import Box3D

IOU_THRESHOLDS = np.linspace(0.0, 1.0, 101)
DIST_THRESHOLDS = np.linspace(0.0, 2.0, 101)


def polygon_area(poly: np.ndarray) -> float:
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def clip_convex(subject: np.ndarray, clipper: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman clipping of ``subject`` by a counter-clockwise convex ``clipper``."""
    out = [tuple(p) for p in subject]
    n = len(clipper)
    for i in range(n):
        if not out:
            break
        a, b = clipper[i], clipper[(i + 1) % n]
        edge = b - a

        def side(p):
            return edge[0] * (p[1] - a[1]) - edge[1] * (p[0] - a[0])

        inp, out = out, []
        prev = inp[-1]
        s_prev = side(prev)
        for cur in inp:
            s_cur = side(cur)
            if s_cur >= 0:
                if s_prev < 0:
                    out.append(_intersect(prev, cur, s_prev, s_cur))
                out.append(cur)
            elif s_prev >= 0:
                out.append(_intersect(prev, cur, s_prev, s_cur))
            prev, s_prev = cur, s_cur
    return np.array(out, dtype=np.float64).reshape(-1, 2)


def _intersect(p, q, sp, sq):
    t = sp / (sp - sq)
    return (p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1]))


def iou_3d(a: Box3D, b: Box3D) -> float:
    """Yaw-aware 3D IoU: exact BEV polygon overlap times vertical overlap."""
    inter_bev = polygon_area(clip_convex(a.corners_bev(), b.corners_bev()))
    za0, za1 = a.center[2] - a.size[2] / 2, a.center[2] + a.size[2] / 2
    zb0, zb1 = b.center[2] - b.size[2] / 2, b.center[2] + b.size[2] / 2
    inter = inter_bev * max(0.0, min(za1, zb1) - max(za0, zb0))
    union = a.volume + b.volume - inter
    return float(min(1.0, max(0.0, inter / union))) if union > 0 else 0.0


def center_error(a: Box3D, b: Box3D) -> float:
    return float(np.linalg.norm(np.subtract(a.center, b.center)))


@dataclass
class OpeResult:
    success: float
    precision: float
    ious: list = field(default_factory=list)
    errors: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"success": self.success, "precision": self.precision,
                "per_frame": [{"iou": i, "center_error": e} for i, e in zip(self.ious, self.errors)]}


def success_precision(ious, errors) -> tuple[float, float]:
    ious = np.asarray(ious, dtype=np.float64)
    errors = np.asarray(errors, dtype=np.float64)
    if ious.size == 0:
        return 0.0, 0.0
    success = float(np.mean([(ious > t).mean() for t in IOU_THRESHOLDS]))
    precision = float(np.mean([(errors <= d).mean() for d in DIST_THRESHOLDS]))
    return success, precision


def evaluate_ope(pred: list, gt: list) -> OpeResult:
    """Score a track; frame 0 is the given initialization and is not scored."""
    if len(pred) != len(gt):
        raise ValueError(f"{len(pred)} predictions for {len(gt)} ground-truth boxes")
    ious = [iou_3d(p, g) for p, g in zip(pred[1:], gt[1:])]
    errors = [center_error(p, g) for p, g in zip(pred[1:], gt[1:])]
    s, p = success_precision(ious, errors)
    return OpeResult(s, p, ious, errors)


def evaluate_many(pairs) -> OpeResult:
    """Pool per-frame scores over several ``(pred, gt)`` sequences."""
    ious, errors = [], []
    for pred, gt in pairs:
        r = evaluate_ope(pred, gt)
        ious += r.ious
        errors += r.errors
    s, p = success_precision(ious, errors)
    return OpeResult(s, p, ious, errors)
