"""Sequence tracking loop with the Siamese model."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .heads import decode_box
from .model import LTTR
from .tensor import no_grad
from .scene import Box3D, Frame, PointCloud, Sequence, canonicalize, decanonicalize, make_template, voxelize

log = logging.getLogger(__name__)


@dataclass
class TrackState:
    current_box: Box3D
    template_cloud: PointCloud
    history: list = field(default_factory=list)
    coasted: list = field(default_factory=list)


class Tracker:
    """Template fixed from the first frame; each search crop is centred on the last prediction."""

    def __init__(self, model: LTTR, variant: str | None = None):
        self.model = model
        self.config = model.config
        self.variant = variant or model.variant
        self.state: TrackState | None = None
        self._template = None
        self._rng = np.random.default_rng(self.config.seed)

    def start(self, frame: Frame) -> Box3D:
        cloud, _ = make_template(frame, frame.gt_box)
        self.state = TrackState(frame.gt_box, cloud, [(frame.gt_box, 1.0)], [False])
        grid = voxelize(cloud, self.config, self._rng)
        with no_grad():
            self._template = self.model.encode_template(grid, self.variant)
        return frame.gt_box

    def step(self, frame: Frame, trace: dict | None = None) -> Box3D:
        ref = self.state.current_box
        search, _ = canonicalize(frame, ref, point_range=self.config.range)
        if len(search) == 0:
            log.debug("empty search crop; coasting")
            self.state.history.append((ref, 0.0))
            self.state.coasted.append(True)
            return ref
        grid = voxelize(search, self.config, self._rng)
        with no_grad():
            preds = self.model.forward(grid, self._template, self.variant, trace)
        local, conf = decode_box(preds, self.model.geometry, ref.size)
        box = decanonicalize(local, ref)
        self.state.current_box = box
        self.state.history.append((box, conf))
        self.state.coasted.append(False)
        return box


def track_sequence(seq: Sequence, model: LTTR, variant: str | None = None) -> list[Box3D]:
    tracker = Tracker(model, variant)
    boxes = [tracker.start(seq.frames[0])]
    for frame in seq.frames[1:]:
        boxes.append(tracker.step(frame))
    return boxes
