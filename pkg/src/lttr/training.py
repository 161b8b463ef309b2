"""End-to-end training on (template, search) pairs drawn from sequences."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

from .backbone import BevGeometry
from .config import RunConfig
from .heads import OutOfRange, TargetMaps, build_targets
from .model import LTTR
from .optim import SGD, Adam
from .scene import PointCloud, Sequence, VoxelGrid, canonicalize, make_template, voxelize

log = logging.getLogger(__name__)

CURVE_FIELDS = ("step", "total", "heat", "off", "z", "ori")


class DatasetError(ValueError):
    """No usable training pairs."""


@dataclass
class Sample:
    search: VoxelGrid
    template: VoxelGrid
    targets: TargetMaps


def template_cloud(seq: Sequence) -> PointCloud:
    frame = seq.frames[0]
    cloud, _ = make_template(frame, frame.gt_box)
    return cloud


def build_sample(seq: Sequence, index: int, config: RunConfig, rng: np.random.Generator,
                 template: VoxelGrid | None = None) -> Sample | None:
    """Search frame ``index`` cropped around the previous frame's box plus a random shift.

    Returns ``None`` when the template is empty or the label leaves the map.
    """
    if template is None:
        cloud = template_cloud(seq)
        if config.template_dropout > 0 and len(cloud):
            keep = rng.uniform(size=len(cloud)) >= config.template_dropout
            cloud = PointCloud(cloud.points[keep])
        if len(cloud) == 0:
            return None
        template = voxelize(cloud, config, rng)
    ref = seq.frames[index - 1].gt_box
    search, label = canonicalize(seq.frames[index], ref, rng, train_mode=True,
                                 point_range=config.range, shift_range=config.shift_range)
    grid = voxelize(search, config, rng)
    try:
        targets = build_targets(label, BevGeometry.from_config(config))
    except OutOfRange:
        return None
    return Sample(grid, template, targets)


def make_optimizer(model: LTTR, config: RunConfig):
    params = model.parameters()
    if config.optimizer == "sgd":
        return SGD(params, lr=config.lr)
    return Adam(params, lr=config.lr)


def batch_step(model: LTTR, samples: list[Sample], optimizer, grad_clip: float = 0.0) -> dict:
    """One optimizer step on the mean loss over ``samples``."""
    optimizer.zero_grad()
    total = None
    parts = {k: 0.0 for k in CURVE_FIELDS[2:]}
    for s in samples:
        preds = model.forward(s.search, s.template)
        loss, p = model.loss(preds, s.targets)
        total = loss if total is None else total + loss
        for k in parts:
            parts[k] += p[k] / len(samples)
    total = total * (1.0 / len(samples))
    total.backward()
    if grad_clip > 0:
        optimizer.clip_grad_norm(grad_clip)
    optimizer.step()
    return {"total": total.item(), **parts}


@dataclass
class TrainResult:
    model: LTTR
    curve: list


def train(model: LTTR, dataset: list[Sequence], config: RunConfig | None = None) -> TrainResult:
    """Optimize the total loss with shuffled mini-batches; deterministic given ``config.seed``."""
    config = config or model.config
    if not dataset:
        raise DatasetError("empty dataset")
    rng = np.random.default_rng([config.seed, 1])
    templates = []
    for seq in dataset:
        cloud = template_cloud(seq)
        if len(cloud) and config.template_dropout == 0:
            templates.append(voxelize(cloud, config, rng))
        else:
            templates.append(None if len(cloud) == 0 else "resample")
    if all(t is None for t in templates):
        raise DatasetError("every sequence has an empty template")
    pairs = [(s, k) for s, seq in enumerate(dataset) if templates[s] is not None
             for k in range(1, len(seq))]

    optimizer = make_optimizer(model, config)
    curve = []
    step = 0
    for epoch in range(config.epochs):
        order = rng.permutation(len(pairs))
        for start in range(0, len(order), config.batch_size):
            if config.max_steps and step >= config.max_steps:
                return TrainResult(model, curve)
            samples = []
            for idx in order[start:start + config.batch_size]:
                s, k = pairs[idx]
                tpl = templates[s] if isinstance(templates[s], VoxelGrid) else None
                sample = build_sample(dataset[s], k, config, rng, tpl)
                if sample is not None:
                    samples.append(sample)
            if not samples:
                continue
            row = batch_step(model, samples, optimizer, config.grad_clip)
            step += 1
            row["step"] = step
            curve.append(row)
            if step % 50 == 0:
                log.info("epoch %d step %d loss %.4f", epoch, step, row["total"])
    return TrainResult(model, curve)


def fit_batch(model: LTTR, samples: list[Sample], steps: int, lr: float | None = None) -> list[float]:
    """Repeated steps on one frozen batch; returns the loss before each step."""
    optimizer = make_optimizer(model, model.config)
    if lr is not None:
        optimizer.lr = lr
    return [batch_step(model, samples, optimizer, model.config.grad_clip)["total"] for _ in range(steps)]


def write_curve(curve: list, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CURVE_FIELDS, lineterminator="\n")
        writer.writeheader()
        for row in curve:
            writer.writerow({k: repr(float(row[k])) if k != "step" else row[k] for k in CURVE_FIELDS})
