"""Run configuration: one flat JSON document with strict key checking."""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

VARIANTS = ("baseline", "encoder_only", "encoder_decoder_max", "encoder_decoder")


class ConfigError(ValueError):
    """Inconsistent or unknown configuration."""


@dataclass
class RunConfig:
    # voxelization
    range: list = field(default_factory=lambda: [-3.2, -3.2, -3.0, 3.2, 3.2, 1.0])
    voxel_size: list = field(default_factory=lambda: [0.1, 0.1, 0.25])
    max_points: int = 5
    seed: int = 0
    # backbone
    channels_3d: list = field(default_factory=lambda: [8, 16, 32])
    channels_2d: list = field(default_factory=lambda: [32, 32])
    feature_dim: int = 32
    backbone_3d: str = "base_voxel"
    backbone_2d: str = "base_bev"
    # transformer
    region_size: int = 4
    point_grid: int = 2
    region_dim: int = 64
    point_dim: int = 64
    heads: int = 2
    layers: int = 1
    ffn_ratio: int = 2
    # fusion / heads
    attention_sigmoid: bool = False
    head_type: str = "center"
    # loss
    focal_alpha: float = 2.0
    focal_beta: float = 4.0
    lambda_off: float = 1.0
    lambda_z: float = 1.5
    lambda_ori: float = 1.0
    # training
    optimizer: str = "adam"
    lr: float = 1e-3
    epochs: int = 40
    max_steps: int = 0
    batch_size: int = 4
    grad_clip: float = 10.0
    shift_range: float = 0.8
    template_dropout: float = 0.0
    variant: str = "encoder_decoder"
    # synthetic data
    n_frames: int = 20
    clutter_density: float = 0.5
    point_budget: int = 400

    def __post_init__(self):
        self.validate()

    # -- derived geometry -------------------------------------------------
    @property
    def grid_extents(self) -> tuple[int, int, int]:
        return tuple(int(round((self.range[i + 3] - self.range[i]) / self.voxel_size[i]))
                     for i in range(3))

    @property
    def bev_shape(self) -> tuple[int, int]:
        w, l, _ = self.grid_extents
        return w // 8, l // 8

    @property
    def bev_cell(self) -> tuple[float, float]:
        return 8 * self.voxel_size[0], 8 * self.voxel_size[1]

    @property
    def n_regions(self) -> int:
        x, y = self.bev_shape
        return (x // self.region_size) * (y // self.region_size)

    def validate(self) -> None:
        if len(self.range) != 6 or len(self.voxel_size) != 3:
            raise ConfigError("range needs 6 values and voxel_size 3")
        for i in range(3):
            span = self.range[i + 3] - self.range[i]
            if span <= 0 or self.voxel_size[i] <= 0:
                raise ConfigError(f"axis {i}: empty range or non-positive voxel size")
            ratio = span / self.voxel_size[i]
            if not math.isclose(ratio, round(ratio), abs_tol=1e-6):
                raise ConfigError(f"axis {i}: voxel size {self.voxel_size[i]} does not divide span {span}")
        w, l, _ = self.grid_extents
        if w % 8 or l % 8:
            raise ConfigError(f"grid extents {self.grid_extents} not divisible by 8")
        if self.max_points < 1:
            raise ConfigError("max_points must be positive")
        if len(self.channels_3d) != 3:
            raise ConfigError("channels_3d needs exactly three stride-2 stages")
        if not self.channels_2d or self.channels_2d[-1] != self.feature_dim:
            raise ConfigError("channels_2d must end with feature_dim")
        bx, by = self.bev_shape
        if bx % self.region_size or by % self.region_size:
            raise ConfigError(f"BEV {self.bev_shape} not divisible by region_size {self.region_size}")
        if self.region_size % self.point_grid:
            raise ConfigError(f"region_size {self.region_size} not divisible by point_grid {self.point_grid}")
        if self.region_dim % self.heads or self.point_dim % self.heads:
            raise ConfigError("region_dim and point_dim must be divisible by heads")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.backbone_3d != "base_voxel" or self.backbone_2d != "base_bev":
            raise ConfigError("only the base_voxel/base_bev backbone is implemented")
        if self.head_type != "center":
            raise ConfigError("only the center-based head is implemented")

    # -- (de)serialization --------------------------------------------------
    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        for key in doc:
            if key not in known:
                raise ConfigError(f"unknown config key: {key!r}")
        return cls(**doc)

    @classmethod
    def load(cls, path) -> "RunConfig":
        text = Path(path).read_text()
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: malformed JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: top level must be an object")
        return cls.from_dict(doc)


def paper_config(**overrides) -> RunConfig:
    """Geometry of the full-resolution setup (256 x 256 x 80 grid, R=16)."""
    base = dict(voxel_size=[0.025, 0.025, 0.05], region_size=16, point_grid=4, heads=8, layers=1)
    base.update(overrides)
    return RunConfig(**base)
