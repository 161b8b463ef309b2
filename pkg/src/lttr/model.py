"""The full Siamese tracker network and its training objective."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .backbone import Backbone, BevGeometry, FeatureMap
from .config import ConfigError, RunConfig, VARIANTS
from .fusion import RegionAttention, apply_region_weights, depthwise_xcorr, fuse
from .heads import CenterHeads, PredictionMaps, TargetMaps, focal_loss, l1_head_loss, total_loss
from .nn import LayerNorm, Module
from .scene import VoxelGrid
from .tensor import Tensor
from .transformer import Decoder, Encoder

TRANSFORMER_PREFIXES = ("encoder.", "decoder.", "region_weight.")


@dataclass
class TemplateState:
    """Template-branch results that stay fixed while tracking one sequence."""

    features: FeatureMap
    regions: Tensor | None


class LTTR(Module):
    def __init__(self, config: RunConfig, rng: np.random.Generator | None = None):
        config.validate()
        if rng is None:
            rng = np.random.default_rng(config.seed)
        self.config = config
        self.variant = config.variant
        self.backbone = Backbone(config, rng)
        self.encoder = None
        self.decoder = None
        self.region_weight = None
        if config.variant != "baseline":
            self.encoder = Encoder(config, rng)
            self.region_weight = RegionAttention(config.region_dim, rng, config.attention_sigmoid)
        if config.variant in ("encoder_decoder", "encoder_decoder_max"):
            self.decoder = Decoder(config.region_dim, config.heads, config.ffn_ratio, rng)
        # The similarity vector is a sum over the whole map, so the fused map's
        # scale varies wildly with point density; normalize it per position.
        self.fusion_norm = LayerNorm(config.feature_dim)
        self.heads = CenterHeads(config.feature_dim, rng)
        self.geometry = BevGeometry.from_config(config)

    def _check_variant(self, variant: str) -> str:
        variant = variant or self.variant
        if variant not in VARIANTS:
            raise ConfigError(f"unknown variant {variant!r}")
        if variant != "baseline" and self.encoder is None:
            raise ConfigError(f"model has no encoder; cannot run variant {variant!r}")
        if variant.startswith("encoder_decoder") and self.decoder is None:
            raise ConfigError(f"model has no decoder; cannot run variant {variant!r}")
        return variant

    def encode_template(self, template: VoxelGrid | np.ndarray, variant: str | None = None) -> TemplateState:
        variant = self._check_variant(variant)
        fmap = self.backbone.extract(template)
        regions = self.encoder.encode(fmap.tensor) if variant != "baseline" else None
        return TemplateState(fmap, regions)

    def forward(self, search: VoxelGrid | np.ndarray, template: VoxelGrid | np.ndarray | TemplateState,
                variant: str | None = None, trace: dict | None = None) -> PredictionMaps:
        variant = self._check_variant(variant)
        if not isinstance(template, TemplateState):
            template = self.encode_template(template, variant)
        m_s = self.backbone.extract(search).tensor
        m_t = template.features.tensor
        r = self.config.region_size

        if variant != "baseline":
            g_s = self.encoder.encode(m_s, trace)[1:]
            g_t_full = template.regions
            if variant == "encoder_decoder":
                g_s = self.decoder.decode(g_s, g_t_full[1:], trace)
            elif variant == "encoder_decoder_max":
                g_s = self.decoder.decode(g_s, g_t_full[0:1], trace)
            w_s = self.region_weight(g_s)
            w_t = self.region_weight(g_t_full[1:])
            m_s = apply_region_weights(m_s, w_s, r)
            m_t = apply_region_weights(m_t, w_t, r)
            if trace is not None:
                trace["region_weights_search"] = w_s.data.copy()
                trace["region_weights_template"] = w_t.data.copy()

        sim = depthwise_xcorr(m_s, m_t)
        preds = self.heads(self.fusion_norm(fuse(m_s, sim)))
        if trace is not None:
            trace["heatmap"] = preds.heatmap.data.copy()
        return preds

    def loss(self, preds: PredictionMaps, targets: TargetMaps) -> tuple[Tensor, dict]:
        cfg = self.config
        cell = targets.center_cell
        heat = focal_loss(preds.heatmap, targets.heatmap, cfg.focal_alpha, cfg.focal_beta)
        off = l1_head_loss(preds.offset, targets.offset, cell)
        z = l1_head_loss(preds.z, [targets.z], cell)
        ori = l1_head_loss(preds.orientation, targets.orientation, cell)
        total = total_loss(heat, off, z, ori, cfg.lambda_off, cfg.lambda_z, cfg.lambda_ori)
        parts = {"heat": heat.item(), "off": off.item(), "z": z.item(), "ori": ori.item()}
        return total, parts

    def transformer_parameters(self) -> dict:
        return {k: v for k, v in self.state().items() if k.startswith(TRANSFORMER_PREFIXES)}
