"""Train-and-evaluate harness comparing the four fusion variants."""

from __future__ import annotations

import csv
import logging

from .config import RunConfig, VARIANTS
from .metrics import evaluate_many
from .model import LTTR
from .scene import Sequence
from .tracking import track_sequence
from .training import train

log = logging.getLogger(__name__)

LABELS = {
    "baseline": "Baseline",
    "encoder_only": "Encoder (w/o Decoder)",
    "encoder_decoder_max": "Encoder + Decoder (Max)",
    "encoder_decoder": "Encoder + Decoder",
}
ABLATION_FIELDS = ("variant", "label", "success", "precision")


def evaluate_model(model: LTTR, sequences: list[Sequence], variant: str | None = None):
    pairs = [(track_sequence(seq, model, variant), [f.gt_box for f in seq.frames]) for seq in sequences]
    return evaluate_many(pairs)


def train_and_evaluate(dataset: list[Sequence], config: RunConfig,
                       eval_set: list[Sequence] | None = None):
    """Fresh model for ``config.variant``, trained on ``dataset``; returns ``(model, curve, OpeResult)``."""
    model = LTTR(config)
    result = train(model, dataset, config)
    return model, result.curve, evaluate_model(model, eval_set or dataset)


def run_ablation(dataset: list[Sequence], config: RunConfig, eval_set: list[Sequence] | None = None,
                 variants=VARIANTS) -> list[dict]:
    """One row per variant; every variant sees the same seed, data and schedule."""
    rows = []
    for variant in variants:
        cfg = config.replace(variant=variant)
        _, _, ope = train_and_evaluate(dataset, cfg, eval_set)
        log.info("%s: success %.4f precision %.4f", variant, ope.success, ope.precision)
        rows.append({"variant": variant, "label": LABELS[variant],
                     "success": ope.success, "precision": ope.precision})
    return rows


def write_table(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=ABLATION_FIELDS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({**row, "success": repr(float(row["success"])),
                             "precision": repr(float(row["precision"]))})
