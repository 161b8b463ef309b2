"""Command-line entry point: ``lttr <command> ...``.

Exit status is 0 on success, 1 for usage or configuration errors and 2 for
runtime or I/O failures.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import checkpoint
from .ablation import evaluate_model, run_ablation, write_table
from .config import ConfigError, RunConfig, VARIANTS
from .metrics import evaluate_many
from .model import LTTR
from .scene import Box3D, generate_sequence, read_dataset, read_sequence, write_sequence
from .tracking import Tracker, track_sequence
from .training import train, write_curve

log = logging.getLogger("lttr")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
SEED_ENV = "LTTR_SEED"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# -- helpers ------------------------------------------------------------------

def _env_seed() -> int | None:
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw == "":
        return None
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


def load_config(args) -> RunConfig:
    """Config file, then ``LTTR_SEED``, then explicit flags; later wins."""
    config = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    changes = {}
    seed = _env_seed()
    if seed is not None:
        changes["seed"] = seed
    for flag in ("variant", "max_steps", "epochs", "seed", "lr"):
        value = getattr(args, flag, None)
        if value is not None:
            changes[flag] = value
    config = config.replace(**changes) if changes else config
    config.validate()
    return config


def load_model(path, variant: str | None = None) -> LTTR:
    _, meta = checkpoint.read(path)
    if "config" not in meta:
        raise ConfigError(f"{path}: checkpoint index carries no config")
    model = LTTR(RunConfig.from_dict(meta["config"]))
    checkpoint.load_into(model.state(), path)
    if variant is not None:
        model.variant = variant
    return model


def _dataset(path):
    path = Path(path)
    if not path.is_dir():
        raise FileNotFoundError(f"data directory not found: {path}")
    seqs = read_dataset(path)
    names = [p.stem for p in sorted(path.glob("*.jsonl"))]
    if not seqs:
        raise FileNotFoundError(f"no .jsonl sequences in {path}")
    return names, seqs


def _write_json(path, doc) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def write_array(path, arr: np.ndarray) -> None:
    """``uint32 ndim``, ``ndim x uint64`` shape, then little-endian float64 values."""
    arr = np.asarray(arr, dtype="<f8")
    header = np.array([arr.ndim], dtype="<u4").tobytes() + np.array(arr.shape, dtype="<u8").tobytes()
    Path(path).write_bytes(header + arr.tobytes())


def read_array(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    ndim = int(np.frombuffer(raw[:4], dtype="<u4")[0])
    shape = tuple(int(s) for s in np.frombuffer(raw[4:4 + 8 * ndim], dtype="<u8"))
    return np.frombuffer(raw[4 + 8 * ndim:], dtype="<f8").reshape(shape).copy()


# -- commands -----------------------------------------------------------------

def cmd_gen(args) -> int:
    seed = args.seed if args.seed is not None else (_env_seed() or 0)
    defaults = RunConfig()
    frames = args.frames or defaults.n_frames
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seeds = np.random.SeedSequence(seed).generate_state(args.count) if args.count else []
    entries = []
    for i, s in enumerate(seeds):
        seq = generate_sequence(int(s), frames, defaults.clutter_density, defaults.point_budget)
        name = f"seq_{i:04d}.jsonl"
        write_sequence(seq, out / name)
        entries.append({"file": name, "seed": int(s), "frames": len(seq)})
    manifest = {"seed": seed, "count": args.count, "sequences": entries}
    _write_json(out / "manifest.json", manifest)
    print(json.dumps(manifest, indent=1, sort_keys=True))
    return EXIT_OK


def cmd_train(args) -> int:
    config = load_config(args)
    _, seqs = _dataset(args.data)
    model = LTTR(config)
    result = train(model, seqs, config)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    checkpoint.save(model.state(), out, {"config": config.to_dict(), "steps": len(result.curve)})
    curve_path = Path(args.curve) if args.curve else out.with_name(out.name + ".loss.csv")
    write_curve(result.curve, curve_path)
    final = result.curve[-1]["total"] if result.curve else float("nan")
    print(f"trained {config.variant}: {len(result.curve)} steps, final loss {final:.6g}; wrote {out}")
    return EXIT_OK


def _report(variant, names, result, lengths) -> dict:
    per_frame, k = [], 0
    for name, n in zip(names, lengths):
        for frame in range(1, n):
            per_frame.append({"sequence": name, "frame": frame,
                              "iou": result.ious[k], "center_error": result.errors[k]})
            k += 1
    return {"variant": variant, "success": result.success, "precision": result.precision,
            "per_frame": per_frame}


def _read_boxes(path) -> list:
    return [Box3D.from_dict(json.loads(line)) for line in Path(path).read_text().splitlines() if line.strip()]


def cmd_eval(args) -> int:
    names, seqs = _dataset(args.data)
    gts = [[f.gt_box for f in s.frames] for s in seqs]
    if args.predictions:
        preds = []
        for name in names:
            p = Path(args.predictions) / f"{name}.boxes.jsonl"
            if not p.exists():
                raise FileNotFoundError(f"missing predictions: {p}")
            preds.append(_read_boxes(p))
        variant = "predictions"
    elif args.checkpoint:
        model = load_model(args.checkpoint, args.variant)
        variant = model.variant
        preds = [track_sequence(s, model) for s in seqs]
    else:
        raise UsageError("eval needs --checkpoint or --predictions")
    result = evaluate_many(zip(preds, gts))
    report = _report(variant, names, result, [len(s) for s in seqs])
    _write_json(args.out, report)
    print(f"{variant}: success {result.success:.4f} precision {result.precision:.4f}")
    return EXIT_OK


def cmd_track(args) -> int:
    names, seqs = _dataset(args.data)
    model = load_model(args.checkpoint, args.variant)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, seq in zip(names, seqs):
        boxes = track_sequence(seq, model)
        lines = [json.dumps(b.to_dict(), sort_keys=True) for b in boxes]
        (out / f"{name}.boxes.jsonl").write_text("\n".join(lines) + "\n")
    print(f"tracked {len(seqs)} sequences into {out}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    config = load_config(args)
    _, seqs = _dataset(args.data)
    held = _dataset(args.eval_data)[1] if args.eval_data else None
    rows = run_ablation(seqs, config, held)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_table(rows, args.out)
    for row in rows:
        print(f"{row['label']:<26} success {row['success']:.4f} precision {row['precision']:.4f}")
    return EXIT_OK


def cmd_export_maps(args) -> int:
    model = load_model(args.checkpoint, args.variant)
    seq = read_sequence(args.sequence)
    if not 1 <= args.frame < len(seq):
        raise UsageError(f"--frame must lie in [1, {len(seq) - 1}], got {args.frame}")
    tracker = Tracker(model)
    tracker.start(seq.frames[0])
    for frame in seq.frames[1:args.frame]:
        tracker.step(frame)
    trace: dict = {}
    box = tracker.step(seq.frames[args.frame], trace)
    if tracker.state.coasted[-1]:
        raise RuntimeError(f"frame {args.frame}: empty search crop, the tracker coasted; nothing to export")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    arrays = {}
    for key, value in sorted(trace.items()):
        if isinstance(value, list):
            for i, arr in enumerate(value):
                arrays[f"{key}_layer{i}"] = arr
        else:
            arrays[key] = value
    meta = {"variant": model.variant, "frame": args.frame, "sequence": str(args.sequence),
            "predicted_box": box.to_dict(), "layout": "uint32 ndim, uint64[ndim] shape, float64 little-endian",
            "arrays": {}}
    for name, arr in arrays.items():
        write_array(out / f"{name}.bin", arr)
        meta["arrays"][name] = {"file": f"{name}.bin", "shape": list(np.shape(arr))}
    _write_json(out / "maps.json", meta)
    print(f"exported {len(arrays)} arrays to {out}")
    return EXIT_OK


# -- parser ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lttr", description="Point-cloud single-object tracking toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def training_flags(p):
        p.add_argument("--config", help="JSON RunConfig (unknown keys are rejected)")
        p.add_argument("--variant", choices=VARIANTS)
        p.add_argument("--max-steps", dest="max_steps", type=int)
        p.add_argument("--epochs", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--seed", type=int, help="overrides the config and LTTR_SEED")

    p = sub.add_parser("gen", help="write synthetic sequences")
    p.add_argument("--seed", type=int)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--frames", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train a model and write a checkpoint plus loss curve")
    training_flags(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="checkpoint path (index goes to <out>.json)")
    p.add_argument("--curve", help="loss curve CSV (default <out>.loss.csv)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="one-pass evaluation report")
    p.add_argument("--checkpoint")
    p.add_argument("--predictions", help="directory of <sequence>.boxes.jsonl tracks")
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("track", help="write predicted boxes per sequence")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("ablate", help="train and score all four variants")
    training_flags(p)
    p.add_argument("--data", required=True)
    p.add_argument("--eval-data", dest="eval_data", help="held-out sequences (default: training data)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("export-maps", help="dump heatmap, region weights and attention for one frame")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--sequence", required=True)
    p.add_argument("--frame", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_maps)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise UsageError("lttr: a command is required (gen, train, eval, track, ablate, export-maps)")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, KeyError, RuntimeError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
