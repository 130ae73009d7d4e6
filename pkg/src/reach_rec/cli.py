"""``reach-rec`` command line: gen, train, eval and infer.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
Set ``REACH_REC_LOG`` (e.g. ``INFO``, ``DEBUG``) to change the log level.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import __version__
from .data import (
    Clip,
    DataError,
    Hand,
    ReachEvent,
    VideoSequence,
    clips_from_video,
    parse_annotations,
    parse_detections,
    serialize_annotations,
    serialize_detections,
    split_dataset,
)
from .events import (
    CalibrationItem,
    FusionMode,
    FusionPolicy,
    assemble_events,
    assemble_events_from_labels,
    calibrate_threshold,
    event_traces,
    threshold_sweep,
)
from .features import feature_stream
from .metrics import evaluate, format_table
from .nn import ModelFormatError, TrainHyper, count_params, load_model, make_config, predict, save_model, train
from .nn.serialize import FORMAT_VERSION as MODEL_FORMAT_VERSION
from .synth import SynthConfig, SynthConfigError, generate_dataset

log = logging.getLogger("reach_rec")

DETECTIONS = "detections.jsonl"
ANNOTATIONS = "annotations.csv"
DEFAULT_EPOCHS = 10
DEFAULT_SPLIT = (0.60, 0.15, 0.25)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _out_dir(path: str) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {out}: {exc.strerror or exc}") from None
    if not os.access(out, os.W_OK):
        raise DataError(f"output directory {out} is not writable")
    return out


def _parse_split(text: str) -> Tuple[float, float, float]:
    try:
        parts = tuple(float(p) for p in text.split(","))
    except ValueError:
        raise UsageError(f"--split expects three comma-separated numbers, got {text!r}") from None
    if len(parts) != 3 or any(p <= 0 for p in parts) or abs(sum(parts) - 1.0) > 1e-6:
        raise UsageError(f"--split must be three positive fractions summing to 1, got {text!r}")
    return parts


def _detections_path(data: str) -> Path:
    path = Path(data)
    if path.is_dir():
        path = path / DETECTIONS
    if not path.is_file():
        raise DataError(f"detections file not found: {path}")
    return path


def _load_dataset(data: str) -> Tuple[List[VideoSequence], Dict[str, List[ReachEvent]]]:
    det = _detections_path(data)
    ann = det.parent / ANNOTATIONS
    if not ann.is_file():
        raise DataError(f"annotations file not found: {ann}")
    sequences = parse_detections(det.read_bytes())
    events = parse_annotations(ann.read_bytes())
    known = {s.video_id for s in sequences}
    stray = sorted(set(events) - known)
    if stray:
        raise DataError(f"annotations reference unknown video(s): {', '.join(stray[:5])}")
    return sequences, events


def _clips(sequences, events) -> List[Clip]:
    clips = []
    for seq in sorted(sequences, key=lambda s: s.video_id):
        clips.extend(clips_from_video(seq, events.get(seq.video_id, [])))
    return clips


def _policy(args, meta: Optional[dict] = None) -> FusionPolicy:
    meta = meta or {}
    return FusionPolicy(
        mode=args.policy or meta.get("policy", FusionMode.FUSED.value),
        min_duration=meta.get("min_duration", 2),
        score_margin=meta.get("score_margin", 0.0),
        offset_semantics=args.offset_semantics or meta.get("offset_semantics", "touch"),
    )


def _labeled_streams(clips: Sequence[Clip], pairing: str):
    return [(feature_stream(c.sequence, h, pairing), c.labels(h)) for c in clips for h in Hand]


# ---------------------------------------------------------------------------
# commands


def cmd_gen(args) -> int:
    if args.n < 1:
        raise UsageError(f"--n must be at least 1, got {args.n}")
    overrides = {"seed": args.seed}
    if args.jitter_std is not None:
        overrides["jitter_std"] = args.jitter_std
    if args.abort_probability is not None:
        overrides["abort_probability"] = args.abort_probability
    if args.duration is not None:
        overrides["duration_weights"] = ((args.duration, 1.0),)
    cfg = SynthConfig(**overrides)
    out = _out_dir(args.out)
    samples = generate_dataset(cfg, args.n)
    det = out / DETECTIONS
    ann = out / ANNOTATIONS
    try:
        det.write_text(serialize_detections([s.sequence for s in samples]), encoding="utf-8")
        ann.write_text(
            serialize_annotations({s.sequence.video_id: s.truth_events for s in samples}), encoding="utf-8"
        )
    except OSError as exc:
        raise DataError(f"cannot write {exc.filename}: {exc.strerror}") from None
    manifest = {
        "tool": "reach-rec",
        "version": __version__,
        "command": "gen",
        "n": args.n,
        "seed": args.seed,
        "config": cfg.to_dict(),
        "files": {DETECTIONS: _sha256(det), ANNOTATIONS: _sha256(ann)},
    }
    _write_json(out / "synth-manifest.json", manifest)
    n_events = sum(len(s.truth_events) for s in samples)
    print(f"wrote {args.n} sequences with {n_events} reaches to {out}")
    return 0


def cmd_train(args) -> int:
    ratios = _parse_split(args.split)
    sequences, events = _load_dataset(args.data)
    clips = _clips(sequences, events)
    if len(clips) < 3:
        raise DataError(f"need at least 3 clips to split, found {len(clips)}")
    train_clips, val_clips, test_clips = split_dataset(clips, ratios, seed=args.seed)
    if not train_clips:
        raise DataError("training split is empty")
    cfg = make_config(args.model, args.window)
    hyper = TrainHyper(learning_rate=args.lr, epochs=args.epochs, batch_size=args.batch_size, seed=args.seed)
    n_params = count_params(cfg)
    print(f"model {cfg.kind}: {n_params} trainable parameters")

    params, history = train(cfg, _labeled_streams(train_clips, args.pairing),
                            _labeled_streams(val_clips, args.pairing), hyper, seed=args.seed)
    policy = _policy(args)

    items = []
    for clip in val_clips:
        for hand in Hand:
            stream = feature_stream(clip.sequence, hand, args.pairing)
            truth = [(e.onset_frame, e.offset_frame) for e in clip.events if e.hand is hand]
            items.append(CalibrationItem(stream, predict(params, stream), truth))
    sweep = None
    if args.iou_threshold is not None:
        theta = args.iou_threshold
    else:
        if not any(item.truth for item in items):
            raise DataError("validation split holds no reach events; pass --iou-threshold")
        sweep = threshold_sweep(items, policy)
        theta = calibrate_threshold(items, policy)
    print(f"IOU threshold: {theta:g}" + (" (calibrated on validation)" if sweep else " (given)"))

    out = _out_dir(args.out)
    data_hash = _sha256(_detections_path(args.data))
    meta = {
        "iou_threshold": theta,
        "policy": policy.mode.value,
        "offset_semantics": policy.offset_semantics,
        "min_duration": policy.min_duration,
        "score_margin": policy.score_margin,
        "pairing": args.pairing,
        "seed": args.seed,
        "learning_rate": hyper.learning_rate,
        "epochs": hyper.epochs,
        "batch_size": hyper.batch_size,
        "split": list(ratios),
        "detections_sha256": data_hash,
    }
    (out / "model.json").write_bytes(save_model(params, meta=meta))
    _write_json(out / "history.json", history)
    _write_json(out / "split.json", {
        "ratios": list(ratios),
        "seed": args.seed,
        "train": [c.clip_id for c in train_clips],
        "val": [c.clip_id for c in val_clips],
        "test": [c.clip_id for c in test_clips],
    })
    _write_json(out / "train-manifest.json", {
        "tool": "reach-rec",
        "version": __version__,
        "command": "train",
        "model": cfg.kind,
        "model_config": cfg.to_dict(),
        "model_format_version": MODEL_FORMAT_VERSION,
        "n_params": n_params,
        "meta": meta,
        "threshold_sweep": [[t, f] for t, f in sweep] if sweep else None,
        "sizes": {"train": len(train_clips), "val": len(val_clips), "test": len(test_clips)},
    })
    last = history[-1] if history else {}
    print(f"trained {len(history)} epochs; final val accuracy {last.get('val_accuracy', float('nan')):.4f}")
    return 0


def _load_model_file(path: Path):
    if not path.is_file():
        raise DataError(f"model file not found: {path}")
    return load_model(path.read_bytes(), with_meta=True)


def cmd_eval(args) -> int:
    out = Path(args.out)
    model_path = Path(args.model_file) if args.model_file else out / "model.json"
    params, cfg, meta = _load_model_file(model_path)
    split_path = Path(args.split_file) if args.split_file else model_path.parent / "split.json"
    if not split_path.is_file():
        raise DataError(f"split file not found: {split_path}")
    split = json.loads(split_path.read_text(encoding="utf-8"))
    wanted = split.get(args.subset)
    if not isinstance(wanted, list):
        raise DataError(f"split file has no {args.subset!r} list")
    sequences, events = _load_dataset(args.data)
    by_id = {c.clip_id: c for c in _clips(sequences, events)}
    missing = [cid for cid in wanted if cid not in by_id]
    if missing:
        raise DataError(f"{len(missing)} clip(s) of the {args.subset} split are absent from the data, "
                        f"e.g. {missing[0]!r}")
    clips = [by_id[cid] for cid in wanted]
    if not clips:
        raise DataError(f"the {args.subset} split is empty")
    policy = _policy(args, meta)
    theta = args.iou_threshold if args.iou_threshold is not None else meta.get("iou_threshold", 0.05)
    pairing = meta.get("pairing", "sticky")
    report = evaluate(params, theta, clips, policy, pairing)
    doc = report.to_dict()
    doc["run"] = {
        "model": cfg.kind,
        "n_params": count_params(cfg),
        "iou_threshold": theta,
        "policy": policy.mode.value,
        "offset_semantics": policy.offset_semantics,
        "subset": args.subset,
        "n_clips": len(clips),
    }
    _write_json(_out_dir(args.out) / "report.json", doc)
    name = "BabyNet" if cfg.kind == "babynet-lstm" else "MLP"
    print(format_table([(name, count_params(cfg), report)]))
    return 0


def cmd_infer(args) -> int:
    params, cfg, meta = _load_model_file(Path(args.model_file))
    sequences = parse_detections(_detections_path(args.data).read_bytes())
    policy = _policy(args, meta)
    theta = args.iou_threshold if args.iou_threshold is not None else meta.get("iou_threshold", 0.05)
    pairing = meta.get("pairing", "sticky")
    found: Dict[str, List[ReachEvent]] = {}
    traces = []
    for seq in sorted(sequences, key=lambda s: s.video_id):
        video_events = []
        for hand in Hand:
            stream = feature_stream(seq, hand, pairing)
            if stream.n_valid == 0:
                log.warning("video %s: no frames with a %s-hand box and an object; no events",
                            seq.video_id, hand.name.lower())
                continue
            scores = predict(params, stream)
            if policy.mode is FusionMode.SCORES_ONLY:
                evs = assemble_events_from_labels(np.argmax(scores, axis=1), stream, policy.min_duration)
            else:
                evs = assemble_events(scores, stream, theta, policy)
            video_events.extend(event_traces(evs, stream, scores))
        video_events.sort(key=lambda tr: (tr.event.onset_frame, tr.event.hand.value))
        renumbered = []
        for k, tr in enumerate(video_events):
            ev = tr.event
            ev = ReachEvent(ev.hand, ev.object_id, ev.onset_frame, ev.offset_frame, str(k))
            renumbered.append(ev)
            traces.append({"video_id": seq.video_id, "reach_id": ev.reach_id, "hand": ev.hand.value,
                           "object_id": ev.object_id, "onset_frame": ev.onset_frame,
                           "offset_frame": ev.offset_frame, "scores": tr.scores})
        found[seq.video_id] = renumbered
    out = _out_dir(args.out)
    (out / ANNOTATIONS).write_text(serialize_annotations(found), encoding="utf-8")
    with open(out / "events.jsonl", "w", encoding="utf-8") as fh:
        for rec in traces:
            fh.write(json.dumps(rec, sort_keys=True, separators=(",", ":")) + "\n")
    print(f"{len(traces)} events in {len(sequences)} videos written to {out}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="reach-rec", description="Infant reach recognition from bounding-box streams.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def policy_flags(p, with_threshold=True):
        p.add_argument("--policy", choices=[m.value for m in FusionMode], default=None,
                       help="event assembly mode (default: fused, or the one stored in the model)")
        p.add_argument("--offset-semantics", choices=["touch", "literal"], default=None)
        if with_threshold:
            p.add_argument("--iou-threshold", type=float, default=None,
                           help="fixed IOU threshold instead of the calibrated one")

    g = sub.add_parser("gen", help="generate a synthetic dataset")
    g.add_argument("--n", type=int, required=True, help="number of sequences")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--jitter-std", type=float, default=None)
    g.add_argument("--abort-probability", type=float, default=None)
    g.add_argument("--duration", type=int, default=None, help="fix every reach to this many frames")
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train a model and calibrate the IOU threshold")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--model", choices=["babynet", "mlp"], default="babynet")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--epochs", type=int, default=DEFAULT_EPOCHS)
    t.add_argument("--batch-size", type=int, default=1)
    t.add_argument("--window", type=int, default=None)
    t.add_argument("--split", default=",".join(str(r) for r in DEFAULT_SPLIT))
    t.add_argument("--pairing", choices=["sticky", "per_frame"], default="sticky")
    policy_flags(t)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a trained model on its held-out split")
    e.add_argument("--data", required=True)
    e.add_argument("--out", required=True, help="run directory (holds model.json; report.json goes here)")
    e.add_argument("--model-file", default=None)
    e.add_argument("--split-file", default=None)
    e.add_argument("--subset", choices=["train", "val", "test"], default="test")
    policy_flags(e)
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("infer", help="detect reach events in new detections")
    i.add_argument("--data", required=True, help="detections.jsonl or a directory holding it")
    i.add_argument("--model-file", required=True)
    i.add_argument("--out", required=True)
    policy_flags(i)
    i.set_defaults(func=cmd_infer)
    return parser


def _setup_logging() -> None:
    level = os.environ.get("REACH_REC_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv: Optional[Sequence[str]] = None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"reach-rec: usage error: {exc}", file=sys.stderr)
        return 1
    except (DataError, ModelFormatError, SynthConfigError) as exc:
        print(f"reach-rec: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"reach-rec: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        log.debug("internal error", exc_info=True)
        print(f"reach-rec: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
