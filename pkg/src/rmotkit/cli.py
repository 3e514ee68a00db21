"""Command-line entry point: ``rmotkit {eval,link,stitch,annotate,stats}``.

Exit codes: 0 on success, 2 when inputs fail validation, 3 when an external
oracle service cannot be reached.

``--config FILE`` reads ``key = value`` lines whose keys are long flag names
of the chosen subcommand (``iou-thr = 0.6``); command-line flags win. Blank
lines and ``#`` comments are ignored.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections import OrderedDict
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from . import __version__
from .codec import CodecError, parse_prediction
from .dataset import (
    DatasetError,
    compute_stats,
    format_stats_table,
    load_annotations,
    load_detections,
    load_predictions,
    predictions_to_dict,
    save_predictions,
)
from .geometry import PredictionSet
from .linker import LinkerConfig, link
from .metrics import EvaluationError, MetricConfig, all_pairs, evaluate
from .stitch import StitchConfig, plan_clips, stitch

logger = logging.getLogger("rmotkit")

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_SERVICE = 3

RAW_TEXT_SEPARATOR = "__"
UNBOUNDED_FRAMES = 10**9


class UsageError(Exception):
    """Bad flag combination or config file, reported with exit code 2."""


# ------------------------------------------------------------------ output helpers


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _canonical_json(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


# ------------------------------------------------------------------ commands


def _read_raw_text(directory: str, videos, bound_by_gt: bool) -> List[PredictionSet]:
    frames_of = {v.video_id: v.num_frames for v in videos}
    preds = []
    paths = sorted(Path(directory).glob("*.txt"))
    if not paths:
        raise UsageError(f"no .txt files in {directory}")
    for path in paths:
        stem = path.stem
        if RAW_TEXT_SEPARATOR not in stem:
            raise UsageError(f"{path.name}: expected '<video_id>{RAW_TEXT_SEPARATOR}<expression_id>.txt'")
        video_id, expression_id = stem.split(RAW_TEXT_SEPARATOR, 1)
        if bound_by_gt:
            if video_id not in frames_of:
                raise UsageError(f"{path.name}: unknown video {video_id!r}")
            num_frames = frames_of[video_id]
        else:
            num_frames = UNBOUNDED_FRAMES
        text = path.read_text(encoding="utf-8")
        try:
            report = parse_prediction(text, num_frames, video_id=video_id, expression_id=expression_id)
        except CodecError as exc:
            # a reply with no object at all is an empty prediction, not a broken file
            logger.warning("%s: %s; treating as no objects", path.name, exc)
            report = None
        if report is None:
            preds.append(PredictionSet(video_id, expression_id, []))
            continue
        for line, msg in report.warnings:
            logger.warning("%s:%d: %s", path.name, line, msg)
        preds.append(report.prediction)
    return preds


def cmd_eval(args: argparse.Namespace) -> int:
    videos = load_annotations(args.gt)
    if args.raw_text:
        preds = _read_raw_text(args.raw_text, videos, args.num_frames_from_gt)
    else:
        preds = load_predictions(args.pred)
    cfg = MetricConfig(clear_iou_threshold=args.iou_thr)
    report = evaluate(all_pairs(videos), preds, cfg, jobs=args.jobs)
    if args.format == "table":
        text = report.format_table()
        if report.flags:
            text += "flags: " + ", ".join(report.flags) + "\n"
    else:
        text = _canonical_json(report.to_dict())
    _emit(text, args.out)
    return EXIT_OK


def cmd_link(args: argparse.Namespace) -> int:
    cfg = LinkerConfig(
        iou_match_threshold=args.iou_threshold,
        max_age=args.max_age,
        min_hits=args.min_hits,
        use_observation_centric_recovery=not args.no_recovery,
    )
    preds = [link(seq.frames, cfg, seq.video_id, seq.expression_id) for seq in load_detections(args.detections)]
    save_predictions(preds, args.out)
    return EXIT_OK


def _parse_plan(text: str):
    try:
        L, O, T = (int(v) for v in text.split(","))
    except ValueError:
        raise UsageError(f"--plan expects 'L,O,T' integers, got {text!r}") from None
    return plan_clips(T, L, O)


def cmd_stitch(args: argparse.Namespace) -> int:
    plan = _parse_plan(args.plan)
    if len(args.clips) != len(plan.ranges):
        raise UsageError(f"plan {args.plan!r} has {len(plan.ranges)} clips but {len(args.clips)} files were given")
    per_clip = [load_predictions(p) for p in args.clips]
    keys: "OrderedDict[tuple, None]" = OrderedDict()
    for clip in per_clip:
        for p in clip:
            keys.setdefault(p.key, None)
    cfg = StitchConfig(boundary_iou_threshold=args.boundary_iou, lookback=args.lookback)
    out = []
    for key in keys:
        clips = []
        for k, clip in enumerate(per_clip):
            found = [p for p in clip if p.key == key]
            if len(found) > 1:
                raise UsageError(f"{args.clips[k]}: pair {key} appears more than once")
            clips.append(found[0] if found else PredictionSet(*key, []))
        merged = stitch(clips, plan, cfg)
        out.append(PredictionSet(key[0], key[1], merged.tracklets))
    save_predictions(out, args.out)
    return EXIT_OK


def cmd_annotate(args: argparse.Namespace) -> int:
    from .annotate.imageio import DirectoryFrameSource
    from .annotate.oracles import HttpOracle, ScriptedOracle
    from .annotate.pipeline import Oracles, PipelineAborted, PipelineConfig, run_pipeline

    videos = load_annotations(args.annotations)
    missing = [v.video_id for v in videos if not v.frame_paths]
    if missing:
        raise UsageError(f"videos without frame_paths: {missing}")
    cfg = PipelineConfig(
        blur_sigma=args.blur_sigma,
        stroke_width=args.stroke_width,
        max_in_flight=args.max_in_flight,
        retries=args.retries,
        retry_backoff=args.retry_backoff,
        seed=args.seed,
        frames_per_query=args.frames_per_query,
        synthesis_rounds=args.synthesis_rounds,
        prompt_dir=args.prompt_dir,
    )
    oracle = ScriptedOracle.from_file(args.mock, seed=args.seed) if args.mock else HttpOracle(args.oracle, timeout=args.timeout)
    audit = args.audit or str(Path(args.out).with_suffix(".audit.jsonl"))
    frames = DirectoryFrameSource(args.frames)
    try:
        result = run_pipeline(videos, frames.load, Oracles.single(oracle), cfg, args.out, audit)
    except PipelineAborted as exc:
        logger.error("%s", exc)
        return EXIT_SERVICE
    kept = sum(c.accepted for c in result.captions)
    logger.info("captions accepted %d/%d, expressions kept %d/%d", kept, len(result.captions),
                sum(c.validated for c in result.candidates), len(result.candidates))
    return EXIT_OK


def cmd_stats(args: argparse.Namespace) -> int:
    stats = compute_stats(load_annotations(args.annotations))
    text = format_stats_table(stats) if args.format == "table" else _canonical_json(stats.to_dict())
    _emit(text, args.out)
    return EXIT_OK


# ------------------------------------------------------------------ parser


def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    """Flags accepted both before and after the subcommand name."""
    p = argparse.ArgumentParser(add_help=False)
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--config", default=d(None), help="key = value file with flag defaults")
    p.add_argument("--jobs", type=int, default=d(1), help="worker processes for evaluation")
    p.add_argument("-v", "--verbose", action="count", default=d(0), help="-v for info, -vv for debug")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rmotkit", description=__doc__.splitlines()[0], parents=[_global_flags(False)])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    common = [_global_flags(True)]

    p = sub.add_parser("eval", parents=common, help="score predictions against annotations")
    p.add_argument("--gt", required=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--pred", help="prediction JSON")
    src.add_argument("--raw-text", help="directory of <video_id>__<expression_id>.txt model replies")
    p.add_argument("--num-frames-from-gt", action="store_true",
                   help="bound raw-text frame numbers by the annotated video length")
    p.add_argument("--iou-thr", type=float, default=0.5, help="CLEAR and identity IoU threshold")
    p.add_argument("--out")
    p.add_argument("--format", choices=("json", "table"), default="json")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("link", parents=common, help="link per-frame detections into tracklets")
    p.add_argument("--detections", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--iou-threshold", type=float, default=0.3)
    p.add_argument("--max-age", type=int, default=10)
    p.add_argument("--min-hits", type=int, default=1)
    p.add_argument("--no-recovery", action="store_true", help="disable gap recovery and backfill")
    p.set_defaults(func=cmd_link)

    p = sub.add_parser("stitch", parents=common, help="merge per-clip predictions")
    p.add_argument("--clips", nargs="+", required=True, help="one prediction file per clip, in clip order")
    p.add_argument("--plan", required=True, help="clip length, overlap and video length as 'L,O,T'")
    p.add_argument("--out", required=True)
    p.add_argument("--boundary-iou", type=float, default=0.5)
    p.add_argument("--lookback", type=int, default=3)
    p.set_defaults(func=cmd_stitch)

    p = sub.add_parser("annotate", parents=common, help="generate expressions with oracle models")
    p.add_argument("--annotations", required=True)
    p.add_argument("--frames", required=True, help="root directory that frame_paths are relative to")
    backend = p.add_mutually_exclusive_group(required=True)
    backend.add_argument("--oracle", help="HTTP endpoint URL")
    backend.add_argument("--mock", help="scripted oracle JSON file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--audit", help="audit JSONL path (default: <out>.audit.jsonl)")
    p.add_argument("--timeout", type=float, default=60.0, help="HTTP timeout in seconds")
    p.add_argument("--blur-sigma", type=float, default=8.0)
    p.add_argument("--stroke-width", type=int, default=3)
    p.add_argument("--max-in-flight", type=int, default=4)
    p.add_argument("--retries", type=int, default=2)
    p.add_argument("--retry-backoff", type=float, default=0.5)
    p.add_argument("--frames-per-query", type=int, default=4)
    p.add_argument("--synthesis-rounds", type=int, default=2)
    p.add_argument("--prompt-dir", help="directory of prompt templates overriding the packaged ones")
    p.set_defaults(func=cmd_annotate)

    p = sub.add_parser("stats", parents=common, help="dataset statistics")
    p.add_argument("--annotations", required=True)
    p.add_argument("--format", choices=("json", "table"), default="table")
    p.add_argument("--out")
    p.set_defaults(func=cmd_stats)
    return parser


def read_config(path: str) -> Dict[str, str]:
    out = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.lstrip("-")] = value
    return out


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _config_defaults(sub: argparse.ArgumentParser, values: Dict[str, str], path: str) -> Dict[str, object]:
    """Map config keys onto the subcommand's options; argparse applies ``type`` to string defaults."""
    by_flag = {}
    for action in sub._actions:
        for opt in action.option_strings:
            if opt.startswith("--"):
                by_flag[opt[2:]] = action
    defaults: Dict[str, object] = {}
    for key, value in values.items():
        action = by_flag.get(key) or by_flag.get(key.replace("_", "-"))
        if action is None or action.dest in ("config", "help"):
            raise UsageError(f"{path}: unknown key {key!r} for this command")
        if isinstance(action, argparse._StoreTrueAction):
            low = value.lower()
            if low not in _TRUE | _FALSE:
                raise UsageError(f"{path}: {key} expects true/false, got {value!r}")
            defaults[action.dest] = low in _TRUE
        elif action.nargs == "+":
            defaults[action.dest] = value.split()
        elif action.type is not None:
            try:
                defaults[action.dest] = action.type(value)
            except ValueError:
                raise UsageError(f"{path}: bad value for {key}: {value!r}") from None
        else:
            defaults[action.dest] = value
    return defaults


def parse_args(argv: Optional[Sequence[str]]) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        subparsers = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
        sub = subparsers.choices[args.command]
        sub.set_defaults(**_config_defaults(sub, read_config(args.config), args.config))
        args = parser.parse_args(argv)
    return args


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = parse_args(argv)
    except UsageError as exc:
        print(f"rmotkit: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"rmotkit: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except SystemExit as exc:  # argparse usage errors already exit with 2
        return int(exc.code or 0)
    logging.basicConfig(
        level=(logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)],
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except EvaluationError as exc:
        for problem in exc.problems:
            print(f"rmotkit: {problem}", file=sys.stderr)
        return EXIT_INVALID
    except (UsageError, DatasetError, CodecError, ValueError, OSError) as exc:
        print(f"rmotkit: error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
