# main.py
# CLI entry point

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from dotenv import load_dotenv

from bench import run_bench
from controller import Pipeline, apply_ablations, load_weights, param_specs
from detection.gradcheck import check_dvr_gradients
from detection.loss import fit_box
from detection.metrics import evaluate, group_by_frame, write_pr_csv
from guardrails import ConfigError, StorageError, TridosError
from network.weights import WeightStore
from schemas.boxes import BBox
from schemas.config import PipelineConfig, load_config
from synth.generator import render
from synth.sequence_io import frame_paths, read_annotations, read_records, sequence_dirs, write_records, write_sequence

logger = logging.getLogger("tridos")


class _Parser(argparse.ArgumentParser):
    """argparse exits with status 2 on bad flags; those are validation failures here."""

    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def _configure_logging(verbosity: int) -> None:
    level = os.getenv("TRIDOS_LOG_LEVEL", "WARNING").upper()
    if verbosity == 1:
        level = "INFO"
    elif verbosity >= 2:
        level = "DEBUG"
    if level not in logging.getLevelNamesMapping():
        raise ConfigError(f"unknown log level {level!r}")
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s", force=True)


def _box_arg(text: str) -> BBox:
    try:
        cx, cy, w, h = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected cx,cy,w,h, got {text!r}")
    return BBox(cx=cx, cy=cy, w=w, h=h)


def _config(args) -> PipelineConfig:
    cfg = load_config(args.config)
    if getattr(args, "workers", None):
        cfg = cfg.model_copy(update={"workers": args.workers})
    return cfg


# ---------------- commands ---------------- #

def cmd_synth(args) -> int:
    cfg = _config(args)
    scene = cfg.scene
    if args.seed is not None:
        scene = scene.model_copy(update={"seed": args.seed})
    if scene.frames != cfg.window:
        logger.warning("scene renders %d frames per sequence but the pipeline window is T=%d",
                       scene.frames, cfg.window)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise StorageError(f"cannot create output directory: {e.strerror or e}", out)
    for k in range(args.windows):
        rendered = render(scene, k)
        write_sequence(out / f"seq_{k}", rendered.frames, rendered.boxes, f"seq_{k}")
    print(f"wrote {args.windows} sequences to {out}")
    return 0


def cmd_forward(args) -> int:
    cfg = apply_ablations(_config(args), args.no_msrm, args.no_tdem, args.no_lgfm, args.rcu)
    pipeline = Pipeline.from_source(cfg, args.weights)
    records = []
    for directory in sequence_dirs(args.seq):
        records.extend(pipeline.run_sequence(directory))
    write_records(args.out, records)
    total = sum(len(r.boxes) for r in records)
    print(f"{len(records)} keyframes, {total} detections -> {args.out}")
    return 0


def _keyframe_gts(root: Path, window: int) -> Dict[Tuple[str, int], List[BBox]]:
    """Ground truth of every keyframe (frame_id >= window - 1) under `root`."""
    gts = {}
    for directory in sequence_dirs(root):
        annotations = read_annotations(directory)
        for k in range(window - 1, len(frame_paths(directory))):
            gts[(directory.name, k)] = annotations.get(k, [])
    return gts


def cmd_eval(args) -> int:
    cfg = _config(args)
    iou = args.iou if args.iou is not None else cfg.eval.iou
    if not 0.0 < iou <= 1.0:
        raise ConfigError(f"--iou must lie in (0, 1], got {iou}")
    gts = _keyframe_gts(Path(args.gt), cfg.window)
    preds = group_by_frame(read_records(args.det))
    names = {name for name, _ in gts}
    if len(names) == 1:
        (only,) = names
        anonymous = {(only, fid): boxes for (name, fid), boxes in preds.items() if not name}
        preds = {key: boxes for key, boxes in preds.items() if key[0]}
        for key, boxes in anonymous.items():
            preds.setdefault(key, []).extend(boxes)
    result = evaluate(preds, gts, iou)
    print(result.summary())
    if args.pr:
        write_pr_csv(Path(args.pr), result.pr_points)
    return 0


def cmd_gradcheck(args) -> int:
    cfg = _config(args)
    report = check_dvr_gradients(args.cases, args.seed, cfg.loss)
    print(f"max relative error {report.max_rel_err:.3e} over {report.cases} cases "
          f"(worst case {report.worst_case}, tolerance {report.tolerance:g})")
    return 0 if report.passed else 1


def cmd_fitbox(args) -> int:
    cfg = _config(args)
    result = fit_box(args.init, args.target, cfg.loss, steps=args.steps, lr=args.lr)
    for step, (box, loss) in enumerate(zip(result.trajectory, result.losses)):
        print(f"{step:5d}  cx={box.cx:.4f} cy={box.cy:.4f} w={box.w:.4f} h={box.h:.4f}  loss={loss:.6g}")
    final, target = result.final, args.target
    error = max(abs(a - b) for a, b in zip(final.params(), target.params()))
    print(f"steps: {result.steps}, final loss: {result.losses[-1]:.6g}, max |param error|: {error:.6g}")
    return 0


def cmd_bench(args) -> int:
    result = run_bench(args.op, args.size, args.repeat, _config(args))
    print(result.summary())
    return 0


def cmd_params(args) -> int:
    cfg = apply_ablations(_config(args), args.no_msrm, args.no_tdem, args.no_lgfm, args.rcu)
    weights = load_weights(args.weights, cfg)
    for module, count in weights.params_by_module().items():
        print(f"{module:10s} {count / 1e6:8.4f} M")
    print(f"{'total':10s} {weights.num_params() / 1e6:8.4f} M")
    return 0


def cmd_weights(args) -> int:
    cfg = _config(args)
    weights = WeightStore.random(param_specs(cfg), args.seed)
    weights.save(args.out)
    print(f"{len(weights)} tensors, {weights.num_params()} parameters -> {args.out}")
    return 0


# ---------------- parser ---------------- #

def _add_ablations(p: argparse.ArgumentParser) -> None:
    p.add_argument("--no-msrm", action="store_true", help="Skip the spatial relation module")
    p.add_argument("--no-tdem", action="store_true", help="Skip the temporal difference module")
    p.add_argument("--no-lgfm", action="store_true", help="Skip the frequency fusion module and the RCU tree")
    p.add_argument("--rcu", choices=["none", "a", "b", "c"], default=None, help="RCU tree variant")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tridos", description="Multi-frame infrared small target detection")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v for INFO, -vv for DEBUG")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="Render synthetic sequences")
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--windows", type=int, default=1)
    p.add_argument("--seed", type=int, default=None, help="Override the scene seed")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("forward", help="Detect targets in stored sequences")
    p.add_argument("--config", default=None)
    p.add_argument("--weights", required=True, help="TRDW file or random:SEED")
    p.add_argument("--seq", required=True, help="A sequence directory or a directory of seq_* sequences")
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=None)
    _add_ablations(p)
    p.set_defaults(func=cmd_forward)

    p = sub.add_parser("eval", help="Score detections against ground truth")
    p.add_argument("--config", default=None)
    p.add_argument("--det", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--iou", type=float, default=None)
    p.add_argument("--pr", default=None, help="Write the PR curve as CSV")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="Check regression-loss gradients by finite differences")
    p.add_argument("--config", default=None)
    p.add_argument("--cases", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("fitbox", help="Fit one box to a target by gradient descent")
    p.add_argument("--config", default=None)
    p.add_argument("--init", type=_box_arg, required=True, help="cx,cy,w,h")
    p.add_argument("--target", type=_box_arg, required=True, help="cx,cy,w,h")
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--lr", type=float, default=0.5)
    p.set_defaults(func=cmd_fitbox)

    p = sub.add_parser("bench", help="Time one operation")
    p.add_argument("--config", default=None)
    p.add_argument("--op", choices=["fft", "conv", "attn", "forward"], default="fft")
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--repeat", type=int, default=5)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("params", help="Parameter counts per module")
    p.add_argument("--config", default=None)
    p.add_argument("--weights", default="random:0")
    _add_ablations(p)
    p.set_defaults(func=cmd_params)

    p = sub.add_parser("weights", help="Write seeded random weights")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_weights)

    return parser


def _check_counts(args) -> None:
    for name in ("windows", "cases", "steps", "repeat", "size", "workers"):
        value = getattr(args, name, None)
        if value is not None and value < (0 if name in ("windows", "steps") else 1):
            raise ConfigError(f"--{name} must be positive, got {value}")


def main(argv: Optional[Sequence[str]] = None) -> int:
    load_dotenv()
    try:
        args = build_parser().parse_args(argv)
        _configure_logging(args.verbose)
        _check_counts(args)
        return args.func(args)
    except TridosError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
