"""Command-line entry point.

Exit codes: 0 success, 1 usage/configuration error, 2 data error, 3 numeric
failure.  Every subcommand accepts ``--preset``, ``--config`` and ``--seed``.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import time
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import __version__
from . import checkpoint as ckpt_io
from .checks import format_results, run_gradchecks
from .config import PRESETS, VARIANTS, RunConfig, load_config, preset
from .data import DataError, PNMError, list_sample_dirs, load_pnm, load_sample, save_pnm, save_sample, synthesize_sample
from .metrics import EvalReport, evaluate
from .tensor import ConfigError, DimensionError, NumericError

log = logging.getLogger("focalsod")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
PANEL_LIMIT = 8


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--preset", choices=sorted(PRESETS), default="toy", help="base configuration (default: toy)")
    p.add_argument("--config", type=Path, help="JSON file overlaid on the preset")
    p.add_argument("--seed", type=int, help="seed for initialization, training order and synthesis")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="focalsod", description="Guided focal-stack refinement for light-field saliency.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", parents=[common], help="train a model and write checkpoints")
    p.add_argument("--data", type=Path, help="dataset directory (default: synthesize per config)")
    p.add_argument("--checkpoint", type=Path, help="checkpoint path (default: io.checkpoint)")
    p.add_argument("--report-dir", type=Path, help="where to write the loss log and figures")
    p.add_argument("--iterations", type=int, help="stop after this many iterations")

    p = sub.add_parser("infer", parents=[common], help="write final saliency maps as 8-bit PGM")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True, help="dataset directory of samples")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("eval", parents=[common], help="score predicted maps against ground truth")
    p.add_argument("--pred", type=Path, required=True, help="directory of <id>.pgm predictions")
    p.add_argument("--gt", type=Path, required=True, help="dataset directory or directory of <id>.pgm maps")
    p.add_argument("--report-dir", type=Path, help="where to write eval.json, eval.txt and eval.png")

    sub.add_parser("gradcheck", parents=[common], help="finite-difference check of every block")

    p = sub.add_parser("synth", parents=[common], help="write synthetic light-field samples")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--count", type=int)
    p.add_argument("--slices", type=int)
    p.add_argument("--size", type=int)

    p = sub.add_parser("ablate", parents=[common], help="train variants under matched settings and compare")
    p.add_argument("--variants", default="M0,Full", help=f"comma-separated names from {','.join(VARIANTS)}")
    p.add_argument("--data", type=Path)
    p.add_argument("--iterations", type=int)
    p.add_argument("--report-dir", type=Path)
    return parser


def resolve_config(args) -> RunConfig:
    cfg = preset(args.preset)
    if args.config is not None:
        cfg = load_config(args.config, cfg)
    if args.seed is not None:
        cfg.model.seed = args.seed
        cfg.train.seed = args.seed
        cfg.data.shuffle_seed = args.seed
    if getattr(args, "data", None) is not None:
        cfg.data.path = str(args.data)
    if getattr(args, "iterations", None) is not None:
        cfg.train.max_iterations = args.iterations
    return cfg.validate()


def _report_dir(args, cfg: RunConfig) -> Path:
    d = getattr(args, "report_dir", None) or Path(cfg.io.report_dir)
    d.mkdir(parents=True, exist_ok=True)
    return d


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    from .train import train

    cfg = resolve_config(args)
    ckpt = args.checkpoint or Path(cfg.io.checkpoint)
    out = _report_dir(args, cfg)
    rows = []
    t0 = time.perf_counter()

    def on_iteration(it, epoch, loss):
        rows.append((it, epoch, loss))
        log.info("iter %d epoch %d loss %.5f", it, epoch, loss)

    res = train(cfg, checkpoint_path=str(ckpt), on_iteration=on_iteration)
    with open(out / "train_log.tsv", "w") as f:
        f.write("iteration\tepoch\tlr\tloss\n")
        for (it, epoch, loss), lr in zip(rows, res.lrs):
            f.write(f"{it}\t{epoch}\t{lr:.6g}\t{loss:.6f}\n")
    summary = {"iterations": res.iterations, "initial_loss": res.losses[0], "final_loss": res.losses[-1],
               "seconds": round(time.perf_counter() - t0, 2), "checkpoint": str(ckpt)}
    (out / "train_summary.json").write_text(json.dumps(summary, indent=2))
    if cfg.io.figures:
        from .plotting import training_curves
        training_curves(res.losses, res.lrs, out / "training_curves.png")
    print(f"trained {res.iterations} iterations: loss {res.losses[0]:.4f} -> {res.losses[-1]:.4f}; checkpoint {ckpt}")
    return EXIT_OK


def cmd_infer(args) -> int:
    from .train import predict, restore

    explicit = resolve_config(args) if args.config is not None else None
    cfg, model, _ = restore(args.checkpoint, explicit)
    args.out.mkdir(parents=True, exist_ok=True)
    n = 0
    for d in list_sample_dirs(args.data):
        sample = load_sample(d, cfg.model.slices)
        size = cfg.model.encoder.input_size
        if sample.size != (size, size):
            raise DataError(f"sample {sample.id} is {sample.size[0]}x{sample.size[1]}, model expects {size}x{size}")
        save_pnm(predict(model, sample)[None], args.out / f"{sample.id}.pgm")
        n += 1
    print(f"wrote {n} saliency maps to {args.out}")
    return EXIT_OK


def _gt_path(gt_root: Path, sid: str) -> Optional[Path]:
    for cand in (gt_root / sid / "gt.pgm", gt_root / f"{sid}.pgm"):
        if cand.is_file():
            return cand
    return None


def cmd_eval(args) -> int:
    cfg = resolve_config(args)
    if not args.pred.is_dir():
        raise DataError(f"prediction directory {args.pred} does not exist")
    preds = sorted(args.pred.glob("*.pgm"))
    if not preds:
        raise DataError(f"no .pgm predictions in {args.pred}")
    missing = [p.stem for p in preds if _gt_path(args.gt, p.stem) is None]
    if missing:
        raise DataError(f"no ground truth for ids: {', '.join(missing)}")
    pairs = [(p.stem, load_pnm(p)[0], load_pnm(_gt_path(args.gt, p.stem))[0]) for p in preds]
    report = evaluate(pairs)
    out = _report_dir(args, cfg)
    (out / "eval.json").write_text(report.to_json())
    (out / "eval.txt").write_text(report.to_text() + "\n")
    if cfg.io.figures:
        from .plotting import metric_bars, saliency_panel
        metric_bars({"mean": report.row()}, out / "eval.png", "evaluation")
        for sid, pred, gt in pairs[:PANEL_LIMIT]:
            saliency_panel([pred, gt], [f"{sid} prediction", "ground truth"], out / "panels" / f"{sid}.png")
    print(report.to_text())
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    seed = args.seed if args.seed is not None else 0
    results = run_gradchecks(seed)
    print(format_results(results))
    failed = [r.block for r in results if not r.passed]
    if failed:
        print(f"gradient check failed for: {', '.join(failed)}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_synth(args) -> int:
    cfg = resolve_config(args)
    spec = cfg.data.synth
    overrides = {k: v for k, v in (("count", args.count), ("slices", args.slices), ("size", args.size)) if v is not None}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if "slices" in overrides and spec.focal_depths is not None:
        overrides["focal_depths"] = None
    spec = dataclasses.replace(spec, **overrides)
    spec.validate()
    for i in range(spec.count):
        save_sample(synthesize_sample(spec, i), args.out)
    print(f"wrote {spec.count} samples with {spec.slices} slices to {args.out}")
    return EXIT_OK


def format_ablation(rows) -> str:
    lines = ["variant\tparams\t" + "\t".join(EvalReport.COLUMNS) + "\tfinal_loss"]
    for r in rows:
        vals = "\t".join(f"{v:.4f}" for v in r.report.row().values())
        lines.append(f"{r.name}\t{r.num_parameters}\t{vals}\t{r.final_loss:.4f}")
    return "\n".join(lines)


def cmd_ablate(args) -> int:
    from .config import variant
    from .train import run_ablation

    cfg = resolve_config(args)
    names = [n.strip() for n in args.variants.split(",") if n.strip()]
    for n in names:
        variant(n)
    rows = run_ablation(cfg, names)
    out = _report_dir(args, cfg)
    text = format_ablation(rows)
    (out / "ablation.txt").write_text(text + "\n")
    (out / "ablation.json").write_text(json.dumps(
        [{"variant": r.name, "params": r.num_parameters, "final_loss": r.final_loss, **r.report.row()} for r in rows],
        indent=2))
    if cfg.io.figures:
        from .plotting import metric_bars
        metric_bars({r.name: r.report.row() for r in rows}, out / "ablation.png", "training-set scores")
    print(text)
    return EXIT_OK


COMMANDS = {"train": cmd_train, "infer": cmd_infer, "eval": cmd_eval, "gradcheck": cmd_gradcheck,
            "synth": cmd_synth, "ablate": cmd_ablate}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    np.seterr(all="ignore")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, PNMError, ckpt_io.CheckpointError, DimensionError, FileNotFoundError, KeyError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except OSError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
