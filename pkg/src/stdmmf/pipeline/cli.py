"""Command line: ``stdmmf train|infer|eval|export-overlay``."""
import argparse
import json
import logging
import sys
from pathlib import Path

from .checkpoint import load_checkpoint
from .config import TrainConfig, format_config, load_config
from .data import load_dataset
from .evaluate import evaluate
from .infer import export_overlays, infer
from .train import train

ABLATIONS = ("disable_temporal", "disable_ila", "disable_ilw", "disable_bma")


def _train(args):
    config = load_config(args.config) if args.config else TrainConfig()
    flags = {name: True for name in ABLATIONS if getattr(args, name)}
    if flags:
        config = config.replace(**flags)
    dataset = load_dataset(args.data, "train")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(format_config(config))
    result = train(config, dataset, out_dir=out, deterministic=args.deterministic)
    with open(out / "train_log.jsonl", "w", encoding="utf-8") as fh:
        for entry in result.history:
            fh.write(json.dumps(entry) + "\n")
    print(f"trained {len(result.history)} steps; checkpoints in {out}")
    return 0


def _infer(args):
    dataset = load_dataset(args.data, "test", require_gt=False)
    written = infer(load_checkpoint(args.checkpoint), dataset, args.out, overlay_frames=args.overlay)
    print(f"wrote {len(written)} maps to {args.out}")
    return 0


def _eval(args):
    result = evaluate(args.pred, args.gt, mean_f_mode=args.mean_f)
    print(result.report.to_table())
    if args.report:
        Path(args.report).write_text(result.report.to_text())
    if not result.complete:
        print(f"unmatched: {len(result.unmatched_pred)} predictions, "
              f"{len(result.unmatched_gt)} ground-truth maps", file=sys.stderr)
        for key in result.unmatched_pred + result.unmatched_gt:
            print(f"  {key}", file=sys.stderr)
        return 2
    return 0


def _export(args):
    written, missing = export_overlays(args.pred, args.frames, args.out)
    print(f"wrote {len(written)} overlays to {args.out}")
    return 2 if missing else 0


def build_parser():
    parser = argparse.ArgumentParser(prog="stdmmf", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--deterministic", action="store_true")
    for name in ABLATIONS:
        p.add_argument("--" + name.replace("_", "-"), dest=name, action="store_true")
    p.set_defaults(func=_train)

    p = sub.add_parser("infer", help="write saliency maps")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--overlay", action="store_true")
    p.set_defaults(func=_infer)

    p = sub.add_parser("eval", help="score saliency maps")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--report")
    p.add_argument("--mean-f", choices=("curve", "adaptive"), default="curve")
    p.set_defaults(func=_eval)

    p = sub.add_parser("export-overlay", help="blend saliency maps onto frames")
    p.add_argument("--pred", required=True)
    p.add_argument("--frames", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_export)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
