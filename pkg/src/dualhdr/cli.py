"""Command-line entry point: ``python -m dualhdr <command> ...``.

Commands: simulate, train, infer, evaluate, compare, gradcheck. Every
command accepts ``--config`` (experiment JSON), ``--seed`` and ``--out``.
Failures exit nonzero with a one-line JSON error on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path
from typing import List, Optional

from . import experiment as X


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _common(p: argparse.ArgumentParser, out_required: bool = True) -> None:
    p.add_argument("--config", help="experiment config JSON")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", required=out_required, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dualhdr", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="capture a scene in AE and DCS mode, plus train/val sets")
    _common(p)
    p.add_argument("--scene", help="scene JSON (overrides the config)")
    p.add_argument("--train-groups", type=int, help="synthetic training groups (0 disables)")
    p.add_argument("--val-groups", type=int, help="synthetic validation groups (0 disables)")

    p = sub.add_parser("train", help="train the fusion network")
    _common(p)
    p.add_argument("--data", help="dataset directory from simulate (default: generate in memory)")
    p.add_argument("--resume", help="checkpoint to resume from")
    p.add_argument("--epochs", type=int, help="override training epochs")
    p.add_argument("--lr", type=float, help="override the initial learning rate")

    p = sub.add_parser("infer", help="reconstruct HDR frames for every group of a capture")
    _common(p)
    p.add_argument("--data", required=True, help="capture directory (contains manifest.json)")
    p.add_argument("--checkpoint", help="model checkpoint")
    p.add_argument("--model-config", help="model config JSON (default: sidecar next to the checkpoint)")
    p.add_argument("--naive", action="store_true",
                   help="exposure-compensated primary-camera frames instead of the network")

    p = sub.add_parser("evaluate", help="metrics report for an infer output directory")
    _common(p)
    p.add_argument("--outputs", required=True, help="infer output directory")
    p.add_argument("--data", help="capture directory with ground truth (default: the one used by infer)")

    p = sub.add_parser("compare", help="AE vs DCS luminance stability")
    _common(p)
    p.add_argument("--ae", required=True, help="infer output or capture directory of the AE side")
    p.add_argument("--dcs", required=True, help="infer output or capture directory of the DCS side")

    p = sub.add_parser("gradcheck", help="finite-difference check of every differentiable op")
    _common(p, out_required=False)
    p.add_argument("--ops", help="comma-separated op names (default: all)")
    p.add_argument("--no-end-to-end", action="store_true", help="skip the full-model check")
    p.add_argument("--list", action="store_true", help="list the registered ops and exit")
    return parser


def _config(args) -> X.ExperimentConfig:
    cfg = X.ExperimentConfig.load(args.config) if args.config else X.ExperimentConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _print(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True, default=str))


def _summary(manifest: dict) -> dict:
    return {k: v for k, v in manifest.items() if k not in ("config", "artifacts")}


def run(args) -> int:
    cfg = _config(args)
    if args.command == "simulate":
        if args.scene:
            cfg.scene = args.scene
        if args.train_groups is not None:
            cfg.train_groups = args.train_groups
        if args.val_groups is not None:
            cfg.val_groups = args.val_groups
        _print(_summary(X.run_simulate(cfg, args.out)))
    elif args.command == "train":
        if args.epochs is not None:
            cfg.training.epochs = args.epochs
        if args.lr is not None:
            cfg.training.lr = args.lr
        _print(_summary(X.run_train(cfg, args.out, data=args.data, resume=args.resume)))
    elif args.command == "infer":
        _print(_summary(X.run_infer(args.out, args.data, args.checkpoint, args.model_config, args.naive,
                                    seed=cfg.seed)))
    elif args.command == "evaluate":
        X.run_evaluate(args.out, args.outputs, args.data)
        print((Path(args.out) / "report.json").read_text(), end="")
    elif args.command == "compare":
        X.run_compare(args.out, args.ae, args.dcs)
        res = json.loads((Path(args.out) / "comparison.json").read_text())
        _print({k: res[k] for k in ("n_frames", "lsd_ratio", "warning")}
               | {side: {k: res[side][k] for k in ("lsd", "t_ssim", "l_avg", "fluctuation")}
                  for side in ("ae", "dcs")})
    elif args.command == "gradcheck":
        if args.list:
            print("\n".join(X.OP_CASES))
            return 0
        ops = None
        if args.ops is not None:
            ops = [o.strip() for o in args.ops.split(",") if o.strip()]
        report = X.run_gradcheck(args.out, ops, not args.no_end_to_end, seed=cfg.seed)
        for r in report["ops"]:
            print(f"{'PASS' if r['passed'] else 'FAIL'}  {r['name']:<20s} {r['max_rel_error']:.3e}")
        if report["end_to_end"] is not None:
            e = report["end_to_end"]
            print(f"{'PASS' if e['passed'] else 'FAIL'}  {'end-to-end':<20s} {e['max_rel_error']:.3e}"
                  f"  (worst: {e['worst_parameter']})")
        if report["failed"]:
            raise X.GradcheckFailed(report["failed"])
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(json.dumps({"error": "usage", "message": str(exc)}), file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            code = run(args)
        for w in caught:
            print(json.dumps({"warning": str(w.message)}), file=sys.stderr)
        return code
    except X.GradcheckFailed as exc:
        print(json.dumps({"error": "gradcheck_failed", "message": str(exc), "failed": exc.failed}),
              file=sys.stderr)
        return 1
    except Exception as exc:  # every failure becomes machine-readable
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
