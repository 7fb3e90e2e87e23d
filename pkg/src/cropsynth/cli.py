"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 data validation error,
4 numeric divergence during training.
"""
import argparse
import logging
import sys

from . import pipeline
from .errors import ConfigError, CropSynthError

SUBCOMMANDS = ("calibrate", "generate", "featurize", "train", "eval", "report")


def build_parser():
    p = argparse.ArgumentParser(prog="cropsynth", description="Synthetic crop-progress experiments.")
    p.add_argument("--config", required=True, help="experiment JSON file")
    p.add_argument("--seed", type=int, help="root seed (overrides swg.seed)")
    p.add_argument("--out", help="output root (overrides paths.output)")
    p.add_argument("--jobs", type=int, help="worker processes for generation")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        s = sub.add_parser(name)
        if name in ("train", "eval"):
            s.add_argument("--combination", action="append",
                           help="training combination; repeatable, defaults to the config list")
    return p


def _combinations(cfg, args):
    return args.combination or list(cfg.combinations)


def _print_row(row):
    cols = " ".join(f"{k}={row[k]:.5f}" for k in ("train_loss", "vl", "vl_usur", "vl_asyn", "criterion") if k in row)
    print(f"  epoch {row['epoch']:3d} {cols}", flush=True)


def run(args):
    cfg = pipeline.load_config(args.config, {"seed": args.seed, "output": args.out, "jobs": args.jobs})
    if args.command == "calibrate":
        diag = pipeline.run_calibrate(cfg)
        for zone, d in diag.items():
            failed = f", failed: {sorted(d['failed'])}" if d["failed"] else ""
            print(f"{zone}: calibrated {len(d['stations'])} station(s){failed}")
    elif args.command == "generate":
        manifest, datasets = pipeline.run_generate(cfg)
        print(f"wrote {len(datasets)} synthetic datasets; manifest {manifest}")
    elif args.command == "featurize":
        manifest, datasets = pipeline.run_featurize(cfg)
        print(f"wrote {len(datasets)} surveyed datasets; manifest {manifest}")
    elif args.command == "train":
        for combo in _combinations(cfg, args):
            print(f"training {combo}", flush=True)
            r = pipeline.run_train(cfg, combo, progress=_print_row)
            print(f"{combo}: selected epoch {r.selected_epoch} ({r.criterion}, {r.divergence_mode})")
    elif args.command == "eval":
        for combo in _combinations(cfg, args):
            rep = pipeline.run_eval(cfg, combo)
            print(f"{combo}: overall net F1 {rep.overall():.4f}")
    elif args.command == "report":
        path, rows = pipeline.run_report(cfg)
        print(path.read_text(), end="")
    else:  # pragma: no cover - argparse rejects unknown commands
        raise ConfigError(f"unknown command {args.command}")


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        run(args)
    except CropSynthError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
