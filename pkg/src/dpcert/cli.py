"""Command-line entry point: ``dpcert train|certify|metrics|analyze|attack``."""

import argparse
import json
import logging
import sys
import warnings
from dataclasses import replace
from pathlib import Path

from dpcert import checkpoint as ckpt_io
from dpcert import config as config_io
from dpcert import pipeline
from dpcert.errors import ConfigError, DpCertError

COMMANDS = ("train", "certify", "metrics", "analyze", "attack")


def build_parser():
    parser = argparse.ArgumentParser(prog="dpcert", description="DP training with certified-robustness evaluation.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True,
                       help=f"JSON config path, or a preset name ({', '.join(config_io.PRESETS)})")
        p.add_argument("--checkpoint", help="checkpoint path (default: <out>/checkpoint.json)")
        p.add_argument("--out", help="output directory (default: the config's output_dir)")
        p.add_argument("--seed", type=int, help="override the training seed")
    return parser


def resolve_config(arg, seed=None):
    path = Path(arg)
    if path.exists() or arg not in config_io.PRESETS:
        cfg = config_io.load(path)
    else:
        cfg = config_io.preset(arg)
    if seed is not None:
        if not 0 <= seed < 2**64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        cfg = replace(cfg, training=replace(cfg.training, seed=seed))
    return cfg


def _emit(doc):
    print(json.dumps(doc, indent=2, sort_keys=True))


def run(args):
    cfg = resolve_config(args.config, args.seed)
    out = Path(args.out or cfg.output_dir)
    ckpt_path = Path(args.checkpoint) if args.checkpoint else out / pipeline.CHECKPOINT
    if args.command == "train":
        res = pipeline.run_train(cfg, out)
        c = res.checkpoint
        _emit({"checkpoint": str(out / pipeline.CHECKPOINT), "steps": c.steps,
               "noise_multiplier": c.noise_multiplier, "epsilon": res.log[-1]["epsilon"], "delta": c.delta})
    elif args.command == "certify":
        _, summary = pipeline.run_certify(cfg, ckpt_io.load(ckpt_path), out)
        _emit(summary)
    elif args.command == "metrics":
        samples = pipeline.run_metrics(cfg, ckpt_io.load(ckpt_path), out)
        _emit({"metrics_csv": str(out / pipeline.METRICS_CSV), "count": len(samples)})
    elif args.command == "analyze":
        _emit(pipeline.run_analyze(cfg, out)["spearman"])
    elif args.command == "attack":
        accs = pipeline.run_attack(cfg, ckpt_io.load(ckpt_path), out)
        _emit({repr(s): a for s, a in accs.items()})


def main(argv=None):
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    logging.captureWarnings(True)
    args = build_parser().parse_args(argv)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("always")
            run(args)
    except DpCertError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
