"""Command line: ``evflow gen | train | eval | viz``.

Exit codes: 0 success, 2 configuration error, 3 numerical abort.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import config as config_mod
from .data import SyntheticSource, open_dataset, windows, write_sequence
from .encoder import ConfigError
from .evaluate import evaluate
from .model import predict_sequence
from .synth import generate, read_flow, translation_scene
from .train import DataConfig, NumericalAbort, load_checkpoint, train
from .viz import visualize_flow

log = logging.getLogger("evflow")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3


def _pair(kind):
    def parse(s):
        parts = s.replace("x", ",").split(",")
        if len(parts) != 2:
            raise argparse.ArgumentTypeError(f"expected two comma-separated values, got {s!r}")
        return tuple(kind(p) for p in parts)

    return parse


def _seed(default: int) -> int:
    env = os.environ.get(config_mod.SEED_ENV)
    if not env:
        return default
    try:
        return int(env)
    except ValueError:
        raise ConfigError(f"{config_mod.SEED_ENV} must be an integer, got {env!r}") from None


def cmd_gen(args) -> int:
    seed = _seed(args.seed)
    data = DataConfig(
        sensor_size=args.sensor,
        interval=args.interval,
        max_displacement=args.max_displacement,
        num_objects=args.objects,
        events_per_volume=args.events_per_volume,
    )
    rng = np.random.default_rng(seed)
    out = Path(args.out)
    for i in range(args.sequences):
        flow = args.flow or tuple(rng.uniform(-data.max_displacement, data.max_displacement, size=2))
        spec = translation_scene(
            rng,
            sensor_size=data.sensor_size,
            flow_per_volume=flow,
            interval=data.interval,
            num_volumes=args.volumes,
            num_objects=data.num_objects,
            events_per_volume=data.events_per_volume,
            dipole=data.dipole,
            subpixel=not args.integer,
        )
        source = SyntheticSource(f"seq_{i:04d}", generate(spec), data.interval, args.volumes)
        write_sequence(out / source.name, source, text=False if args.binary else None)
        log.info("wrote %s (flow %.2f, %.2f px/volume)", out / source.name, *flow)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = config_mod.load(args.config) if args.config else config_mod.build({})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(config_mod.dump(cfg))
    sequences = None
    if cfg.dataset:
        sources = open_dataset(cfg.dataset)
        sequences = [w for s in sources for w in windows(s.volumes(), cfg.sequence_length)]
        if not sequences:
            raise ConfigError(f"{cfg.dataset}: no sequence has {cfg.sequence_length} volumes")
    log.info("training %s profile, seed %d", cfg.profile, cfg.seed)

    def progress(step, loss):
        if step % args.log_every == 0:
            log.info("step %d loss %.4f", step, loss)

    train(cfg, sequences, log_path=out / "loss.csv", checkpoint_path=out / "checkpoint.pt", progress=progress)
    log.info("saved %s", out / "checkpoint.pt")
    return EXIT_OK


def cmd_eval(args) -> int:
    model, *_ = load_checkpoint(args.checkpoint)
    report = evaluate(model, open_dataset(args.dataset), args.interval_multiplier)
    report.write_csv(args.out)
    summary = report.summary()
    if not report.has_ground_truth:
        log.info("no ground truth found: reporting FWL and RSAT only")
    print(json.dumps({k: v for k, v in summary.items()}, indent=2))
    return EXIT_OK


def cmd_viz(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.flow:
        for path in args.flow:
            gt = read_flow(path)
            visualize_flow(gt.chw, out / (Path(path).stem + ".png"))
        return EXIT_OK
    if not (args.checkpoint and args.dataset):
        raise ConfigError("viz needs --flow files, or --checkpoint with --dataset")
    model, *_ = load_checkpoint(args.checkpoint)
    for source in open_dataset(args.dataset):
        for k, flow in enumerate(predict_sequence(model, source.volumes(args.interval_multiplier))):
            visualize_flow(flow, out / f"{source.name}_{k:04d}.png")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="evflow", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="write synthetic constant-flow sequences with ground truth")
    g.add_argument("out")
    g.add_argument("--sequences", type=int, default=10)
    g.add_argument("--volumes", type=int, default=10)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--sensor", type=_pair(int), default=(64, 64), help="H,W")
    g.add_argument("--interval", type=float, default=0.05)
    g.add_argument("--flow", type=_pair(float), help="fixed flow in px/volume (default: random)")
    g.add_argument("--max-displacement", type=float, default=3.0)
    g.add_argument("--objects", type=int, default=30)
    g.add_argument("--events-per-volume", type=float, default=12.0)
    g.add_argument("--integer", action="store_true", help="round event positions to pixels")
    g.add_argument("--binary", action="store_true", help="binary event files (integer pixels)")
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train from a config file")
    t.add_argument("config", nargs="?")
    t.add_argument("--out", default="run")
    t.add_argument("--log-every", type=int, default=50)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a checkpoint on a dataset directory")
    e.add_argument("checkpoint")
    e.add_argument("dataset")
    e.add_argument("--out", default="metrics.csv")
    e.add_argument("--interval-multiplier", type=int, choices=(1, 4), default=1)
    e.set_defaults(func=cmd_eval)

    v = sub.add_parser("viz", help="render flows as color-wheel PNGs")
    v.add_argument("--flow", nargs="+", help="ground-truth flow files")
    v.add_argument("--checkpoint")
    v.add_argument("--dataset")
    v.add_argument("--interval-multiplier", type=int, choices=(1, 4), default=1)
    v.add_argument("--out", default="viz")
    v.set_defaults(func=cmd_viz)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as e:
        log.error("configuration error: %s", e)
        return EXIT_CONFIG
    except NumericalAbort as e:
        log.error("numerical abort: %s", e)
        if e.breakdown is not None:
            print(json.dumps(e.breakdown.as_dict()), file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
