"""Command-line entry point: ``progcodec <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data or model error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import torch

log = logging.getLogger("progcodec")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2

# flag name -> config key
TRAIN_OVERRIDES = {
    "lmbda": "lambda", "u1": "u1", "u2": "u2", "c_lat": "c_lat", "c_hp": "c_hp",
    "base_width": "base_width", "group_size": "group_size", "lr": "lr", "batch": "batch",
    "epochs": "epochs", "data_dir": "data_dir", "out_dir": "out_dir", "patch_size": "patch_size",
    "max_steps": "max_steps", "checkpoint_every": "checkpoint_every",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    common.add_argument("--seed", type=int, default=None, help="seed for all randomness (default 0)")

    parser = _Parser(prog="progcodec", description="Progressive learned image codec.", parents=[common])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", parents=[common], help="train a model")
    p.add_argument("--config", type=Path, help="key = value training config file")
    p.add_argument("--lambda", dest="lmbda", type=float, help="rate-distortion weight")
    p.add_argument("--u1", type=float, help="lower bound of the keep fraction")
    p.add_argument("--u2", type=float, help="upper bound of the keep fraction")
    p.add_argument("--c-lat", type=int, help="latent channels")
    p.add_argument("--c-hp", type=int, help="hyperlatent channels")
    p.add_argument("--base-width", type=int, help="internal conv width")
    p.add_argument("--group-size", type=int, help="latent channels per progressive unit")
    p.add_argument("--lr", type=float, help="Adam learning rate")
    p.add_argument("--batch", type=int, help="batch size")
    p.add_argument("--epochs", type=int, help="number of epochs")
    p.add_argument("--data-dir", help="training image folder")
    p.add_argument("--out-dir", help="output directory (checkpoints, metrics.csv, config.json)")
    p.add_argument("--patch-size", type=int, help="training patch side")
    p.add_argument("--max-steps", type=int, help="stop after this many steps (0 = no limit)")
    p.add_argument("--checkpoint-every", type=int, help="checkpoint interval in steps")

    p = sub.add_parser("compress", parents=[common], help="encode an image")
    p.add_argument("--in", dest="inp", required=True, type=Path, help="input image")
    p.add_argument("--model", required=True, type=Path, help="checkpoint")
    p.add_argument("--out", required=True, type=Path, help="output .pdtd stream")
    p.add_argument("--group", type=int, help="latent channels per unit (default from checkpoint)")

    p = sub.add_parser("decompress", parents=[common], help="decode a stream or stream prefix")
    p.add_argument("--in", dest="inp", required=True, type=Path, help="input .pdtd stream")
    p.add_argument("--model", required=True, type=Path, help="checkpoint")
    p.add_argument("--out", required=True, type=Path, help="output PNG")

    p = sub.add_parser("truncate", parents=[common], help="cut a stream to a whole-unit prefix")
    p.add_argument("--in", dest="inp", required=True, type=Path, help="input .pdtd stream")
    p.add_argument("--out", required=True, type=Path, help="output .pdtd stream")
    target = p.add_mutually_exclusive_group(required=True)
    target.add_argument("--bpp", type=float, help="target bits per pixel")
    target.add_argument("--bytes", type=int, help="target size in bytes")
    target.add_argument("--units", type=int, help="number of units to keep")

    p = sub.add_parser("sweep", parents=[common], help="RD sweep over every truncation point")
    p.add_argument("--model", required=True, type=Path, help="checkpoint")
    p.add_argument("--images", required=True, type=Path, help="evaluation image folder")
    p.add_argument("--out-csv", required=True, type=Path, help="output CSV")
    p.add_argument("--group", type=int, help="latent channels per unit")
    p.add_argument("--patch-mode", action="store_true", help="resize to 512x512 and evaluate four 256 patches")
    p.add_argument("--plot", type=Path, help="prefix for one SVG per metric")
    p.add_argument("--export-dir", type=Path, help="also write every reconstruction as PNG here")

    p = sub.add_parser("compare", parents=[common], help="tail-drop model vs standard model under truncation")
    p.add_argument("--dtd", required=True, type=Path, help="tail-drop trained checkpoint")
    p.add_argument("--standard", required=True, type=Path, help="checkpoint trained without drop")
    p.add_argument("--images", required=True, type=Path, help="evaluation image folder")
    p.add_argument("--out", required=True, type=Path, help="output JSON report")
    p.add_argument("--group", type=int, help="latent channels per unit")
    p.add_argument("--patch-mode", action="store_true", help="evaluate four 256 patches per image")
    return parser


def _cmd_train(args) -> int:
    from .config import TrainConfig
    from .trainer import train

    overrides = {TRAIN_OVERRIDES[k]: v for k, v in vars(args).items() if k in TRAIN_OVERRIDES and v is not None}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.config:
        config = TrainConfig.load(args.config, overrides)
    else:
        config = TrainConfig.from_mapping(overrides)
    if not config.data_dir:
        raise UsageError("train needs data_dir (config file or --data-dir)")
    log.info("effective config: %s", json.dumps(config.to_dict(), sort_keys=True))
    path = train(config)
    log.info("wrote %s", path)
    return EXIT_OK


def _cmd_compress(args) -> int:
    from . import codec
    from .checkpoint import Checkpoint
    from .data import load_image

    ckpt = Checkpoint.load(args.model)
    stream, stats = codec.compress_with_stats(load_image(args.inp), ckpt, args.group)
    args.out.write_bytes(stream)
    log.info("%d bytes, %.4f bpp, %d escapes", len(stream), codec.stream_bpp(stream), stats.escapes)
    return EXIT_OK


def _cmd_decompress(args) -> int:
    from . import codec
    from .checkpoint import Checkpoint
    from .data import save_image

    ckpt = Checkpoint.load(args.model)
    save_image(codec.decompress(args.inp.read_bytes(), ckpt), args.out)
    return EXIT_OK


def _cmd_truncate(args) -> int:
    from . import codec

    out = codec.truncate(args.inp.read_bytes(), units=args.units, nbytes=args.bytes, bpp=args.bpp)
    args.out.write_bytes(out)
    log.info("kept %d units, %d bytes", codec.StreamHeader.unpack(out).unit_count, len(out))
    return EXIT_OK


def _cmd_sweep(args) -> int:
    from .checkpoint import Checkpoint
    from .evaluation import rd_sweep

    records = rd_sweep(Checkpoint.load(args.model), args.images, args.out_csv, args.group,
                       args.patch_mode, args.export_dir, args.plot)
    if not records:
        log.error("no image could be evaluated")
        return EXIT_DATA
    return EXIT_OK


def _cmd_compare(args) -> int:
    from .checkpoint import Checkpoint
    from .evaluation import compare_baseline, write_report

    report = compare_baseline(Checkpoint.load(args.dtd), Checkpoint.load(args.standard), args.images,
                              group_size=args.group, patch_mode=args.patch_mode)
    write_report(report, args.out)
    for row in report["gaps"]:
        log.info("kept %.3f: dtd %.4f standard %.4f gap %+.4f", row["kept_fraction"],
                 row["ms_ssim_dtd"], row["ms_ssim_standard"], row["gap"])
    return EXIT_OK


COMMANDS = {
    "train": _cmd_train, "compress": _cmd_compress, "decompress": _cmd_decompress,
    "truncate": _cmd_truncate, "sweep": _cmd_sweep, "compare": _cmd_compare,
}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    level = logging.WARNING - 10 * min(args.verbose + 1, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr, force=True)
    torch.manual_seed(args.seed if args.seed is not None else 0)
    log.debug("arguments: %s", {k: str(v) for k, v in sorted(vars(args).items())})
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"progcodec {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, KeyError) as exc:
        log.error("%s", exc)
        return EXIT_DATA


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
