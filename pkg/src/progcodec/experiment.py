"""Desk-scale comparison of tail-drop ranges against standard training.

Trains three models on the same synthetic corpus (keep-fraction ranges
(0, 1), (0.3, 1) and the no-drop baseline (1, 1)), then sweeps every
truncation point on a held-out set.

    python -m progcodec.experiment --work runs/desk [--stage data|train|eval|all]
"""

from __future__ import annotations

import argparse
import json
import logging
from dataclasses import replace
from pathlib import Path

from .config import DESK_SCALE, TrainConfig
from .data import write_synthetic_corpus

log = logging.getLogger(__name__)

TRAIN_IMAGES = 3000
TRAIN_SIZE = 128
EVAL_IMAGES = 24
EVAL_SIZE = 256
TRAIN_SEED = 1
EVAL_SEED = 2

RUNS = {
    "dtd": (0.0, 1.0),
    "dtd_narrow": (0.3, 1.0),
    "standard": (1.0, 1.0),
}


def make_data(work: Path, train_images: int = TRAIN_IMAGES) -> tuple[Path, Path]:
    train_dir, eval_dir = work / "data" / "train", work / "data" / "eval"
    write_synthetic_corpus(train_dir, train_images, TRAIN_SIZE, TRAIN_SEED)
    write_synthetic_corpus(eval_dir, EVAL_IMAGES, EVAL_SIZE, EVAL_SEED, prefix="eval")
    return train_dir, eval_dir


def run_config(name: str, work: Path, epochs: int = 20, seed: int = 0) -> TrainConfig:
    u1, u2 = RUNS[name]
    model = replace(DESK_SCALE, u1=u1, u2=u2, lmbda=0.01)
    return TrainConfig(
        model=model, lr=1e-4, batch=8, epochs=epochs, seed=seed,
        data_dir=str(work / "data" / "train"), out_dir=str(work / name),
        patch_size=TRAIN_SIZE, checkpoint_every=100,
    )


def train_all(work: Path, names=tuple(RUNS), epochs: int = 20):
    from .trainer import train

    for name in names:
        if (work / name / "model.ckpt").exists():
            log.info("%s already trained", name)
            continue
        log.info("training %s", name)
        train(run_config(name, work, epochs))


def evaluate_all(work: Path, names=tuple(RUNS)) -> dict:
    from .checkpoint import Checkpoint
    from .evaluation import compare_baseline, mean_curve, rd_sweep

    eval_dir = work / "data" / "eval"
    summary = {}
    for name in names:
        ckpt = Checkpoint.load(work / name / "model.ckpt")
        records = rd_sweep(ckpt, eval_dir, work / f"sweep_{name}.csv")
        summary[name] = mean_curve(records)
    report = compare_baseline(
        Checkpoint.load(work / "dtd" / "model.ckpt"),
        Checkpoint.load(work / "standard" / "model.ckpt"),
        eval_dir,
    )
    summary["compare"] = report
    (work / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--work", type=Path, default=Path("runs/desk"))
    parser.add_argument("--stage", choices=["data", "train", "eval", "all"], default="all")
    parser.add_argument("--runs", nargs="+", choices=list(RUNS), default=list(RUNS))
    parser.add_argument("--epochs", type=int, default=20)
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(message)s")
    if args.stage in ("data", "all", "train"):
        make_data(args.work)
    if args.stage in ("train", "all"):
        train_all(args.work, args.runs, args.epochs)
    if args.stage in ("eval", "all"):
        print(json.dumps(evaluate_all(args.work, args.runs), indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
