"""Training loop with periodic checkpoints and exact resume."""

from __future__ import annotations

import csv
import json
import logging
from pathlib import Path

import torch

from .checkpoint import Checkpoint
from .config import TrainConfig
from .data import Manifest, PatchSpec, ingest, load_batch
from .dtd import LossBreakdown, train_step
from .model import HyperpriorModel

log = logging.getLogger(__name__)

METRIC_FIELDS = ["step", "rate_y_bpp", "rate_z_bpp", "mse", "total"]
STATE_FILE = "train_state.pt"
LATEST = "latest.ckpt"
FINAL = "model.ckpt"


def epoch_order(n: int, seed: int, epoch: int) -> torch.Tensor:
    g = torch.Generator().manual_seed(seed * 1_000_003 + epoch)
    return torch.randperm(n, generator=g)


class Trainer:
    def __init__(self, config: TrainConfig, manifest: Manifest | None = None):
        self.config = config
        self.out = Path(config.out_dir)
        if manifest is None:
            spec = PatchSpec(config.patch_size, config.patches_per_image, config.seed, config.val_fraction)
            manifest = ingest(config.data_dir, spec).subset("train")
        self.manifest = manifest
        torch.manual_seed(config.seed)
        self.model = HyperpriorModel(config.model)
        self.optimizer = torch.optim.Adam(self.model.parameters(), lr=config.lr)
        self.generator = torch.Generator().manual_seed(config.seed)
        self.epoch = 0
        self.batch_index = 0
        self.step = 0

    @property
    def steps_per_epoch(self) -> int:
        return len(self.manifest) // self.config.batch

    def _save(self):
        Checkpoint.from_model(self.model).save(self.out / LATEST)
        state = {
            "optimizer": self.optimizer.state_dict(),
            "generator": self.generator.get_state(),
            "epoch": self.epoch,
            "batch_index": self.batch_index,
            "step": self.step,
        }
        tmp = self.out / (STATE_FILE + ".tmp")
        torch.save(state, tmp)
        tmp.replace(self.out / STATE_FILE)
        self.model.train()

    def _resume(self) -> bool:
        state_path = self.out / STATE_FILE
        if not state_path.exists() or not (self.out / LATEST).exists():
            return False
        ckpt = Checkpoint.load(self.out / LATEST)
        if ckpt.config != self.config.model:
            raise ValueError("checkpoint in out_dir was trained with a different model config")
        self.model.load_state_dict(ckpt.model.state_dict())
        state = torch.load(state_path, weights_only=False)
        self.optimizer.load_state_dict(state["optimizer"])
        self.generator.set_state(state["generator"])
        self.epoch, self.batch_index, self.step = state["epoch"], state["batch_index"], state["step"]
        self._trim_metrics()
        log.info("resumed at epoch %d, step %d", self.epoch, self.step)
        return True

    def _trim_metrics(self):
        path = self.out / "metrics.csv"
        if not path.exists():
            return
        with path.open() as f:
            rows = list(csv.reader(f))
        keep = [rows[0]] + [r for r in rows[1:] if int(r[0]) <= self.step]
        with path.open("w", newline="") as f:
            csv.writer(f).writerows(keep)

    def _log_metrics(self, writer, lb: LossBreakdown):
        writer.writerow([self.step, repr(lb.rate_y_bpp), repr(lb.rate_z_bpp), repr(lb.distortion_mse), repr(lb.total)])

    def run(self, epochs: int | None = None) -> Path:
        """Train up to ``epochs`` (default from the config); returns the final checkpoint path."""
        epochs = self.config.epochs if epochs is None else epochs
        self.out.mkdir(parents=True, exist_ok=True)
        (self.out / "config.json").write_text(json.dumps(self.config.to_dict(), indent=2, sort_keys=True) + "\n")
        self._resume()
        metrics_path = self.out / "metrics.csv"
        new_file = not metrics_path.exists()
        max_steps = self.config.max_steps or None
        with metrics_path.open("a", newline="") as f:
            writer = csv.writer(f)
            if new_file:
                writer.writerow(METRIC_FIELDS)
            while self.epoch < epochs and (max_steps is None or self.step < max_steps):
                order = epoch_order(len(self.manifest), self.config.seed, self.epoch)
                b = self.config.batch
                while self.batch_index < self.steps_per_epoch:
                    if max_steps is not None and self.step >= max_steps:
                        break
                    idx = order[self.batch_index * b : (self.batch_index + 1) * b]
                    lb = train_step(self.model, load_batch(self.manifest, idx), self.optimizer, self.generator)
                    self.batch_index += 1
                    self.step += 1
                    self._log_metrics(writer, lb)
                    if self.step % 50 == 0:
                        log.info("epoch %d step %d loss %.4f bpp %.4f mse %.6f", self.epoch, self.step,
                                 lb.total, lb.rate_y_bpp + lb.rate_z_bpp, lb.distortion_mse)
                    if self.config.checkpoint_every and self.step % self.config.checkpoint_every == 0:
                        f.flush()
                        self._save()
                if self.batch_index >= self.steps_per_epoch:
                    self.epoch += 1
                    self.batch_index = 0
                f.flush()
                self._save()
        final = Checkpoint.from_model(self.model).save(self.out / FINAL)
        return final


def train(config: TrainConfig, manifest: Manifest | None = None, epochs: int | None = None) -> Path:
    return Trainer(config, manifest).run(epochs)
