"""Checkpoint container: model parameters, config and entropy tables.

The container is a safetensors archive whose metadata carries a format tag
and the model config as JSON. Its serialization is deterministic, so the
SHA-256 of the bytes identifies a checkpoint; the first 8 bytes of that
digest are stamped into every bitstream.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import torch
from safetensors.torch import load as st_load
from safetensors.torch import save as st_save

from .config import ModelConfig
from .entropy import EntropyTables, build_tables
from .model import HyperpriorModel

FORMAT_TAG = "progcodec-checkpoint/1"


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    model: HyperpriorModel
    tables: EntropyTables

    @classmethod
    def from_model(cls, model: HyperpriorModel) -> "Checkpoint":
        return cls(model=model.eval(), tables=build_tables(model.prior))

    @property
    def config(self) -> ModelConfig:
        return self.model.config

    def to_bytes(self) -> bytes:
        tensors = {f"model.{k}": v.detach().contiguous().clone() for k, v in self.model.state_dict().items()}
        tensors.update(self.tables.to_tensors())
        # one metadata key: safetensors does not order multiple keys stably
        meta = json.dumps({"format": FORMAT_TAG, "config": self.config.to_dict()}, sort_keys=True)
        return st_save(tensors, metadata={"progcodec": meta})

    @classmethod
    def from_bytes(cls, data: bytes) -> "Checkpoint":
        header_len = int.from_bytes(data[:8], "little")
        try:
            header = json.loads(data[8 : 8 + header_len])
        except (ValueError, UnicodeDecodeError) as exc:
            raise CheckpointError("not a checkpoint file") from exc
        meta = json.loads(header.get("__metadata__", {}).get("progcodec", "{}"))
        if meta.get("format") != FORMAT_TAG:
            raise CheckpointError(f"unsupported checkpoint format {meta.get('format')!r}")
        config = ModelConfig.from_dict(meta["config"])
        tensors = st_load(data)
        model = HyperpriorModel(config)
        state = {k[len("model."):]: v for k, v in tensors.items() if k.startswith("model.")}
        model.load_state_dict(state)
        return cls(model=model.eval(), tables=EntropyTables.from_tensors(tensors))

    @property
    def model_id(self) -> bytes:
        return hashlib.sha256(self.to_bytes()).digest()[:8]

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_bytes(self.to_bytes())
        tmp.replace(path)
        return path

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        return cls.from_bytes(Path(path).read_bytes())


def digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
