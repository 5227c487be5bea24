import json
from dataclasses import replace

import pytest
import torch

from progcodec.checkpoint import FORMAT_TAG, Checkpoint, CheckpointError, digest
from progcodec.config import ModelConfig, TrainConfig
from progcodec.trainer import FINAL, LATEST, Trainer, train

from conftest import TINY


def _config(corpus, out, **kw):
    base = TrainConfig(model=replace(TINY, u1=0.0, u2=1.0), lr=1e-3, batch=4, epochs=2, seed=1,
                       data_dir=str(corpus), out_dir=str(out), patch_size=64)
    return replace(base, **kw)


def test_training_is_deterministic(tiny_corpus, tmp_path):
    a = train(_config(tiny_corpus, tmp_path / "a"))
    b = train(_config(tiny_corpus, tmp_path / "b"))
    assert digest(a) == digest(b)
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()
    c = train(_config(tiny_corpus, tmp_path / "c", seed=2))
    assert digest(a) != digest(c)


def test_resume_matches_uninterrupted(tiny_corpus, tmp_path):
    full = train(_config(tiny_corpus, tmp_path / "full"))
    # stop mid-epoch, then resume from the saved state
    cfg = _config(tiny_corpus, tmp_path / "cut", checkpoint_every=1, max_steps=4)
    train(cfg)
    assert (tmp_path / "cut" / LATEST).exists()
    resumed = train(replace(cfg, max_steps=0))
    assert digest(full) == digest(resumed)
    assert (tmp_path / "full" / "metrics.csv").read_bytes() == (tmp_path / "cut" / "metrics.csv").read_bytes()


def test_metrics_and_config_written(tiny_corpus, tmp_path):
    cfg = _config(tiny_corpus, tmp_path / "run", epochs=1)
    Trainer(cfg).run()
    rows = (tmp_path / "run" / "metrics.csv").read_text().splitlines()
    assert rows[0] == "step,rate_y_bpp,rate_z_bpp,mse,total"
    assert len(rows) == 1 + 12 // 4
    echoed = json.loads((tmp_path / "run" / "config.json").read_text())
    assert echoed["lambda"] == TINY.lmbda and echoed["seed"] == 1
    assert (tmp_path / "run" / FINAL).exists()


def test_resume_rejects_other_model(tiny_corpus, tmp_path):
    cfg = _config(tiny_corpus, tmp_path / "run", max_steps=1)
    train(cfg)
    other = replace(cfg, model=replace(cfg.model, base_width=4), max_steps=2)
    with pytest.raises(ValueError):
        train(other)


def test_config_file_and_overrides(tmp_path):
    path = tmp_path / "desk.cfg"
    path.write_text("lambda = 0.05\nu1 = 0.3  # narrow\nc_lat = 32\nbatch = 4\ndata_dir = imgs\n")
    cfg = TrainConfig.load(path, {"batch": 2, "seed": 7})
    assert cfg.model.lmbda == 0.05 and cfg.model.u1 == 0.3 and cfg.model.c_lat == 32
    assert cfg.batch == 2 and cfg.seed == 7 and cfg.data_dir == "imgs"
    with pytest.raises(KeyError):
        TrainConfig.load(path, {"learning_rate": 1})


def test_model_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(u1=0.5, u2=0.5)
    with pytest.raises(ValueError):
        ModelConfig(u1=0.8, u2=0.2)
    assert ModelConfig(c_lat=64, group_size=8).unit_count == 8
    assert ModelConfig(c_lat=20, c_hp=8, group_size=8).unit_count == 3


def test_checkpoint_roundtrip(tiny_ckpt, tmp_path):
    path = tiny_ckpt.save(tmp_path / "m.ckpt")
    back = Checkpoint.load(path)
    assert back.to_bytes() == tiny_ckpt.to_bytes()
    assert back.model_id == tiny_ckpt.model_id and len(back.model_id) == 8
    for (n, a), (_, b) in zip(tiny_ckpt.model.state_dict().items(), back.model.state_dict().items()):
        assert torch.equal(a, b), n
    assert FORMAT_TAG.encode() in path.read_bytes()[:4096]


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"not a checkpoint")
    with pytest.raises(CheckpointError):
        Checkpoint.load(path)
