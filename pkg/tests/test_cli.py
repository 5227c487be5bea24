import json

import pytest
import torch

from progcodec import codec
from progcodec.checkpoint import digest
from progcodec.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, build_parser, run
from progcodec.data import load_image, save_image

from conftest import random_image

SUBCOMMANDS = ["train", "compress", "decompress", "truncate", "sweep", "compare"]


@pytest.fixture(scope="module")
def files(tmp_path_factory, tiny_ckpt):
    root = tmp_path_factory.mktemp("cli")
    tiny_ckpt.save(root / "m.ckpt")
    save_image(random_image(8, 100, 130), root / "in.png")
    return root


@pytest.mark.parametrize("sub", SUBCOMMANDS)
def test_help_documents_every_flag(sub, capsys):
    assert run([sub, "--help"]) == EXIT_OK
    text = capsys.readouterr().out
    parser = build_parser()
    action = next(a for a in parser._actions if getattr(a, "choices", None) and sub in a.choices)
    for opt in action.choices[sub]._actions:
        for flag in opt.option_strings:
            assert flag in text


def test_top_level_help():
    assert run(["--help"]) == EXIT_OK


def test_usage_errors(files, capsys):
    assert run(["compress", "--in", "x.png", "--model", "m", "--out", "o", "--bogus"]) == EXIT_USAGE
    assert "usage:" in capsys.readouterr().err
    assert run([]) == EXIT_USAGE
    assert run(["truncate", "--in", "a", "--out", "b"]) == EXIT_USAGE
    assert run(["truncate", "--in", "a", "--out", "b", "--units", "1", "--bpp", "0.1"]) == EXIT_USAGE
    assert run(["frobnicate"]) == EXIT_USAGE


def test_data_errors(files, tmp_path):
    assert run(["compress", "--in", str(files / "in.png"), "--model", str(tmp_path / "missing.ckpt"),
                "--out", str(tmp_path / "s.pdtd")]) == EXIT_DATA
    (tmp_path / "junk.pdtd").write_bytes(b"junk")
    assert run(["decompress", "--in", str(tmp_path / "junk.pdtd"), "--model", str(files / "m.ckpt"),
                "--out", str(tmp_path / "o.png")]) == EXIT_DATA
    assert run(["train", "--data-dir", str(tmp_path / "empty"), "--out-dir", str(tmp_path / "r")]) == EXIT_DATA


def test_compress_decompress_roundtrip(files, tiny_ckpt, tmp_path):
    s = tmp_path / "s.pdtd"
    assert run(["compress", "--in", str(files / "in.png"), "--model", str(files / "m.ckpt"), "--out", str(s)]) == 0
    assert run(["truncate", "--in", str(s), "--units", "2", "--out", str(tmp_path / "t.pdtd")]) == 0
    for stream, keep in ((s, 16), (tmp_path / "t.pdtd", 8)):
        out = tmp_path / f"{stream.stem}.png"
        assert run(["decompress", "--in", str(stream), "--model", str(files / "m.ckpt"), "--out", str(out)]) == 0
        x = load_image(files / "in.png")
        y_hat, _ = codec.encoder_latents(x, tiny_ckpt)
        with torch.no_grad():
            ref = tiny_ckpt.model.synthesis(codec.zero_fill(y_hat, keep))[0, :, :100, :130].clamp(0, 1)
        save_image(ref, tmp_path / "ref.png")
        assert torch.equal(load_image(out), load_image(tmp_path / "ref.png"))


def test_truncate_by_bpp_and_bytes(files, tmp_path):
    s = tmp_path / "s.pdtd"
    run(["compress", "--in", str(files / "in.png"), "--model", str(files / "m.ckpt"), "--out", str(s), "--group", "2"])
    data = s.read_bytes()
    assert codec.StreamHeader.unpack(data).unit_count == 8
    assert run(["truncate", "--in", str(s), "--bytes", str(len(data) // 2), "--out", str(tmp_path / "b.pdtd")]) == 0
    assert len((tmp_path / "b.pdtd").read_bytes()) <= len(data) // 2
    assert run(["truncate", "--in", str(s), "--bpp", "0.5", "--out", str(tmp_path / "p.pdtd")]) == 0
    assert codec.stream_bpp((tmp_path / "p.pdtd").read_bytes()) <= 0.5


def test_sweep_and_compare(files, tmp_path):
    imgs = tmp_path / "imgs"
    imgs.mkdir()
    save_image(random_image(9, 176, 192), imgs / "a.png")
    model = str(files / "m.ckpt")
    assert run(["sweep", "--model", model, "--images", str(imgs), "--out-csv", str(tmp_path / "s.csv"),
                "--plot", str(tmp_path / "rd")]) == 0
    assert len((tmp_path / "s.csv").read_text().splitlines()) == 1 + 5
    assert (tmp_path / "rd_ms_ssim.svg").exists()
    assert run(["compare", "--dtd", model, "--standard", model, "--images", str(imgs),
                "--out", str(tmp_path / "c.json")]) == 0
    report = json.loads((tmp_path / "c.json").read_text())
    assert len(report["gaps"]) == 4
    empty = tmp_path / "none"
    empty.mkdir()
    assert run(["sweep", "--model", model, "--images", str(empty), "--out-csv", str(tmp_path / "e.csv")]) == EXIT_DATA


def test_train_twice_same_digest(tiny_corpus, tmp_path):
    cfg = tmp_path / "desk.cfg"
    cfg.write_text(
        f"c_lat = 16\nc_hp = 8\nbase_width = 8\ngroup_size = 4\nbatch = 4\nepochs = 1\n"
        f"patch_size = 64\ndata_dir = {tiny_corpus}\nlr = 0.001\n"
    )
    digests = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert run(["train", "--config", str(cfg), "--seed", "7", "--out-dir", str(out)]) == 0
        digests.append(digest(out / "model.ckpt"))
        echoed = json.loads((out / "config.json").read_text())
        assert echoed["seed"] == 7 and echoed["out_dir"] == str(out)
    assert digests[0] == digests[1]
