import csv
import math
from pathlib import Path

import numpy as np
import pytest
import torch

from make_fixtures import msssim_pair
from progcodec.data import save_image
from progcodec.evaluation import (
    CSV_FIELDS,
    compare_baseline,
    mean_curve,
    ms_ssim,
    plot_rd,
    psnr,
    rd_sweep,
    read_csv,
)

from conftest import random_image

FIXTURES = Path(__file__).parent / "fixtures"


def to_tensor(a):
    return torch.from_numpy(a.copy()).permute(2, 0, 1).double() / 255


def test_psnr():
    x = torch.rand(3, 16, 16)
    assert psnr(x, x) == math.inf
    a = torch.full((3, 8, 8), 0.5, dtype=torch.float64)
    assert abs(psnr(a, a + 0.1) - 20.0) < 1e-9
    rng = np.random.default_rng(0)
    u, v = rng.random((3, 20, 20)), rng.random((3, 20, 20))
    mse = sum((p - q) ** 2 for p, q in zip(u.ravel().tolist(), v.ravel().tolist())) / u.size
    assert abs(psnr(torch.from_numpy(u), torch.from_numpy(v)) - 10 * math.log10(1 / mse)) < 1e-9
    with pytest.raises(ValueError):
        psnr(torch.zeros(3, 4, 4), torch.zeros(3, 4, 5))


def test_ms_ssim_identity_and_symmetry():
    a, b = (to_tensor(v) for v in msssim_pair())
    assert ms_ssim(a, a) == pytest.approx(1.0, abs=1e-12)
    assert ms_ssim(a, b) == ms_ssim(b, a)
    assert 0 < ms_ssim(a, b) < 1


def test_ms_ssim_golden():
    a, b = (to_tensor(v) for v in msssim_pair())
    golden = float(np.load(FIXTURES / "golden_msssim.npz")["value"])
    assert abs(ms_ssim(a, b) - golden) <= 1e-6


def test_ms_ssim_minimum_size():
    with pytest.raises(ValueError):
        ms_ssim(torch.rand(3, 159, 200), torch.rand(3, 159, 200))
    assert 0 < ms_ssim(torch.rand(3, 160, 171), torch.rand(3, 160, 171)) < 1


@pytest.fixture(scope="module")
def eval_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("eval")
    for i in range(2):
        save_image(random_image(10 + i, 192, 200), root / f"e{i}.png")
    return root


def test_sweep_records(tiny_ckpt, eval_dir, tmp_path):
    out = tmp_path / "sweep.csv"
    records = rd_sweep(tiny_ckpt, eval_dir, out, plot_prefix=tmp_path / "rd")
    units = tiny_ckpt.config.unit_count
    assert len(records) == 2 * (units + 1)
    for image_id in ("e0.png", "e1.png"):
        rows = [r for r in records if r.image_id == image_id]
        assert [r.units for r in rows] == list(range(units + 1))
        bpps = [r.bpp for r in rows]
        assert all(b2 > b1 for b1, b2 in zip(bpps, bpps[1:]))
        assert rows[-1].fraction == 1.0 and rows[0].fraction == 0.0
        assert all(math.isfinite(r.psnr_db) for r in rows)
    with out.open() as f:
        assert next(csv.reader(f)) == CSV_FIELDS
    assert read_csv(out) == records
    assert (tmp_path / "rd_ms_ssim.svg").exists() and (tmp_path / "rd_psnr_db.svg").exists()


def test_sweep_is_reproducible(tiny_ckpt, eval_dir, tmp_path):
    rd_sweep(tiny_ckpt, eval_dir, tmp_path / "a.csv", plot_prefix=tmp_path / "a")
    rd_sweep(tiny_ckpt, eval_dir, tmp_path / "b.csv", plot_prefix=tmp_path / "b")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert (tmp_path / "a_ms_ssim.svg").read_bytes() == (tmp_path / "b_ms_ssim.svg").read_bytes()


def test_sweep_survives_bad_image(tiny_ckpt, eval_dir, tmp_path):
    bad = tmp_path / "imgs"
    bad.mkdir()
    save_image(random_image(3, 192, 192), bad / "good.png")
    (bad / "bad.png").write_bytes(b"garbage")
    save_image(random_image(3, 64, 64), bad / "small.png")  # too small for MS-SSIM
    records = rd_sweep(tiny_ckpt, bad)
    assert {r.image_id for r in records} == {"good.png"}


def test_patch_mode_and_export(tiny_ckpt, tmp_path):
    src = tmp_path / "kodak"
    src.mkdir()
    save_image(random_image(4, 512, 768), src / "k.png")
    records = rd_sweep(tiny_ckpt, src, patch_mode=True, export_dir=tmp_path / "png")
    assert {r.image_id for r in records} == {f"k.png#{i}" for i in range(4)}
    assert len(list((tmp_path / "png").glob("*.png"))) == len(records)


def test_mean_curve_and_plot(tiny_ckpt, eval_dir, tmp_path):
    records = rd_sweep(tiny_ckpt, eval_dir, tmp_path / "s.csv")
    curve = mean_curve(records)
    g = curve["units"].index(2)
    assert curve["bpp"][g] == pytest.approx(np.mean([r.bpp for r in records if r.units == 2]))
    paths = plot_rd(tmp_path / "s.csv", tmp_path / "p")
    assert all(p.read_text().lstrip().startswith("<?xml") for p in paths)


def test_compare_baseline_report(tiny_ckpt, eval_dir):
    report = compare_baseline(tiny_ckpt, tiny_ckpt, eval_dir)
    assert [row["target_fraction"] for row in report["gaps"]] == [0.3, 0.5, 0.7, 1.0]
    assert all(row["gap"] == 0.0 for row in report["gaps"])
    assert report["gaps"][-1]["kept_fraction"] == 1.0
    assert report["curves"]["dtd"] == report["curves"]["standard"]
