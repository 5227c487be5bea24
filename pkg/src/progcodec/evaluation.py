"""Quality metrics and progressive rate-distortion sweeps."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from . import codec
from .checkpoint import Checkpoint
from .data import kodak_patches, list_images, load_image, save_image

log = logging.getLogger(__name__)

MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
MS_SSIM_MIN_SIZE = 160
CSV_FIELDS = ["image_id", "units", "fraction", "bpp", "psnr_db", "ms_ssim"]


def psnr(a: torch.Tensor, b: torch.Tensor) -> float:
    """PSNR in dB of images in [0, 1]; ``math.inf`` when they are identical."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")
    mse = torch.mean((a.double() - b.double()) ** 2).item()
    if mse == 0:
        return math.inf
    return 10 * math.log10(1.0 / mse)


def _gaussian_window(size: int, sigma: float, dtype) -> torch.Tensor:
    coords = torch.arange(size, dtype=dtype) - (size - 1) / 2
    g = torch.exp(-(coords**2) / (2 * sigma**2))
    return g / g.sum()


def _blur(x: torch.Tensor, win_size: int, sigma: float) -> torch.Tensor:
    c = x.shape[1]
    out = x
    for dim in (2, 3):
        size = min(win_size, out.shape[dim])
        w = _gaussian_window(size, sigma, x.dtype)
        shape = (c, 1, size, 1) if dim == 2 else (c, 1, 1, size)
        kernel = w.reshape((1, 1) + shape[2:]).expand(shape).contiguous()
        out = F.conv2d(out, kernel, groups=c)
    return out


def _ssim_terms(x, y, win_size, sigma, max_val=1.0):
    c1 = (0.01 * max_val) ** 2
    c2 = (0.03 * max_val) ** 2
    mu_x, mu_y = _blur(x, win_size, sigma), _blur(y, win_size, sigma)
    num0 = 2 * mu_x * mu_y
    den0 = mu_x**2 + mu_y**2
    luminance = (num0 + c1) / (den0 + c1)
    num1 = 2 * _blur(x * y, win_size, sigma)
    den1 = _blur(x * x + y * y, win_size, sigma)
    cs = (num1 - num0 + c2) / (den1 - den0 + c2)
    return (luminance * cs).mean(dim=(2, 3)), cs.mean(dim=(2, 3))


def ms_ssim(a: torch.Tensor, b: torch.Tensor, win_size: int = 11, sigma: float = 1.5) -> float:
    """Five-scale MS-SSIM of two [3, H, W] (or [N, 3, H, W]) images in [0, 1].

    Per channel, the contrast-structure terms of the four finer scales and the
    full SSIM of the coarsest scale are raised to the standard weights and
    multiplied; the result is averaged over channels (and batch).
    """
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")
    x, y = a.double(), b.double()
    if x.dim() == 3:
        x, y = x.unsqueeze(0), y.unsqueeze(0)
    if min(x.shape[-2:]) < MS_SSIM_MIN_SIZE:
        raise ValueError(f"MS-SSIM needs both sides >= {MS_SSIM_MIN_SIZE}, got {tuple(x.shape[-2:])}")
    weights = torch.tensor(MS_SSIM_WEIGHTS, dtype=torch.float64)
    values = []
    for k in range(len(MS_SSIM_WEIGHTS)):
        if k > 0:
            # pad odd sides by repeating the last row/column, then 2x2 average
            ph, pw = x.shape[-2] % 2, x.shape[-1] % 2
            if ph or pw:
                x = F.pad(x, (0, pw, 0, ph), mode="replicate")
                y = F.pad(y, (0, pw, 0, ph), mode="replicate")
            x, y = F.avg_pool2d(x, 2), F.avg_pool2d(y, 2)
        ssim_k, cs_k = _ssim_terms(x, y, win_size, sigma)
        values.append(cs_k if k < len(MS_SSIM_WEIGHTS) - 1 else ssim_k)
    stack = torch.relu(torch.stack(values, dim=-1))
    per_channel = torch.prod(stack ** weights, dim=-1)
    return float(per_channel.mean())


@dataclass(frozen=True)
class RDRecord:
    image_id: str
    units: int
    fraction: float
    bpp: float
    psnr_db: float
    ms_ssim: float


def _eval_images(path: Path, rel: str, patch_mode: bool):
    img = load_image(path)
    if patch_mode:
        return [(f"{rel}#{i}", patch) for i, patch in enumerate(kodak_patches(img))]
    return [(rel, img)]


def sweep_image(ckpt: Checkpoint, image_id: str, x: torch.Tensor, group_size: int | None = None,
                export_dir: Path | None = None) -> list[RDRecord]:
    """Compress once, then decode every whole-unit prefix."""
    stream = codec.compress(x, ckpt, group_size)
    header, _ = codec.parse(stream)
    records = []
    for g in range(header.unit_count + 1):
        prefix = codec.truncate(stream, units=g)
        x_hat = codec.decompress(prefix, ckpt)
        kept = codec.lat_cutoff(g, header.group_size, header.c_lat)
        records.append(RDRecord(
            image_id=image_id,
            units=g,
            fraction=kept / header.c_lat,
            bpp=codec.stream_bpp(prefix),
            psnr_db=psnr(x, x_hat),
            ms_ssim=ms_ssim(x, x_hat),
        ))
        if export_dir is not None:
            out = Path(export_dir) / f"{image_id.replace('/', '_').replace('#', '_')}_u{g:03d}.png"
            save_image(x_hat, out)
    return records


def write_csv(records: list[RDRecord], out_csv: str | Path):
    records = sorted(records, key=lambda r: (r.image_id, r.units))
    with Path(out_csv).open("w", newline="") as f:
        w = csv.writer(f)
        w.writerow(CSV_FIELDS)
        for r in records:
            w.writerow([r.image_id, r.units, repr(r.fraction), repr(r.bpp), repr(r.psnr_db), repr(r.ms_ssim)])


def read_csv(path: str | Path) -> list[RDRecord]:
    with Path(path).open() as f:
        rows = list(csv.DictReader(f))
    return [
        RDRecord(r["image_id"], int(r["units"]), float(r["fraction"]), float(r["bpp"]),
                 float(r["psnr_db"]), float(r["ms_ssim"]))
        for r in rows
    ]


def rd_sweep(ckpt: Checkpoint, image_dir: str | Path, out_csv: str | Path | None = None,
             group_size: int | None = None, patch_mode: bool = False,
             export_dir: str | Path | None = None, plot_prefix: str | Path | None = None) -> list[RDRecord]:
    image_dir = Path(image_dir)
    if export_dir is not None:
        Path(export_dir).mkdir(parents=True, exist_ok=True)
    records: list[RDRecord] = []
    failures = []
    for path in list_images(image_dir):
        rel = path.relative_to(image_dir).as_posix()
        try:
            for image_id, x in _eval_images(path, rel, patch_mode):
                records.extend(sweep_image(ckpt, image_id, x, group_size, export_dir))
        except Exception as exc:  # keep sweeping, report at the end
            log.error("sweep failed on %s: %s", rel, exc)
            failures.append((rel, str(exc)))
    if failures:
        log.warning("%d images failed", len(failures))
    records.sort(key=lambda r: (r.image_id, r.units))
    if out_csv is not None:
        write_csv(records, out_csv)
        if plot_prefix is not None:
            plot_rd(out_csv, plot_prefix)
    return records


def mean_curve(records: list[RDRecord]) -> dict[str, list[float]]:
    """Per-unit means across images."""
    units = sorted({r.units for r in records})
    curve = {k: [] for k in ("units", "fraction", "bpp", "psnr_db", "ms_ssim")}
    for g in units:
        rs = [r for r in records if r.units == g]
        curve["units"].append(g)
        for k in ("fraction", "bpp", "ms_ssim"):
            curve[k].append(float(np.mean([getattr(r, k) for r in rs])))
        # an exact reconstruction has infinite PSNR; average the finite ones
        finite = [r.psnr_db for r in rs if math.isfinite(r.psnr_db)]
        curve["psnr_db"].append(float(np.mean(finite)) if finite else math.inf)
    return curve


def plot_rd(csv_path: str | Path, out_prefix: str | Path) -> list[Path]:
    """One SVG per metric (mean curve over images), drawn from the CSV alone."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "progcodec"
    curve = mean_curve(read_csv(csv_path))
    paths = []
    for metric, label in (("ms_ssim", "MS-SSIM"), ("psnr_db", "PSNR (dB)")):
        fig, ax = plt.subplots(figsize=(5, 4))
        ax.plot(curve["bpp"], curve[metric], marker="o")
        ax.set_xlabel("bits per pixel")
        ax.set_ylabel(label)
        ax.grid(True, alpha=0.3)
        out = Path(f"{out_prefix}_{metric}.svg")
        fig.savefig(out, metadata={"Date": None})
        plt.close(fig)
        paths.append(out)
    return paths


def _units_for_fraction(f: float, unit_count: int) -> int:
    return int(round(f * unit_count))


def compare_baseline(ckpt_dtd: Checkpoint, ckpt_standard: Checkpoint, image_dir: str | Path,
                     fractions=(0.3, 0.5, 0.7, 1.0), group_size: int | None = None,
                     patch_mode: bool = False) -> dict:
    """MS-SSIM of both models when only a leading fraction of channels is received."""
    curves = {}
    for name, ckpt in (("dtd", ckpt_dtd), ("standard", ckpt_standard)):
        curves[name] = mean_curve(rd_sweep(ckpt, image_dir, group_size=group_size, patch_mode=patch_mode))
    unit_count = curves["dtd"]["units"][-1]
    gaps = []
    for f in fractions:
        g = _units_for_fraction(f, unit_count)
        i = curves["dtd"]["units"].index(g)
        d, s = curves["dtd"]["ms_ssim"][i], curves["standard"]["ms_ssim"][i]
        gaps.append({
            "target_fraction": f,
            "units": g,
            "kept_fraction": curves["dtd"]["fraction"][i],
            "ms_ssim_dtd": d,
            "ms_ssim_standard": s,
            "gap": d - s,
        })
    return {"curves": curves, "gaps": gaps}


def write_report(report: dict, path: str | Path):
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")

