"""Image-folder ingestion, patch manifests and batch loading."""

from __future__ import annotations

import hashlib
import json
import logging
import zlib
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".ppm", ".tif", ".tiff", ".webp"}


@dataclass(frozen=True)
class PatchSpec:
    patch_size: int = 256
    patches_per_image: int = 1
    split_seed: int = 0
    val_fraction: float = 0.0

    def __post_init__(self):
        if self.patch_size % 64:
            raise ValueError("patch_size must be divisible by 64")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in [0, 1)")


DESK_PATCHES = PatchSpec(patch_size=128)


@dataclass(frozen=True)
class ManifestEntry:
    path: str  # relative to the manifest root
    x0: int
    y0: int
    split: str


@dataclass
class Manifest:
    root: Path
    patch_size: int
    entries: list[ManifestEntry]

    def __len__(self):
        return len(self.entries)

    def subset(self, split: str) -> "Manifest":
        return Manifest(self.root, self.patch_size, [e for e in self.entries if e.split == split])

    def to_jsonl(self) -> str:
        return "".join(json.dumps(asdict(e), sort_keys=True) + "\n" for e in self.entries)

    def write(self, path: str | Path):
        Path(path).write_text(self.to_jsonl())

    @classmethod
    def read(cls, path: str | Path, root: str | Path, patch_size: int) -> "Manifest":
        entries = [ManifestEntry(**json.loads(line)) for line in Path(path).read_text().splitlines() if line]
        return cls(Path(root), patch_size, entries)


def list_images(root: str | Path) -> list[Path]:
    root = Path(root)
    return sorted(p for p in root.rglob("*") if p.suffix.lower() in IMAGE_SUFFIXES and p.is_file())


def split_of(rel_path: str, val_fraction: float) -> str:
    """Assign a file to train/val by a hash of its relative path."""
    h = int.from_bytes(hashlib.sha1(rel_path.encode()).digest()[:8], "big")
    return "val" if h / 2**64 < val_fraction else "train"


def ingest(root_dir: str | Path, spec: PatchSpec) -> Manifest:
    root = Path(root_dir)
    files = list_images(root)
    entries = []
    skipped = 0
    p = spec.patch_size
    for path in files:
        rel = path.relative_to(root).as_posix()
        try:
            with Image.open(path) as im:
                w, h = im.size
        except OSError:
            log.warning("cannot read %s, skipped", rel)
            skipped += 1
            continue
        if w < p or h < p:
            skipped += 1
            continue
        split = split_of(rel, spec.val_fraction)
        rng = np.random.default_rng([spec.split_seed, zlib.crc32(rel.encode())])
        for _ in range(spec.patches_per_image):
            x0 = int(rng.integers(0, w - p + 1))
            y0 = int(rng.integers(0, h - p + 1))
            entries.append(ManifestEntry(rel, x0, y0, split))
    if skipped:
        log.info("skipped %d images smaller than %d px or unreadable", skipped, p)
    if not entries:
        raise ValueError(f"no usable images under {root}")
    return Manifest(root, p, entries)


def load_image(path: str | Path) -> torch.Tensor:
    """RGB image as a float [3, H, W] tensor in [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    return torch.from_numpy(arr.copy()).permute(2, 0, 1).to(torch.float32) / 255.0


def save_image(x: torch.Tensor, path: str | Path):
    arr = (x.clamp(0, 1) * 255.0).round().to(torch.uint8).permute(1, 2, 0).numpy()
    Image.fromarray(arr).save(path)


def _load_patch(manifest: Manifest, entry: ManifestEntry) -> torch.Tensor:
    p = manifest.patch_size
    img = load_image(manifest.root / entry.path)
    return img[:, entry.y0 : entry.y0 + p, entry.x0 : entry.x0 + p]


def load_batch(manifest: Manifest, indices) -> torch.Tensor:
    """Stack the patches at ``indices`` into a [B, 3, P, P] batch in [0, 1]."""
    patches = []
    n = len(manifest)
    for i in indices:
        for attempt in range(n):
            entry = manifest.entries[(int(i) + attempt) % n]
            try:
                patches.append(_load_patch(manifest, entry))
                break
            except OSError:
                log.warning("failed to decode %s, substituting the next entry", entry.path)
        else:
            raise ValueError("no decodable entries in manifest")
    return torch.stack(patches)


def kodak_patches(img: torch.Tensor, patch: int = 256) -> list[torch.Tensor]:
    """Resize to a square of side 2 * patch and cut it into four patches."""
    side = 2 * patch
    sq = torch.nn.functional.interpolate(
        img.unsqueeze(0), size=(side, side), mode="bicubic", align_corners=False, antialias=True
    )[0].clamp(0, 1)
    return [sq[:, r : r + patch, c : c + patch] for r in (0, patch) for c in (0, patch)]


def dead_leaves(rng: np.random.Generator, size: int, n_shapes: int | None = None) -> np.ndarray:
    """Synthetic occlusion image with power-law sized disks and boxes (uint8 HxWx3).

    Sizes follow p(r) ~ r^-3, which gives the scale-invariant statistics of
    natural images; each shape carries a smooth color gradient and the whole
    image gets mild sensor noise.
    """
    if n_shapes is None:
        n_shapes = size * size // 25
    img = np.empty((size, size, 3), dtype=np.float64)
    img[:] = _leaf_color(rng)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    r_min, r_max = 1.5, size / 2
    # inverse-CDF sample of r^-3 on [r_min, r_max]
    u = rng.uniform(0, 1, n_shapes)
    radii = 1 / np.sqrt(1 / r_min**2 - u * (1 / r_min**2 - 1 / r_max**2))
    for r in radii:
        cx, cy = rng.uniform(-r, size + r, 2)
        x0, x1 = max(int(cx - r), 0), min(int(cx + r) + 2, size)
        y0, y1 = max(int(cy - r), 0), min(int(cy + r) + 2, size)
        if x0 >= x1 or y0 >= y1:
            continue
        sx, sy = xx[y0:y1, x0:x1] - cx, yy[y0:y1, x0:x1] - cy
        if rng.uniform() < 0.7:
            mask = sx * sx + sy * sy <= r * r
        else:
            a = rng.uniform(0.3, 1.0)
            mask = (np.abs(sx) <= r) & (np.abs(sy) <= a * r)
        base = _leaf_color(rng)
        grad = rng.normal(0, 0.2, (2, 1)) / max(r, 1.0)
        shade = base + sx[..., None] * grad[0] + sy[..., None] * grad[1]
        img[y0:y1, x0:x1][mask] = shade[mask]
    img += rng.normal(0, 2 / 255, img.shape)
    return (np.clip(img, 0, 1) * 255).round().astype(np.uint8)


def _leaf_color(rng: np.random.Generator) -> np.ndarray:
    # mostly luminance with a modest chroma offset
    return rng.uniform(0.05, 0.95) + rng.normal(0, 0.08, 3)


def write_synthetic_corpus(out_dir: str | Path, count: int, size: int, seed: int, prefix: str = "img") -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(count):
        path = out / f"{prefix}_{i:05d}.png"
        if not path.exists():
            rng = np.random.default_rng([seed, i])
            Image.fromarray(dead_leaves(rng, size)).save(path)
        paths.append(path)
    return paths
