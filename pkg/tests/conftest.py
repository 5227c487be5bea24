import sys
from pathlib import Path

import numpy as np
import pytest
import torch

from progcodec.checkpoint import Checkpoint
from progcodec.config import ModelConfig
from progcodec.entropy import quantize_pmf
from progcodec.entropy.rangecoder import TOTAL
from progcodec.model import HyperpriorModel

sys.path.insert(0, str(Path(__file__).parent / "fixtures"))

TINY = ModelConfig(c_lat=16, c_hp=8, base_width=8, group_size=4)


@pytest.fixture(scope="session")
def tiny_config():
    return TINY


@pytest.fixture(scope="session")
def tiny_ckpt():
    torch.manual_seed(3)
    return Checkpoint.from_model(HyperpriorModel(TINY))


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def random_image(seed: int, h: int, w: int) -> torch.Tensor:
    g = torch.Generator().manual_seed(seed)
    # smooth-ish content so latents are not all escapes
    base = torch.rand(1, 3, h // 8 + 1, w // 8 + 1, generator=g)
    img = torch.nn.functional.interpolate(base, size=(h, w), mode="bilinear", align_corners=False)[0]
    return (img + 0.05 * torch.rand(3, h, w, generator=g)).clamp(0, 1)


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    from progcodec.data import write_synthetic_corpus

    root = tmp_path_factory.mktemp("corpus")
    write_synthetic_corpus(root, 12, 96, seed=4)
    return root


def random_tables(rng, rows: int):
    pmfs, offsets = [], []
    for _ in range(rows):
        n = int(rng.integers(1, 300))
        p = rng.dirichlet(np.full(n, rng.uniform(0.05, 2.0)))
        pmfs.append(np.append(p, rng.uniform(0, 0.01)))
        offsets.append(int(rng.integers(-200, 50)))
    width = max(p.size for p in pmfs) + 1
    cdf = np.full((rows, width), TOTAL, dtype=np.int32)
    lengths = np.empty(rows, np.int32)
    for i, p in enumerate(pmfs):
        c = quantize_pmf(p)
        cdf[i, 0] = 0
        cdf[i, 1 : c.size + 1] = np.cumsum(c)
        lengths[i] = c.size + 1
    return cdf, lengths, np.asarray(offsets, np.int32)


def sample_symbols(rng, cdf, lengths, offsets, count, escape_rate=0.0):
    rows = rng.integers(0, cdf.shape[0], count).astype(np.int32)
    symbols = np.empty(count, np.int64)
    for r in np.unique(rows):
        sel = rows == r
        probs = np.diff(cdf[r, : lengths[r]].astype(np.int64)) / TOTAL
        v = rng.choice(probs.size, size=int(sel.sum()), p=probs)
        symbols[sel] = v + offsets[r]
    esc = rng.random(count) < escape_rate
    symbols[esc] = rng.integers(-(2**31), 2**31 - 1, int(esc.sum()))
    return symbols, rows


# acceptance criteria report one line each at the end of the run
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
