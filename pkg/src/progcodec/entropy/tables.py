"""Quantized CDF tables shared by the encoder and the decoder.

Rows ``0 .. len(scale_table) - 1`` hold zero-mean Gaussians, one per entry of
the log-spaced scale grid; the following ``c_hp`` rows hold the factorized
prior of each hyperlatent channel. Every row covers a contiguous symbol
range ``[offset, offset + n)`` followed by one escape symbol.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass

import numpy as np
import torch
from scipy.special import ndtr, ndtri

from ..config import SIGMA_MIN
from .prior import FactorizedPrior
from .rangecoder import TOTAL

SIGMA_MAX = 256.0
SCALE_LEVELS = 64
TAIL_MASS = 1e-9
PRIOR_SEARCH_RADIUS = 4096


def default_scale_table() -> torch.Tensor:
    return torch.exp(torch.linspace(math.log(SIGMA_MIN), math.log(SIGMA_MAX), SCALE_LEVELS))


@dataclass
class EntropyTables:
    scale_table: torch.Tensor  # float32 [L]
    cdf: np.ndarray  # int32 [rows, max_len]
    lengths: np.ndarray  # int32 [rows], cdf entries per row (symbols + escape + 1)
    offsets: np.ndarray  # int32 [rows], first in-range symbol

    @property
    def num_scales(self) -> int:
        return int(self.scale_table.numel())

    def scale_indexes(self, sigma: torch.Tensor) -> torch.Tensor:
        """Row of the smallest grid scale >= sigma (clamped to the last row)."""
        idx = torch.searchsorted(self.scale_table.to(sigma.dtype), sigma.contiguous())
        return idx.clamp_(max=self.num_scales - 1).to(torch.int32)

    def prior_rows(self, channels: range | list[int]) -> np.ndarray:
        return self.num_scales + np.asarray(list(channels), dtype=np.int32)

    def coder_args(self):
        return self.cdf, self.lengths, self.offsets

    def probabilities(self, row: int) -> np.ndarray:
        """Table mass of every symbol of ``row``, escape last."""
        c = self.cdf[row, : self.lengths[row]].astype(np.int64)
        return np.diff(c) / TOTAL

    def to_tensors(self) -> dict[str, torch.Tensor]:
        return {
            "tables.scale_table": self.scale_table.clone(),
            "tables.cdf": torch.from_numpy(self.cdf.copy()),
            "tables.lengths": torch.from_numpy(self.lengths.copy()),
            "tables.offsets": torch.from_numpy(self.offsets.copy()),
        }

    @classmethod
    def from_tensors(cls, tensors: dict[str, torch.Tensor]) -> "EntropyTables":
        return cls(
            scale_table=tensors["tables.scale_table"].clone(),
            cdf=tensors["tables.cdf"].numpy().copy(),
            lengths=tensors["tables.lengths"].numpy().copy(),
            offsets=tensors["tables.offsets"].numpy().copy(),
        )


def quantize_pmf(pmf: np.ndarray, total: int = TOTAL) -> np.ndarray:
    """Integer counts summing to ``total`` with at least one count per bin.

    One count is reserved per bin and the remaining budget is split in
    proportion to ``pmf`` by largest remainder, so every bin is off by less
    than ``(n * p + 2) / total``.
    """
    pmf = np.asarray(pmf, dtype=np.float64)
    n = pmf.size
    if n > total:
        raise ValueError(f"{n} symbols cannot each get a count out of {total}")
    budget = total - n
    raw = pmf / pmf.sum() * budget
    counts = np.floor(raw).astype(np.int64)
    short = budget - int(counts.sum())
    if short:
        order = np.argsort(-(raw - counts), kind="stable")
        counts[order[:short]] += 1
    return counts + 1


def gaussian_row_pmf(sigma: float, s_max: int | None = None) -> tuple[int, np.ndarray]:
    """(offset, pmf with escape mass appended) for a zero-mean Gaussian row."""
    if s_max is None:
        z = -ndtri(TAIL_MASS / 2)
        s_max = max(1, math.ceil(sigma * z - 0.5))
    s_max = min(s_max, (TOTAL - 2) // 2)
    k = np.arange(-s_max, s_max + 1, dtype=np.float64)
    # left-tail evaluation for precision
    a = np.abs(k)
    pmf = ndtr((0.5 - a) / sigma) - ndtr((-0.5 - a) / sigma)
    tail = 2 * ndtr(-(s_max + 0.5) / sigma)
    return -s_max, np.append(pmf, tail)


@torch.no_grad()
def prior_row_pmfs(prior: FactorizedPrior, tail_mass: float = TAIL_MASS, radius: int = PRIOR_SEARCH_RADIUS):
    """Per-channel (offset, pmf) with support trimmed to the non-negligible range."""
    grid = torch.arange(-radius, radius + 1, dtype=torch.float64)
    prior64 = copy.deepcopy(prior).double()
    c = prior.channels
    v = grid.reshape(1, 1, -1).expand(c, 1, -1)
    cdf_hi = torch.sigmoid(prior64.logits_cdf(v + 0.5))[:, 0].numpy()
    cdf_lo = torch.sigmoid(prior64.logits_cdf(v - 0.5))[:, 0].numpy()
    mass = prior64.bin_probs(v)[:, 0].numpy()
    rows = []
    for ch in range(c):
        keep_lo = np.nonzero(cdf_hi[ch] >= tail_mass / 2)[0]
        keep_hi = np.nonzero(1 - cdf_lo[ch] >= tail_mass / 2)[0]
        first = int(keep_lo[0]) if keep_lo.size else 0
        last = int(keep_hi[-1]) if keep_hi.size else grid.numel() - 1
        if last < first:
            # all mass inside one bin
            first = last = int(np.argmax(mass[ch]))
        pmf = mass[ch, first : last + 1]
        tail = max(0.0, 1.0 - float(pmf.sum()))
        rows.append((int(grid[first]), np.append(pmf, tail)))
    return rows


def build_tables(prior: FactorizedPrior, scale_table: torch.Tensor | None = None) -> EntropyTables:
    if scale_table is None:
        scale_table = default_scale_table()
    scale_table = scale_table.to(torch.float32)
    rows = [gaussian_row_pmf(float(s)) for s in scale_table.double()]
    rows += prior_row_pmfs(prior)
    max_len = max(pmf.size for _, pmf in rows) + 1
    cdf = np.zeros((len(rows), max_len), dtype=np.int32)
    lengths = np.empty(len(rows), dtype=np.int32)
    offsets = np.empty(len(rows), dtype=np.int32)
    for i, (offset, pmf) in enumerate(rows):
        counts = quantize_pmf(pmf)
        cdf[i, 1 : counts.size + 1] = np.cumsum(counts)
        # pad past the end so rows stay monotone in memory
        cdf[i, counts.size + 1 :] = TOTAL
        lengths[i] = counts.size + 1
        offsets[i] = offset
    return EntropyTables(scale_table=scale_table, cdf=cdf, lengths=lengths, offsets=offsets)
