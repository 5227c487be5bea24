"""Quantization and bin likelihoods."""

from __future__ import annotations

import math

import torch

P_FLOOR = 2.0 ** -16


def quantize(v: torch.Tensor, mode: str = "round", generator: torch.Generator | None = None) -> torch.Tensor:
    """Additive uniform noise in [-0.5, 0.5) for training, round-half-to-even otherwise."""
    if mode == "noise":
        noise = torch.rand(v.shape, generator=generator, dtype=v.dtype, device=v.device) - 0.5
        return v + noise
    if mode == "round":
        # torch.round rounds half to even
        return torch.round(v)
    raise ValueError(f"unknown quantization mode {mode!r}")


def _std_normal_cdf(x: torch.Tensor) -> torch.Tensor:
    return 0.5 * torch.erfc(-x / math.sqrt(2.0))


def gaussian_bin_likelihood(y_hat: torch.Tensor, sigma: torch.Tensor, floor: float = P_FLOOR) -> torch.Tensor:
    """Mass of N(0, sigma^2) over [y_hat - 0.5, y_hat + 0.5], floored at ``floor``."""
    # evaluate on the left tail, where erfc keeps full relative precision
    v = torch.abs(y_hat)
    upper = _std_normal_cdf((0.5 - v) / sigma)
    lower = _std_normal_cdf((-0.5 - v) / sigma)
    return torch.clamp(upper - lower, min=floor)


def bits(p: torch.Tensor) -> torch.Tensor:
    """Total code length in bits, -sum(log2 p)."""
    return -torch.log2(p).sum()
