"""Double tail-drop: keep-fraction sampling, bottleneck masking, masked RD loss.

One keep fraction ``f ~ U(u1, u2)`` is drawn per image and drives both
bottlenecks: the first ``ceil(f * c_lat)`` latent channels and the first
``ceil(f * c_hp)`` hyperlatent channels survive, the tails are zeroed, and
their likelihoods are set to 1 so they cost no bits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import torch

from .config import ModelConfig
from .entropy import factorized_bin_likelihood, gaussian_bin_likelihood, quantize
from .model import HyperpriorModel

DISTORTION_SCALE = 255.0 ** 2


@dataclass(frozen=True)
class DropPlan:
    keep_fraction: float
    keep_lat: int
    keep_hp: int

    @classmethod
    def from_fraction(cls, f: float, config: ModelConfig) -> "DropPlan":
        if not 0.0 <= f <= 1.0:
            raise ValueError(f"keep fraction {f} outside [0, 1]")
        return cls(f, math.ceil(f * config.c_lat), math.ceil(f * config.c_hp))

    @classmethod
    def keep_all(cls, config: ModelConfig) -> "DropPlan":
        return cls(1.0, config.c_lat, config.c_hp)


def uniform_fraction(generator: torch.Generator, u1: float, u2: float) -> float:
    u = torch.rand((), generator=generator, dtype=torch.float64).item()
    return u1 + (u2 - u1) * u


def sample_drop_plan(
    generator: torch.Generator,
    config: ModelConfig,
    sampler: Callable[[torch.Generator, float, float], float] = uniform_fraction,
) -> DropPlan:
    if config.u1 == config.u2:
        return DropPlan.from_fraction(config.u2, config)
    return DropPlan.from_fraction(sampler(generator, config.u1, config.u2), config)


@dataclass
class LatentPair:
    y: torch.Tensor  # [B, c_lat, M, M]
    z: torch.Tensor  # [B, c_hp, M/4, M/4]
    keep_lat: list[int]
    keep_hp: list[int]


def channel_mask(keep: Sequence[int], channels: int, like: torch.Tensor) -> torch.Tensor:
    """[B, C, 1, 1] mask with ones on the first ``keep[b]`` channels of image b."""
    idx = torch.arange(channels, device=like.device).reshape(1, channels)
    k = torch.as_tensor(list(keep), device=like.device).reshape(-1, 1)
    return (idx < k).to(like.dtype).reshape(-1, channels, 1, 1)


def _plans(plans, batch: int) -> list[DropPlan]:
    if isinstance(plans, DropPlan):
        return [plans] * batch
    plans = list(plans)
    if len(plans) != batch:
        raise ValueError(f"{len(plans)} drop plans for a batch of {batch}")
    return plans


def apply_mask(latents: LatentPair, plans: DropPlan | Sequence[DropPlan]) -> LatentPair:
    """Zero the channel tails; gradients through zeroed entries are exactly 0."""
    plans = _plans(plans, latents.y.shape[0])
    keep_lat = [min(p.keep_lat, k) for p, k in zip(plans, latents.keep_lat)]
    keep_hp = [min(p.keep_hp, k) for p, k in zip(plans, latents.keep_hp)]
    y = latents.y * channel_mask(keep_lat, latents.y.shape[1], latents.y)
    z = latents.z * channel_mask(keep_hp, latents.z.shape[1], latents.z)
    return LatentPair(y, z, keep_lat, keep_hp)


def mask_likelihoods(p: torch.Tensor, keep: Sequence[int]) -> torch.Tensor:
    m = channel_mask(keep, p.shape[1], p).expand_as(p)
    return torch.where(m > 0, p, torch.ones_like(p))


def masked_rate(
    p_y: torch.Tensor,
    p_z: torch.Tensor,
    plans: DropPlan | Sequence[DropPlan],
    num_pixels: int,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Batch-mean bits per pixel of both bottlenecks, dropped channels excluded."""
    plans = _plans(plans, p_y.shape[0])
    p_y = mask_likelihoods(p_y, [p.keep_lat for p in plans])
    p_z = mask_likelihoods(p_z, [p.keep_hp for p in plans])
    b = p_y.shape[0]
    rate_y = -torch.log2(p_y).sum() / (b * num_pixels)
    rate_z = -torch.log2(p_z).sum() / (b * num_pixels)
    return rate_y, rate_z


@dataclass(frozen=True)
class LossBreakdown:
    rate_y_bpp: float
    rate_z_bpp: float
    distortion_mse: float
    total: float

    @classmethod
    def from_parts(cls, rate_y: float, rate_z: float, mse: float, lmbda: float) -> "LossBreakdown":
        return cls(rate_y, rate_z, mse, rate_y + rate_z + lmbda * DISTORTION_SCALE * mse)


class NonFiniteLoss(FloatingPointError):
    pass


def rd_loss(
    model: HyperpriorModel,
    x: torch.Tensor,
    plans: DropPlan | Sequence[DropPlan],
    generator: torch.Generator | None = None,
) -> tuple[torch.Tensor, dict[str, torch.Tensor]]:
    """Masked rate-distortion loss of a batch under per-image drop plans."""
    cfg = model.config
    b, _, h, w = x.shape
    plans = _plans(plans, b)
    y = model.analysis(x)
    z = model.hyper_analysis(y)
    full = LatentPair(y, z, [cfg.c_lat] * b, [cfg.c_hp] * b)
    masked = apply_mask(full, plans)
    mask_z = channel_mask(masked.keep_hp, cfg.c_hp, z)
    mask_y = channel_mask(masked.keep_lat, cfg.c_lat, y)
    # re-mask after the noise so dropped channels are exactly the decoder's zero fill
    z_hat = quantize(masked.z, "noise", generator) * mask_z
    p_z = factorized_bin_likelihood(z_hat, model.prior)
    sigma = model.hyper_synthesis(z_hat)
    y_hat = quantize(masked.y, "noise", generator) * mask_y
    p_y = gaussian_bin_likelihood(y_hat, sigma)
    rate_y, rate_z = masked_rate(p_y, p_z, plans, h * w)
    x_hat = model.synthesis(y_hat)
    mse = torch.mean((x - x_hat) ** 2)
    total = rate_y + rate_z + cfg.lmbda * DISTORTION_SCALE * mse
    parts = {"rate_y": rate_y, "rate_z": rate_z, "mse": mse, "p_y": p_y, "p_z": p_z}
    return total, parts


def train_step(
    model: HyperpriorModel,
    batch: torch.Tensor,
    optimizer: torch.optim.Optimizer,
    generator: torch.Generator,
) -> LossBreakdown:
    """One optimizer update on ``batch`` with a fresh drop plan per image."""
    model.train()
    plans = [sample_drop_plan(generator, model.config) for _ in range(batch.shape[0])]
    optimizer.zero_grad(set_to_none=True)
    total, parts = rd_loss(model, batch, plans, generator)
    if not torch.isfinite(total):
        raise NonFiniteLoss(
            "non-finite loss: "
            f"rate_y={parts['rate_y'].item()} rate_z={parts['rate_z'].item()} "
            f"mse={parts['mse'].item()} keep={[p.keep_lat for p in plans]}"
        )
    total.backward()
    optimizer.step()
    model.project()
    return LossBreakdown.from_parts(
        parts["rate_y"].item(), parts["rate_z"].item(), parts["mse"].item(), model.config.lmbda
    )
