"""Learned univariate density for the hyperlatent, one per channel.

Each channel's CDF is a composition of small monotone maps
``x -> x + tanh(a) * tanh(x)`` between softplus-positive linear layers,
followed by a sigmoid. Likelihoods of integer bins are CDF differences.
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn

from .likelihood import P_FLOOR


class FactorizedPrior(nn.Module):
    def __init__(self, channels: int, filters: tuple[int, ...] = (3, 3, 3), init_scale: float = 10.0):
        super().__init__()
        self.channels = channels
        dims = (1, *filters, 1)
        scale = init_scale ** (1 / (len(filters) + 1))
        self.matrices = nn.ParameterList()
        self.biases = nn.ParameterList()
        self.factors = nn.ParameterList()
        for k in range(len(filters) + 1):
            init = math.log(math.expm1(1 / scale / dims[k + 1]))
            self.matrices.append(nn.Parameter(torch.full((channels, dims[k + 1], dims[k]), init)))
            self.biases.append(nn.Parameter(torch.rand(channels, dims[k + 1], 1) - 0.5))
            if k < len(filters):
                self.factors.append(nn.Parameter(torch.zeros(channels, dims[k + 1], 1)))

    def logits_cdf(self, v: torch.Tensor) -> torch.Tensor:
        """Logit of the CDF; ``v`` has shape (channels, 1, N)."""
        x = v
        for k, matrix in enumerate(self.matrices):
            x = torch.matmul(F.softplus(matrix), x) + self.biases[k]
            if k < len(self.factors):
                x = x + torch.tanh(self.factors[k]) * torch.tanh(x)
        return x

    def cdf(self, v: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.logits_cdf(v))

    def bin_probs(self, v: torch.Tensor) -> torch.Tensor:
        """Unfloored mass of [v - 0.5, v + 0.5] for ``v`` of shape (channels, 1, N)."""
        lower = self.logits_cdf(v - 0.5)
        upper = self.logits_cdf(v + 0.5)
        # flip to the left tail so the sigmoid difference does not cancel
        sign = -torch.sign(lower + upper).detach()
        return torch.abs(torch.sigmoid(sign * upper) - torch.sigmoid(sign * lower))

    def forward(self, z_hat: torch.Tensor, floor: float = P_FLOOR) -> torch.Tensor:
        """Bin likelihoods for an NCHW hyperlatent, same shape as the input."""
        b, c, h, w = z_hat.shape
        v = z_hat.permute(1, 0, 2, 3).reshape(c, 1, -1)
        p = self.bin_probs(v).reshape(c, b, h, w).permute(1, 0, 2, 3)
        return torch.clamp(p, min=floor)

    def project(self):
        pass


def factorized_bin_likelihood(z_hat: torch.Tensor, prior: FactorizedPrior, floor: float = P_FLOOR) -> torch.Tensor:
    return prior(z_hat, floor=floor)
