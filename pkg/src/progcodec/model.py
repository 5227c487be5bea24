"""Analysis/synthesis transforms of the scale-hyperprior autoencoder.

All tensors are NCHW. ``HyperpriorModel`` owns the four transforms plus the
factorized prior used for the hyperlatent, so a single ``state_dict`` carries
every learned parameter of the codec.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from .config import BETA_MIN, SIGMA_MIN, SIZE_MULTIPLE, ModelConfig
from .entropy import FactorizedPrior


def gdn(x: torch.Tensor, beta: torch.Tensor, gamma: torch.Tensor, inverse: bool = False) -> torch.Tensor:
    """Generalized divisive normalization across channels.

    ``y_i = x_i / sqrt(beta_i + sum_j gamma_ij * x_j**2)``; the inverse
    multiplies by the same norm instead of dividing.
    """
    c = x.shape[1]
    norm = F.conv2d(x * x, gamma.reshape(c, c, 1, 1), beta)
    norm = torch.sqrt(norm)
    return x * norm if inverse else x / norm


class GDN(nn.Module):
    def __init__(self, channels: int, inverse: bool = False, gamma_init: float = 0.1):
        super().__init__()
        self.inverse = inverse
        self.beta = nn.Parameter(torch.ones(channels))
        self.gamma = nn.Parameter(gamma_init * torch.eye(channels))

    def forward(self, x):
        return gdn(x, self.beta, self.gamma, self.inverse)

    @torch.no_grad()
    def project(self):
        self.beta.clamp_(min=BETA_MIN)
        self.gamma.clamp_(min=0.0)


def _conv(cin, cout, kernel=5, stride=2):
    layer = nn.Conv2d(cin, cout, kernel, stride=stride, padding=kernel // 2)
    nn.init.zeros_(layer.bias)
    return layer


def _deconv(cin, cout, kernel=5, stride=2):
    layer = nn.ConvTranspose2d(
        cin, cout, kernel, stride=stride, padding=kernel // 2, output_padding=stride - 1
    )
    nn.init.zeros_(layer.bias)
    return layer


class HyperpriorModel(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        n, m, h = config.base_width, config.c_lat, config.c_hp
        self.g_a = nn.Sequential(
            _conv(3, n), GDN(n),
            _conv(n, n), GDN(n),
            _conv(n, n), GDN(n),
            _conv(n, m),
        )
        self.g_s = nn.Sequential(
            _deconv(m, n), GDN(n, inverse=True),
            _deconv(n, n), GDN(n, inverse=True),
            _deconv(n, n), GDN(n, inverse=True),
            _deconv(n, 3),
        )
        self.h_a = nn.Sequential(
            _conv(m, n, kernel=3, stride=1), nn.ReLU(),
            _conv(n, n), nn.ReLU(),
            _conv(n, h),
        )
        self.h_s = nn.Sequential(
            _deconv(h, n), nn.ReLU(),
            _deconv(n, n), nn.ReLU(),
            _conv(n, m, kernel=3, stride=1),
        )
        self.prior = FactorizedPrior(h)

    def analysis(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] % SIZE_MULTIPLE or x.shape[-2] % SIZE_MULTIPLE:
            raise ValueError(
                f"image size {tuple(x.shape[-2:])} is not divisible by {SIZE_MULTIPLE}"
            )
        return self.g_a(x)

    def synthesis(self, y_hat: torch.Tensor) -> torch.Tensor:
        if y_hat.shape[1] != self.config.c_lat:
            raise ValueError(f"expected {self.config.c_lat} latent channels, got {y_hat.shape[1]}")
        return self.g_s(y_hat)

    def hyper_analysis(self, y: torch.Tensor) -> torch.Tensor:
        if y.shape[1] != self.config.c_lat:
            raise ValueError(f"expected {self.config.c_lat} latent channels, got {y.shape[1]}")
        return self.h_a(torch.abs(y))

    def hyper_synthesis(self, z_hat: torch.Tensor) -> torch.Tensor:
        """Scale of the zero-mean Gaussian for every latent element (>= SIGMA_MIN)."""
        if z_hat.shape[1] != self.config.c_hp:
            raise ValueError(f"expected {self.config.c_hp} hyperlatent channels, got {z_hat.shape[1]}")
        return SIGMA_MIN + F.softplus(self.h_s(z_hat))

    def gdn_layers(self):
        return [m for m in self.modules() if isinstance(m, GDN)]

    @torch.no_grad()
    def project(self):
        """Restore parameter constraints after an optimizer step."""
        for layer in self.gdn_layers():
            layer.project()
        self.prior.project()
