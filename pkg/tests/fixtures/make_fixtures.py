"""Regenerate the golden fixtures.

    python tests/fixtures/make_fixtures.py

The MS-SSIM value comes from TensorFlow's ``tf.image.ssim_multiscale``, an
implementation independent of this package. The transform arrays pin the
seed-42 forward passes so refactors cannot silently change them.
"""

import os
from pathlib import Path

import numpy as np
import torch

from progcodec.config import ModelConfig
from progcodec.data import dead_leaves
from progcodec.model import HyperpriorModel

HERE = Path(__file__).parent
GOLDEN_CONFIG = ModelConfig(c_lat=16, c_hp=8, base_width=8, group_size=4)


def golden_model_inputs():
    torch.manual_seed(42)
    model = HyperpriorModel(GOLDEN_CONFIG).eval()
    x = torch.rand(1, 3, 64, 64, generator=torch.Generator().manual_seed(42))
    return model, x


def msssim_pair():
    a = dead_leaves(np.random.default_rng([9, 0]), 192)
    noise = np.random.default_rng(10).normal(0, 12, a.shape)
    b = np.clip(a + noise, 0, 255).round().astype(np.uint8)
    return a, b


def make_model_fixture():
    model, x = golden_model_inputs()
    with torch.no_grad():
        y = model.analysis(x)
        z = model.hyper_analysis(y)
        sigma = model.hyper_synthesis(torch.round(z))
        x_hat = model.synthesis(y)
    np.savez(HERE / "golden_model.npz", y=y.numpy(), z=z.numpy(), sigma=sigma.numpy(), x_hat=x_hat.numpy())


def make_msssim_fixture():
    os.environ.setdefault("TF_CPP_MIN_LOG_LEVEL", "3")
    import tensorflow as tf

    a, b = msssim_pair()
    fa = tf.constant(a[None].astype(np.float32) / 255.0)
    fb = tf.constant(b[None].astype(np.float32) / 255.0)
    value = float(tf.image.ssim_multiscale(fa, fb, max_val=1.0)[0])
    np.savez(HERE / "golden_msssim.npz", value=np.float64(value))


if __name__ == "__main__":
    make_model_fixture()
    make_msssim_fixture()
