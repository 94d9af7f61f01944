"""Per-pixel scale-and-shift of feature maps driven by the latent field.

A layer-wise affine turns each pixel's latent into a (gamma, beta) pair;
the feature map is modulated before its convolution and standardized after
it. The affine is shared across pixels, so all spatial variation comes
from the latent field itself.
"""

from __future__ import annotations

import torch
from torch import nn
from torch.nn import functional as F

from .layers import EqualizedLinear

NORM_EPS = 1e-8


class StyleProjection(nn.Module):
    """Affine maps from latent dimension to per-channel gamma and beta.

    Initialized so the expected style is the identity: gamma bias 1,
    beta bias 0.
    """

    def __init__(self, latent_dim: int, channels: int,
                 generator: torch.Generator | None = None):
        super().__init__()
        self.gamma = EqualizedLinear(latent_dim, channels, bias_init=1.0,
                                     generator=generator)
        self.beta = EqualizedLinear(latent_dim, channels, bias_init=0.0,
                                    generator=generator)


def styles(omega: torch.Tensor, proj: StyleProjection) -> tuple[torch.Tensor, torch.Tensor]:
    """Pixel-wise styles from a latent field; a 1x1 convolution in effect.

    Accepts (D, H, W) or (B, D, H, W) and returns matching-rank maps.
    """
    unbatched = omega.ndim == 3
    if unbatched:
        omega = omega.unsqueeze(0)
    if omega.ndim != 4:
        raise ValueError(f"latent field must be (B, D, H, W), got {tuple(omega.shape)}")
    if omega.shape[1] != proj.gamma.weight.shape[1]:
        raise ValueError(
            f"latent dimension {omega.shape[1]} does not match projection "
            f"input {proj.gamma.weight.shape[1]}")
    d = omega.shape[1]
    gamma = F.conv2d(omega, (proj.gamma.weight * proj.gamma.scale).view(-1, d, 1, 1),
                     proj.gamma.bias)
    beta = F.conv2d(omega, (proj.beta.weight * proj.beta.scale).view(-1, d, 1, 1),
                    proj.beta.bias)
    if unbatched:
        return gamma.squeeze(0), beta.squeeze(0)
    return gamma, beta


def modulate(x: torch.Tensor, gamma: torch.Tensor, beta: torch.Tensor) -> torch.Tensor:
    """Elementwise gamma * x + beta."""
    if x.shape != gamma.shape or x.shape != beta.shape:
        raise ValueError(
            f"shape mismatch: x {tuple(x.shape)}, gamma {tuple(gamma.shape)}, "
            f"beta {tuple(beta.shape)}")
    return gamma * x + beta


def normalize(x: torch.Tensor) -> torch.Tensor:
    """Per-channel, per-image standardization over spatial positions.

    No learned affine here; the next layer's styles supply scale and shift.
    """
    unbatched = x.ndim == 3
    if unbatched:
        x = x.unsqueeze(0)
    if x.ndim != 4:
        raise ValueError(f"feature map must be (B, C, H, W), got {tuple(x.shape)}")
    # The mean reduction runs in double so a constant channel standardizes
    # to exact zeros (a float32 reduction can miss the mean by an ulp,
    # which the epsilon guard then amplifies).
    mean = x.double().mean(dim=(2, 3), keepdim=True).to(x.dtype)
    centered = x - mean
    var = centered.square().mean(dim=(2, 3), keepdim=True)
    out = centered * torch.rsqrt(var + NORM_EPS)
    return out.squeeze(0) if unbatched else out
