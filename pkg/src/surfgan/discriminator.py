"""Critic with a scalar realism head and a per-pixel surface regression head.

The trunk is a residual downsampling stack; a feature-pyramid head fuses
the three finest trunk features top-down and regresses an embedding for
every pixel. Only the scalar logit participates in the adversarial game;
the embedding head is trained with a masked smooth-L1 loss over BODY
pixels (dilated pixels carry no target and are excluded).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .layers import EqualizedConv2d, EqualizedLinear
from .surface import SurfaceAnnotation

SMOOTH_L1_BETA = 1.0


@dataclass(frozen=True)
class DiscriminatorConfig:
    height: int = 64
    width: int = 32
    levels: int = 3
    base_channels: int = 32
    channel_multiplier: float = 2.0
    max_channels: int = 128
    fpn_channels: int = 32
    dense_dim: int = 64
    embed_channels: int = 16

    def __post_init__(self):
        if self.levels < 3:
            raise ValueError("discriminator needs at least 3 levels for the pyramid head")
        down = 2 ** self.levels  # trunk levels plus the final pool
        if self.height % down or self.width % down:
            raise ValueError(
                f"resolution {self.height}x{self.width} not divisible by {down}")

    def channels(self, level: int) -> int:
        return min(int(self.base_channels * self.channel_multiplier ** level),
                   self.max_channels)


class DownBlock(nn.Module):
    """Residual block with 2x downsampling: (main + skip) / sqrt(2)."""

    def __init__(self, in_channels: int, out_channels: int,
                 generator: torch.Generator | None = None):
        super().__init__()
        self.conv1 = EqualizedConv2d(in_channels, in_channels, 3, padding=1,
                                     generator=generator)
        self.conv2 = EqualizedConv2d(in_channels, out_channels, 3, padding=1,
                                     generator=generator)
        self.skip = EqualizedConv2d(in_channels, out_channels, 1, bias=False,
                                    generator=generator)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = F.leaky_relu(self.conv1(x), 0.2)
        h = F.leaky_relu(self.conv2(F.avg_pool2d(h, 2)), 0.2)
        s = self.skip(F.avg_pool2d(x, 2))
        return (h + s) * (1.0 / math.sqrt(2.0))


class DiscriminatorOutput(NamedTuple):
    logit: torch.Tensor
    e_hat: torch.Tensor


class Discriminator(nn.Module):
    def __init__(self, config: DiscriminatorConfig,
                 generator: torch.Generator | None = None):
        super().__init__()
        self.config = config
        c = config.channels
        self.from_rgb = EqualizedConv2d(6, c(0), 3, padding=1, generator=generator)
        self.blocks = nn.ModuleList(
            DownBlock(c(lvl), c(lvl + 1), generator=generator)
            for lvl in range(config.levels - 1))
        bottom_c = c(config.levels - 1)
        self.final_conv = EqualizedConv2d(bottom_c, bottom_c, 3, padding=1,
                                          generator=generator)
        bottom_h = config.height // 2 ** config.levels
        bottom_w = config.width // 2 ** config.levels
        self.dense = EqualizedLinear(bottom_c * bottom_h * bottom_w,
                                     config.dense_dim, generator=generator)
        self.logit_out = EqualizedLinear(config.dense_dim, 1, generator=generator)
        # Pyramid head over the three finest trunk features.
        fc = config.fpn_channels
        self.laterals = nn.ModuleList(
            EqualizedConv2d(c(lvl), fc, 1, generator=generator) for lvl in range(3))
        self.fusions = nn.ModuleList(
            EqualizedConv2d(fc, fc, 3, padding=1, generator=generator)
            for _ in range(3))
        self.embed_out = EqualizedConv2d(fc, config.embed_channels, 1,
                                         generator=generator)

    def forward(self, image: torch.Tensor, mask_onehot: torch.Tensor
                ) -> DiscriminatorOutput:
        if image.ndim != 4 or image.shape[1] != 3:
            raise ValueError(f"image must be (B, 3, H, W), got {tuple(image.shape)}")
        if mask_onehot.shape != (image.shape[0], 3, *image.shape[2:]):
            raise ValueError("mask planes do not match image shape")
        if image.abs().max().item() > 1.0 + 1e-5:
            raise ValueError("image values must lie in [-1, 1]")
        x = F.leaky_relu(self.from_rgb(torch.cat([image, mask_onehot], dim=1)), 0.2)
        feats = [x]
        for block in self.blocks:
            x = block(x)
            feats.append(x)
        h = F.leaky_relu(self.final_conv(F.avg_pool2d(x, 2)), 0.2)
        h = F.leaky_relu(self.dense(h.flatten(1)), 0.2)
        logit = self.logit_out(h).squeeze(1)

        # Top-down: coarsest lateral first, upsample, add, fuse per level.
        p = F.leaky_relu(self.fusions[2](self.laterals[2](feats[2])), 0.2)
        p = F.interpolate(p, scale_factor=2, mode="bilinear", align_corners=False)
        p = F.leaky_relu(self.fusions[1](p + self.laterals[1](feats[1])), 0.2)
        p = F.interpolate(p, scale_factor=2, mode="bilinear", align_corners=False)
        p = F.leaky_relu(self.fusions[0](p + self.laterals[0](feats[0])), 0.2)
        e_hat = self.embed_out(p)
        return DiscriminatorOutput(logit=logit, e_hat=e_hat)


def discriminate(image: torch.Tensor, mask_onehot: torch.Tensor,
                 net: Discriminator) -> DiscriminatorOutput:
    if image.ndim == 3:
        out = net(image.unsqueeze(0), mask_onehot.unsqueeze(0))
        return DiscriminatorOutput(out.logit.squeeze(0), out.e_hat.squeeze(0))
    return net(image, mask_onehot)


class SurfaceLossResult(NamedTuple):
    value: torch.Tensor
    degenerate: bool
    body_pixels: int


def smooth_l1(diff: torch.Tensor, beta: float = SMOOTH_L1_BETA) -> torch.Tensor:
    """Elementwise: 0.5 d^2 / beta for |d| < beta, else |d| - 0.5 beta."""
    a = diff.abs()
    return torch.where(a < beta, 0.5 * diff * diff / beta, a - 0.5 * beta)


def surface_loss(e_hat: torch.Tensor, target: torch.Tensor, body: torch.Tensor,
                 beta: float = SMOOTH_L1_BETA) -> SurfaceLossResult:
    """Masked embedding regression: smooth-L1 summed over channels, mean over
    BODY pixels. Pixels outside BODY contribute exactly zero (and receive
    exactly zero gradient) because they are never gathered.
    """
    if e_hat.ndim == 3:
        e_hat = e_hat.unsqueeze(0)
        target = target.unsqueeze(0)
        body = body.unsqueeze(0)
    if e_hat.shape != target.shape:
        raise ValueError(f"prediction {tuple(e_hat.shape)} does not match "
                         f"target {tuple(target.shape)}")
    if body.shape != (e_hat.shape[0], *e_hat.shape[2:]):
        raise ValueError("body mask shape does not match prediction planes")
    n = int(body.sum())
    if n == 0:
        return SurfaceLossResult(torch.zeros((), dtype=e_hat.dtype), True, 0)
    pred = e_hat.permute(0, 2, 3, 1)[body]
    ref = target.permute(0, 2, 3, 1)[body]
    value = smooth_l1(pred - ref, beta).sum(dim=1).mean()
    return SurfaceLossResult(value, False, n)


def embedding_targets(anns: list[SurfaceAnnotation]) -> tuple[torch.Tensor, torch.Tensor]:
    """Stack per-annotation embedding targets and BODY masks as tensors."""
    target = torch.stack([
        torch.from_numpy(np.ascontiguousarray(a.embeddings.data.transpose(2, 0, 1)))
        for a in anns])
    body = torch.stack([torch.from_numpy(a.mask.body) for a in anns])
    return target, body


def generator_surface_loss(fake_image: torch.Tensor, mask_onehot: torch.Tensor,
                           target: torch.Tensor, body: torch.Tensor,
                           disc: nn.Module, beta: float = SMOOTH_L1_BETA
                           ) -> SurfaceLossResult:
    """Surface regression on generated images; gradients reach the generator
    only. The critic's parameters are frozen for the call."""
    states = [p.requires_grad for p in disc.parameters()]
    try:
        for p in disc.parameters():
            p.requires_grad_(False)
        out = disc(fake_image, mask_onehot)
        return surface_loss(out.e_hat, target, body, beta)
    finally:
        for p, s in zip(disc.parameters(), states):
            p.requires_grad_(s)
