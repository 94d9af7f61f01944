"""U-Net image completion generator steered by the per-pixel latent field.

Every convolution is preceded by pixel-wise modulation and followed by
normalization; the latent field is average-pooled to each resolution. The
decoder-only variant drops the image input entirely and synthesizes from
the mask and latent field alone, which keeps it fully convolutional.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .layers import EqualizedConv2d
from .mapping import StyleField
from .modulation import StyleProjection, modulate, normalize, styles
from .surface import Region, SurfaceAnnotation

MODE_INPAINT = "inpaint"
MODE_DECODER_ONLY = "decoder_only"
MOD_VSAM = "vsam"
MOD_SAM = "sam"


@dataclass(frozen=True)
class GeneratorConfig:
    height: int = 64
    width: int = 32
    levels: int = 3
    base_channels: int = 48
    channel_multiplier: float = 2.0
    max_channels: int = 128
    blocks_per_level: int = 2
    mode: str = MODE_INPAINT
    modulation: str = MOD_VSAM
    omega_dim: int = 64
    z_dim: int = 32
    z_channels: int = 8

    def __post_init__(self):
        down = 2 ** (self.levels - 1)
        if self.height % down or self.width % down:
            raise ValueError(
                f"resolution {self.height}x{self.width} not divisible by {down}")
        if self.mode not in (MODE_INPAINT, MODE_DECODER_ONLY):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.modulation not in (MOD_VSAM, MOD_SAM):
            raise ValueError(f"unknown modulation {self.modulation!r}")

    def channels(self, level: int) -> int:
        return min(int(self.base_channels * self.channel_multiplier ** level),
                   self.max_channels)


class ModulatedBlock(nn.Module):
    """modulate -> 3x3 conv (no bias) -> normalize -> leaky relu.

    The conv bias would be cancelled by the normalization; the next layer's
    beta supplies the shift instead.
    """

    def __init__(self, in_channels: int, out_channels: int, omega_dim: int,
                 generator: torch.Generator | None = None):
        super().__init__()
        self.proj = StyleProjection(omega_dim, in_channels, generator=generator)
        self.conv = EqualizedConv2d(in_channels, out_channels, 3, padding=1,
                                    bias=False, generator=generator)

    def forward(self, x: torch.Tensor, omega: torch.Tensor) -> torch.Tensor:
        gamma, beta = styles(omega, self.proj)
        h = self.conv(modulate(x, gamma, beta))
        return F.leaky_relu(normalize(h), 0.2)


class ToRGB(nn.Module):
    """modulate -> 1x1 conv -> tanh; keeps its bias (no normalization after)."""

    def __init__(self, in_channels: int, omega_dim: int,
                 generator: torch.Generator | None = None):
        super().__init__()
        self.proj = StyleProjection(omega_dim, in_channels, generator=generator)
        self.conv = EqualizedConv2d(in_channels, 3, 1, generator=generator)

    def forward(self, x: torch.Tensor, omega: torch.Tensor) -> torch.Tensor:
        gamma, beta = styles(omega, self.proj)
        return torch.tanh(self.conv(modulate(x, gamma, beta)))


def _level_stack(config: GeneratorConfig, in_channels: int, level: int,
                 generator: torch.Generator | None) -> nn.ModuleList:
    out = config.channels(level)
    blocks = []
    for i in range(config.blocks_per_level):
        blocks.append(ModulatedBlock(in_channels if i == 0 else out, out,
                                     config.omega_dim, generator=generator))
    return nn.ModuleList(blocks)


class Generator(nn.Module):
    """Image completion network; `mode` selects U-Net or decoder-only."""

    def __init__(self, config: GeneratorConfig,
                 generator: torch.Generator | None = None):
        super().__init__()
        self.config = config
        c = config.channels
        levels = config.levels
        if config.mode == MODE_INPAINT:
            # Masked image (3) + mask one-hot (3).
            self.encoder = nn.ModuleList(
                _level_stack(config, 6 if lvl == 0 else c(lvl - 1), lvl, generator)
                for lvl in range(levels))
        else:
            # Pooled mask one-hot only; the latent field carries the rest.
            self.encoder = None
            self.seed_blocks = _level_stack(config, 3, levels - 1, generator)
        if config.modulation == MOD_SAM:
            bottom_h = config.height // 2 ** (levels - 1)
            bottom_w = config.width // 2 ** (levels - 1)
            self.z_proj = nn.Linear(config.z_dim,
                                    config.z_channels * bottom_h * bottom_w)
            self._bottom = (bottom_h, bottom_w)
            merge_in = c(levels - 1) + config.z_channels
        else:
            self.z_proj = None
            merge_in = c(levels - 1)
        self.bottleneck = ModulatedBlock(merge_in, c(levels - 1),
                                         config.omega_dim, generator=generator)
        decoder = []
        for lvl in range(levels - 2, -1, -1):
            skip = c(lvl) if config.mode == MODE_INPAINT else 0
            decoder.append(_level_stack(config, c(lvl + 1) + skip, lvl, generator))
        self.decoder = nn.ModuleList(decoder)
        self.to_rgb = ToRGB(c(0), config.omega_dim, generator=generator)

    def _omega_pyramid(self, omega: torch.Tensor) -> list[torch.Tensor]:
        pyramid = [omega]
        for _ in range(self.config.levels - 1):
            pyramid.append(F.avg_pool2d(pyramid[-1], 2))
        return pyramid

    def _z_map(self, z: torch.Tensor | None, batch: int,
               dtype: torch.dtype) -> torch.Tensor | None:
        if self.z_proj is None:
            return None
        if z is None:
            raise ValueError("spatial-z generator requires a latent code")
        z = torch.as_tensor(z, dtype=dtype)
        if z.ndim == 1:
            z = z.unsqueeze(0).expand(batch, -1)
        h, w = self._bottom
        return self.z_proj(z).reshape(batch, self.config.z_channels, h, w)

    def forward(self, image_planes: torch.Tensor | None, mask_onehot: torch.Tensor,
                omega: torch.Tensor, z: torch.Tensor | None = None) -> torch.Tensor:
        cfg = self.config
        pyramid = self._omega_pyramid(omega)
        if cfg.mode == MODE_INPAINT:
            if image_planes is None:
                raise ValueError("inpainting generator requires image planes")
            x = torch.cat([image_planes, mask_onehot], dim=1)
            skips = []
            for lvl, stack in enumerate(self.encoder):
                if lvl > 0:
                    x = F.avg_pool2d(x, 2)
                for block in stack:
                    x = block(x, pyramid[lvl])
                skips.append(x)
            x = skips[-1]
        else:
            if image_planes is not None:
                raise ValueError("decoder-only generator takes no image planes")
            x = F.avg_pool2d(mask_onehot, 2 ** (cfg.levels - 1))
            for block in self.seed_blocks:
                x = block(x, pyramid[-1])
            skips = None
        zmap = self._z_map(z, x.shape[0], x.dtype)
        if zmap is not None:
            x = torch.cat([x, zmap], dim=1)
        x = self.bottleneck(x, pyramid[-1])
        for i, stack in enumerate(self.decoder):
            lvl = cfg.levels - 2 - i
            x = F.interpolate(x, scale_factor=2, mode="bilinear",
                              align_corners=False)
            if skips is not None:
                x = torch.cat([x, skips[lvl]], dim=1)
            for block in stack:
                x = block(x, pyramid[lvl])
        return self.to_rgb(x, pyramid[0])


@dataclass
class GeneratorInput:
    """Batched tensors for one generator call.

    masked_image has exact zeros on every pixel the generator must fill;
    mask_onehot planes are ordered (known, body, dilated).
    """

    masked_image: torch.Tensor | None
    mask_onehot: torch.Tensor
    omega: torch.Tensor
    original_image: torch.Tensor | None = None
    z: torch.Tensor | None = None

    def __post_init__(self):
        if self.masked_image is not None:
            known = self.mask_onehot[:, :1]
            hole = self.masked_image * (1.0 - known)
            if hole.abs().max().item() != 0.0:
                raise ValueError("masked image must be exactly zero on fill pixels")


def mask_onehot_tensor(classes: np.ndarray) -> torch.Tensor:
    planes = np.stack([classes == Region.KNOWN,
                       classes == Region.BODY,
                       classes == Region.DILATED]).astype(np.float32)
    return torch.from_numpy(planes)


def image_tensor(image: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(image.transpose(2, 0, 1)))


def build_generator_input(anns: list[SurfaceAnnotation],
                          fields: list[StyleField],
                          z: torch.Tensor | np.ndarray | None = None,
                          with_image: bool = True) -> GeneratorInput:
    masks = torch.stack([mask_onehot_tensor(a.mask.classes) for a in anns])
    omega = torch.stack([f.omega for f in fields])
    original = None
    masked = None
    if with_image:
        original = torch.stack([image_tensor(a.image) for a in anns])
        known = masks[:, :1]
        masked = torch.where(known.bool(), original, torch.zeros(()))
    z_t = None if z is None else torch.as_tensor(np.asarray(z), dtype=omega.dtype)
    return GeneratorInput(masked_image=masked, mask_onehot=masks, omega=omega,
                          original_image=original, z=z_t)


def generate(gen_input: GeneratorInput, net: Generator) -> torch.Tensor:
    """Run the network and composite: KNOWN pixels keep the original image."""
    raw = net(gen_input.masked_image, gen_input.mask_onehot, gen_input.omega,
              gen_input.z)
    if net.config.mode == MODE_DECODER_ONLY:
        return raw
    known = gen_input.mask_onehot[:, :1].bool()
    return torch.where(known, gen_input.original_image, raw)


def generate_decoder_only(gen_input: GeneratorInput, net: Generator) -> torch.Tensor:
    if net.config.mode != MODE_DECODER_ONLY:
        raise ValueError("generator was not built in decoder-only mode")
    return net(None, gen_input.mask_onehot, gen_input.omega, gen_input.z)


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def full_scale_base_config() -> GeneratorConfig:
    """Full-resolution wiring preset; parameter count sanity target ~7.4M
    including the default-width mapping network."""
    return GeneratorConfig(height=288, width=160, levels=5, base_channels=32,
                           channel_multiplier=2.0, max_channels=256,
                           blocks_per_level=1, omega_dim=512, z_dim=512)


def full_scale_large_config() -> GeneratorConfig:
    """Enlarged preset; parameter count sanity target ~39.4M."""
    return GeneratorConfig(height=288, width=160, levels=5, base_channels=64,
                           channel_multiplier=2.0, max_channels=768,
                           blocks_per_level=2, omega_dim=512, z_dim=512)


def desk_config(**overrides) -> GeneratorConfig:
    """Small trainable configuration used by tests and the benchmark."""
    return GeneratorConfig(**overrides)
