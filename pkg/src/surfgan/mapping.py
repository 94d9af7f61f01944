"""Global mapping from surface embeddings (and optionally a latent code)
to the per-pixel intermediate latent field that modulates the generator.

Pixels without a surface embedding receive one of two learned vectors:
one for untouched context pixels and one for the dilated rim, which lets
the generator blend generated content into its surroundings.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .layers import EqualizedLinear
from .surface import (
    EMBED_CHANNELS,
    Region,
    SurfaceAnnotation,
    VertexTable,
    is_discretized,
    nearest_index_raster,
)


@dataclass(frozen=True)
class MappingConfig:
    depth: int = 6
    width: int = 512
    out_dim: int = 512
    variational: bool = True
    z_dim: int = 512
    in_channels: int = EMBED_CHANNELS

    def __post_init__(self):
        if self.depth < 0:
            raise ValueError("depth must be >= 0")
        if min(self.width, self.out_dim, self.z_dim) < 1:
            raise ValueError("width, out_dim and z_dim must be >= 1")

    @property
    def input_dim(self) -> int:
        return self.in_channels + (self.z_dim if self.variational else 0)


class ResidualBlock(nn.Module):
    """y = (x + FC(lrelu(x))) / sqrt(2); variance preserving."""

    def __init__(self, width: int, generator: torch.Generator | None = None):
        super().__init__()
        self.fc = EqualizedLinear(width, width, generator=generator)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        y = self.fc(torch.nn.functional.leaky_relu(x, 0.2))
        return (x + y) * (1.0 / math.sqrt(2.0))


class MappingNetwork(nn.Module):
    """Residual MLP over (embedding[, z]) plus the learned context vectors.

    depth 0 collapses to a single affine projection of the input; depth n
    stacks n residual blocks between an input and an output projection.
    """

    omega_mean: torch.Tensor
    omega_updates: torch.Tensor

    def __init__(self, config: MappingConfig,
                 generator: torch.Generator | None = None):
        super().__init__()
        self.config = config
        if config.depth == 0:
            self.in_proj = EqualizedLinear(config.input_dim, config.out_dim,
                                           generator=generator)
            self.blocks = nn.ModuleList()
            self.out_proj = None
        else:
            self.in_proj = EqualizedLinear(config.input_dim, config.width,
                                           generator=generator)
            self.blocks = nn.ModuleList(
                ResidualBlock(config.width, generator=generator)
                for _ in range(config.depth))
            self.out_proj = EqualizedLinear(config.width, config.out_dim,
                                            generator=generator)
        self.omega_known = nn.Parameter(
            torch.randn(config.out_dim, generator=generator) * 0.1)
        self.omega_dilated = nn.Parameter(
            torch.randn(config.out_dim, generator=generator) * 0.1)
        if torch.equal(self.omega_known, self.omega_dilated):
            raise RuntimeError("context vectors initialized identically")
        self.register_buffer("omega_mean", torch.zeros(config.out_dim))
        self.register_buffer("omega_updates", torch.zeros((), dtype=torch.long))

    def forward(self, e: torch.Tensor, z: torch.Tensor | None) -> torch.Tensor:
        """Map N x C embeddings (plus one shared z) to N x D latents."""
        if e.ndim != 2 or e.shape[1] != self.config.in_channels:
            raise ValueError(
                f"expected N x {self.config.in_channels} embeddings, got {tuple(e.shape)}")
        if self.config.variational:
            if z is None:
                raise ValueError("variational mapping requires a latent code")
            z = torch.as_tensor(z, dtype=e.dtype, device=e.device)
            if z.shape != (self.config.z_dim,):
                raise ValueError(
                    f"latent code must have shape ({self.config.z_dim},), got {tuple(z.shape)}")
            x = torch.cat([e, z.unsqueeze(0).expand(e.shape[0], -1)], dim=1)
        else:
            if z is not None:
                raise ValueError("non-variational mapping takes no latent code")
            x = e
        x = self.in_proj(x)
        for block in self.blocks:
            x = block(x)
        if self.out_proj is not None:
            x = self.out_proj(x)
        return x


@dataclass(frozen=True)
class StyleField:
    """Per-pixel intermediate latents (D x H x W) plus the region classes."""

    omega: torch.Tensor
    classes: np.ndarray

    def __post_init__(self):
        if self.omega.ndim != 3:
            raise ValueError("style field must be D x H x W")
        if self.omega.shape[1:] != self.classes.shape:
            raise ValueError("style field spatial shape differs from class plane")


def map_core(e: np.ndarray | torch.Tensor, z: np.ndarray | torch.Tensor | None,
             net: MappingNetwork) -> torch.Tensor:
    """Single-embedding convenience wrapper around the batched forward."""
    dtype = next(net.parameters()).dtype
    e_t = torch.as_tensor(np.asarray(e), dtype=dtype)
    if e_t.ndim != 1:
        raise ValueError("map_core takes a single embedding vector")
    if not torch.isfinite(e_t).all():
        raise ValueError("embedding contains non-finite values")
    z_t = None if z is None else torch.as_tensor(np.asarray(z), dtype=dtype)
    return net(e_t.unsqueeze(0), z_t).squeeze(0)


def _context_field(net: MappingNetwork, classes: np.ndarray,
                   dtype: torch.dtype) -> torch.Tensor:
    # Index assignment keeps the graph alive so the context vectors and the
    # mapping network both train through the assembled field.
    h, w = classes.shape
    omega = torch.zeros(net.config.out_dim, h, w, dtype=dtype)
    known = torch.from_numpy(classes == Region.KNOWN)
    dil = torch.from_numpy(classes == Region.DILATED)
    omega[:, known] = net.omega_known.to(dtype).unsqueeze(1)
    omega[:, dil] = net.omega_dilated.to(dtype).unsqueeze(1)
    return omega


def map_field(ann: SurfaceAnnotation, z: np.ndarray | torch.Tensor | None,
              net: MappingNetwork) -> StyleField:
    """Per-pixel latents: mapped on BODY, learned constants elsewhere."""
    dtype = next(net.parameters()).dtype
    classes = ann.mask.classes
    omega = _context_field(net, classes, dtype)
    body = ann.mask.body
    if body.any():
        e = torch.as_tensor(ann.embeddings.data[body], dtype=dtype)
        z_t = None if z is None else torch.as_tensor(np.asarray(z), dtype=dtype)
        mapped = net(e, z_t)
        omega[:, torch.from_numpy(body)] = mapped.t()
    return StyleField(omega=omega, classes=classes.copy())


def map_vertices(table: VertexTable, z: np.ndarray | torch.Tensor | None,
                 net: MappingNetwork) -> torch.Tensor:
    """Map every table row once; resolution-independent precomputation."""
    dtype = next(net.parameters()).dtype
    rows = torch.as_tensor(table.embeddings, dtype=dtype)
    z_t = None if z is None else torch.as_tensor(np.asarray(z), dtype=dtype)
    return net(rows, z_t)


def gather_field(vertex_latents: torch.Tensor, ann: SurfaceAnnotation,
                 table: VertexTable, net: MappingNetwork) -> StyleField:
    """Look up precomputed per-vertex latents through nearest indices.

    Requires a discretized annotation; agrees with map_field to within
    accumulation-order noise.
    """
    if not is_discretized(ann.embeddings, table):
        raise ValueError("annotation embeddings are not discretized to the table")
    classes = ann.mask.classes
    omega = _context_field(net, classes, vertex_latents.dtype)
    body = ann.mask.body
    if body.any():
        indices = nearest_index_raster(ann.embeddings, table)
        idx = torch.from_numpy(indices[body].astype(np.int64))
        omega[:, torch.from_numpy(body)] = vertex_latents[idx].t()
    return StyleField(omega=omega, classes=classes.copy())


def truncate(field: StyleField, net: MappingNetwork, t: float) -> StyleField:
    """Pull BODY latents toward the running mean by factor t.

    t=1 returns the field unchanged; t=0 collapses every BODY pixel onto
    the mean exactly. Context pixels are never touched.
    """
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"truncation factor must be in [0, 1], got {t}")
    if int(net.omega_updates) == 0:
        raise RuntimeError("running latent mean has never been updated")
    if t == 1.0:
        return field
    omega = field.omega.clone()
    body = torch.from_numpy(field.classes == Region.BODY)
    mean = net.omega_mean.detach().to(omega.dtype).unsqueeze(1)
    omega[:, body] = mean + t * (omega[:, body] - mean)
    return StyleField(omega=omega, classes=field.classes.copy())


def update_omega_mean(net: MappingNetwork, body_latents: torch.Tensor,
                      decay: float = 0.995) -> None:
    """EMA over BODY-pixel latents: new = decay * old + (1 - decay) * batch mean."""
    if body_latents.numel() == 0:
        return
    with torch.no_grad():
        batch_mean = body_latents.detach().mean(dim=0).to(net.omega_mean.dtype)
        net.omega_mean.copy_(decay * net.omega_mean + (1.0 - decay) * batch_mean)
        net.omega_updates.add_(1)


def interpolate_z(z0: np.ndarray, z1: np.ndarray, steps: int) -> np.ndarray:
    """Evenly spaced linear path from z0 to z1 inclusive; endpoints exact."""
    z0 = np.asarray(z0)
    z1 = np.asarray(z1)
    if z0.shape != z1.shape:
        raise ValueError("endpoint latent codes have different shapes")
    if steps < 2:
        raise ValueError("need at least 2 interpolation steps")
    ts = np.linspace(0.0, 1.0, steps, dtype=z0.dtype)
    return (1.0 - ts)[:, None] * z0[None, :] + ts[:, None] * z1[None, :]


def sample_z(rng: np.random.Generator, z_dim: int) -> np.ndarray:
    """Standard normal latent code."""
    return rng.standard_normal(z_dim).astype(np.float32)
