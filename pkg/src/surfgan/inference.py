"""Checkpoint-backed generation for the pipeline and the eval harness."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch

from .checkpoint import load_module_records, read_records
from .generator import Generator, build_generator_input, generate
from .mapping import MappingNetwork, map_field, truncate
from .surface import SurfaceAnnotation
from .training import checkpoint_configs


class InpaintModel:
    """Frozen generator plus mapping network behind a one-call interface."""

    def __init__(self, mapping: MappingNetwork, gen: Generator):
        self.mapping = mapping.eval()
        self.gen = gen.eval()
        for p in self.mapping.parameters():
            p.requires_grad_(False)
        for p in self.gen.parameters():
            p.requires_grad_(False)

    @property
    def z_dim(self) -> int:
        return self.mapping.config.z_dim

    @property
    def resolution(self) -> tuple[int, int]:
        return (self.gen.config.height, self.gen.config.width)

    @classmethod
    def from_checkpoint(cls, path: Path, use_ema: bool = True) -> "InpaintModel":
        _, config, records = read_records(path)
        map_cfg, gen_cfg, _, _ = checkpoint_configs(config)
        mapping = MappingNetwork(map_cfg)
        gen = Generator(gen_cfg)
        prefix_map = "ema_map" if use_ema else "map"
        prefix_gen = "ema_gen" if use_ema else "gen"
        load_module_records(prefix_map, mapping, records)
        load_module_records(prefix_gen, gen, records)
        return cls(mapping, gen)

    def generate(self, ann: SurfaceAnnotation, z: np.ndarray,
                 truncation: float = 1.0) -> np.ndarray:
        """Composite completion of one annotation, H x W x 3 in [-1, 1]."""
        if (ann.height, ann.width) != self.resolution:
            raise ValueError(
                f"annotation is {ann.height}x{ann.width}, model expects "
                f"{self.resolution[0]}x{self.resolution[1]}")
        with torch.no_grad():
            z_field = z if self.mapping.config.variational else None
            field = map_field(ann, z_field, self.mapping)
            if truncation != 1.0:
                field = truncate(field, self.mapping, truncation)
            gin = build_generator_input([ann], [field], z=z)
            out = generate(gin, self.gen)
        return np.ascontiguousarray(out[0].numpy().transpose(1, 2, 0))
