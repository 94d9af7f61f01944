"""Joint data augmentation for annotations.

Spatial transforms move all three planes by the same map; embeddings are
values tied to pixels, so they are moved, never mixed across channels.
Color jitter touches the image plane only. Geometric transforms are
limited to integer translations so embedding rasters stay exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .surface import EmbeddingRaster, Region, RegionMask, SurfaceAnnotation


@dataclass(frozen=True)
class AugmentConfig:
    hflip: bool = True
    geometric: bool = True
    color: bool = True
    max_shift_fraction: float = 0.125
    color_scale: float = 0.1
    color_shift: float = 0.1


def hflip_annotation(ann: SurfaceAnnotation) -> SurfaceAnnotation:
    return SurfaceAnnotation(
        image=ann.image[:, ::-1].copy(),
        embeddings=EmbeddingRaster(data=ann.embeddings.data[:, ::-1].copy(),
                                   valid=ann.embeddings.valid[:, ::-1].copy()),
        mask=RegionMask(ann.mask.classes[:, ::-1].copy()))


def translate_annotation(ann: SurfaceAnnotation, dy: int, dx: int) -> SurfaceAnnotation:
    """Integer shift of all planes. Vacated pixels become KNOWN context with
    edge-replicated image content and no embedding."""
    h, w = ann.mask.classes.shape
    if abs(dy) >= h or abs(dx) >= w:
        raise ValueError("translation larger than the canvas")

    def shift(plane, fill):
        out = np.full_like(plane, fill)
        ys = slice(max(dy, 0), h + min(dy, 0))
        xs = slice(max(dx, 0), w + min(dx, 0))
        ys_src = slice(max(-dy, 0), h + min(-dy, 0))
        xs_src = slice(max(-dx, 0), w + min(-dx, 0))
        out[ys, xs] = plane[ys_src, xs_src]
        return out

    pad_y = (max(dy, 0), max(-dy, 0))
    pad_x = (max(dx, 0), max(-dx, 0))
    padded = np.pad(ann.image, (pad_y, pad_x, (0, 0)), mode="edge")
    image = padded[pad_y[1]:pad_y[1] + h, pad_x[1]:pad_x[1] + w]
    mask = shift(ann.mask.classes, Region.KNOWN)
    valid = shift(ann.embeddings.valid, False)
    data = np.zeros_like(ann.embeddings.data)
    ys = slice(max(dy, 0), h + min(dy, 0))
    xs = slice(max(dx, 0), w + min(dx, 0))
    data[ys, xs] = ann.embeddings.data[max(-dy, 0):h + min(-dy, 0),
                                       max(-dx, 0):w + min(-dx, 0)]
    data[~valid] = 0.0
    return SurfaceAnnotation(image=image.copy(),
                             embeddings=EmbeddingRaster(data=data, valid=valid),
                             mask=RegionMask(mask))


def color_jitter(ann: SurfaceAnnotation, rng: np.random.Generator,
                 scale: float = 0.1, shift: float = 0.1) -> SurfaceAnnotation:
    factors = rng.uniform(1.0 - scale, 1.0 + scale, 3).astype(np.float32)
    offsets = rng.uniform(-shift, shift, 3).astype(np.float32)
    image = np.clip(ann.image * factors + offsets, -1.0, 1.0)
    return SurfaceAnnotation(image=image, embeddings=ann.embeddings, mask=ann.mask)


def augment(ann: SurfaceAnnotation, rng: np.random.Generator,
            config: AugmentConfig = AugmentConfig()) -> SurfaceAnnotation:
    """Draw and apply one augmentation; deterministic in the rng state."""
    if config.hflip and rng.random() < 0.5:
        ann = hflip_annotation(ann)
    if config.geometric:
        h, w = ann.mask.classes.shape
        max_dy = int(h * config.max_shift_fraction)
        max_dx = int(w * config.max_shift_fraction)
        dy = int(rng.integers(-max_dy, max_dy + 1))
        dx = int(rng.integers(-max_dx, max_dx + 1))
        if dy or dx:
            ann = translate_annotation(ann, dy, dx)
    if config.color:
        ann = color_jitter(ann, rng, config.color_scale, config.color_shift)
    return ann
