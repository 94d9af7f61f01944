"""Quantitative checks: equivariance-under-transform PSNR study, sample
diversity proxy, and image grid emission.

The study measures, per sample, the PSNR between transform-then-generate
and generate-then-transform with a fixed latent per pair. Pixels that a
transform maps from outside the canvas are excluded on both paths.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .augment import hflip_annotation, translate_annotation
from .mapping import sample_z
from .surface import (
    EmbeddingRaster,
    Region,
    RegionMask,
    SurfaceAnnotation,
    image_to_uint8,
)

PSNR_CAP_DB = 100.0
PSNR_RANGE = 2.0  # images live in [-1, 1]

FAMILIES = ("translation", "rotation", "hflip")


def psnr(a: np.ndarray, b: np.ndarray, valid: np.ndarray | None = None) -> float:
    """10 log10(range^2 / MSE) in dB, capped at 100; optional pixel mask."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    if valid is not None:
        if valid.shape != a.shape[:2]:
            raise ValueError("validity plane does not match image shape")
        if not valid.any():
            raise ValueError("validity plane excludes every pixel")
        a = a[valid]
        b = b[valid]
    mse = float(np.mean((a - b) ** 2))
    if mse <= 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * math.log10(PSNR_RANGE ** 2 / mse))


@dataclass(frozen=True)
class InvarianceReport:
    family: str
    mean_psnr: float
    per_sample: tuple[float, ...]
    samples: int
    seed: int

    def to_dict(self) -> dict:
        return dataclasses.asdict(self) | {"per_sample": list(self.per_sample)}


def translate_with_validity(ann: SurfaceAnnotation, dy: int, dx: int
                            ) -> tuple[SurfaceAnnotation, np.ndarray]:
    out = translate_annotation(ann, dy, dx)
    valid = np.zeros((ann.height, ann.width), dtype=bool)
    ys = slice(max(dy, 0), ann.height + min(dy, 0))
    xs = slice(max(dx, 0), ann.width + min(dx, 0))
    valid[ys, xs] = True
    return out, valid


def translate_image(image: np.ndarray, dy: int, dx: int) -> np.ndarray:
    h, w = image.shape[:2]
    out = np.zeros_like(image)
    ys = slice(max(dy, 0), h + min(dy, 0))
    xs = slice(max(dx, 0), w + min(dx, 0))
    out[ys, xs] = image[max(-dy, 0):h + min(-dy, 0), max(-dx, 0):w + min(-dx, 0)]
    return out


def rotate_image(image: np.ndarray, degrees: float) -> np.ndarray:
    out = ndimage.rotate(image, degrees, reshape=False, order=1,
                         mode="constant", cval=0.0)
    return np.clip(out, -1.0, 1.0).astype(np.float32)


def rotate_with_validity(ann: SurfaceAnnotation, degrees: float
                         ) -> tuple[SurfaceAnnotation, np.ndarray]:
    """Bilinear image, nearest-neighbour embeddings and mask; out-of-canvas
    pixels become plain context and are reported invalid."""
    image = rotate_image(ann.image, degrees)
    classes = ndimage.rotate(ann.mask.classes, degrees, reshape=False, order=0,
                             mode="constant", cval=int(Region.KNOWN))
    data = ndimage.rotate(ann.embeddings.data, degrees, reshape=False, order=0,
                          mode="constant", cval=0.0)
    valid_plane = ndimage.rotate(np.ones(ann.mask.classes.shape, dtype=np.uint8),
                                 degrees, reshape=False, order=0,
                                 mode="constant", cval=0) > 0
    body = classes == Region.BODY
    data[~body] = 0.0
    out = SurfaceAnnotation(image=image,
                            embeddings=EmbeddingRaster(data=data, valid=body),
                            mask=RegionMask(classes.astype(np.uint8)))
    return out, valid_plane


def _draw_transform(family: str, rng: np.random.Generator, h: int, w: int):
    """Returns (apply_to_annotation, apply_to_image, validity)."""
    if family == "translation":
        dy = int(rng.integers(-h // 8, h // 8 + 1))
        dx = int(rng.integers(-w // 8, w // 8 + 1))
        return (lambda ann: translate_with_validity(ann, dy, dx),
                lambda img: translate_image(img, dy, dx))
    if family == "rotation":
        degrees = float(rng.uniform(-90.0, 90.0))
        return (lambda ann: rotate_with_validity(ann, degrees),
                lambda img: rotate_image(img, degrees))
    if family == "hflip":
        return (lambda ann: (hflip_annotation(ann),
                             np.ones((h, w), dtype=bool)),
                lambda img: img[:, ::-1].copy())
    raise ValueError(f"unknown transform family {family!r}; "
                     f"expected one of {FAMILIES}")


def invariance_study(model, dataset, family: str, n_samples: int,
                     seed: int = 0) -> InvarianceReport:
    """Mean PSNR between t(G(x)) and G(t(x)) over drawn samples and transforms."""
    if n_samples < 1:
        raise ValueError("need at least one sample")
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    rng = np.random.default_rng((seed, 71))
    scores = []
    for k in range(n_samples):
        ann = dataset.load(int(rng.integers(0, len(dataset))))
        transform_ann, transform_img = _draw_transform(family, rng,
                                                       ann.height, ann.width)
        z = sample_z(rng, model.z_dim)
        generated = model.generate(ann, z)
        path_a = transform_img(generated)
        t_ann, valid = transform_ann(ann)
        path_b = model.generate(t_ann, z)
        scores.append(psnr(path_a, path_b, valid=valid))
    return InvarianceReport(family=family,
                            mean_psnr=float(np.mean(scores)),
                            per_sample=tuple(scores),
                            samples=n_samples, seed=seed)


def diversity_proxy(model, ann: SurfaceAnnotation, n: int = 6, seed: int = 0,
                    truncation: float = 1.0) -> float:
    """Mean pairwise mean-absolute pixel distance over the generated region."""
    rng = np.random.default_rng((seed, 73))
    region = ann.mask.generate
    images = [model.generate(ann, sample_z(rng, model.z_dim),
                             truncation=truncation) for _ in range(n)]
    total, pairs = 0.0, 0
    for i in range(n):
        for j in range(i + 1, n):
            total += float(np.abs(images[i][region] - images[j][region]).mean())
            pairs += 1
    return total / pairs if pairs else 0.0


def emit_grid(images: list[np.ndarray], path: Path) -> Path:
    """Tile images row-major into one PNG; cell count grows squarish."""
    if not images:
        raise ValueError("no images to tile")
    h, w = images[0].shape[:2]
    for img in images:
        if img.shape != images[0].shape:
            raise ValueError("grid images must share a shape")
    cols = math.ceil(math.sqrt(len(images)))
    rows = math.ceil(len(images) / cols)
    canvas = np.zeros((rows * h, cols * w, 3), dtype=np.uint8)
    for idx, img in enumerate(images):
        r, c = divmod(idx, cols)
        canvas[r * h:(r + 1) * h, c * w:(c + 1) * w] = image_to_uint8(img)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(canvas, mode="RGB").save(path)
    return path
