"""Procedural dataset with a known embedding-to-texture law.

Every sample is deterministic in (spec, index). The body region is a union
of ellipses; each body pixel carries the embedding of a vertex chosen by a
smooth scalar parametrization across the region, and its color is a fixed
squashed linear map of that embedding plus a small per-sample hue shift.
The hue shift is not predictable from the conditioning input, which is what
gives the latent code something to model; the unshifted color map doubles
as a scoring oracle for trained generators.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .surface import (
    EmbeddingRaster,
    Region,
    RegionMask,
    SurfaceAnnotation,
    VertexTable,
    dilate_mask,
    image_from_uint8,
    image_to_uint8,
    save_annotation,
    save_vertex_table,
)

MANIFEST_NAME = "dataset.json"
VERTEX_FILE_NAME = "vertices.vtx"


@dataclass(frozen=True)
class SyntheticSpec:
    height: int = 64
    width: int = 32
    num_vertices: int = 64
    vertex_seed: int = 0
    texture_seed: int = 1
    palette_seed: int = 2
    num_samples: int = 128
    blob_count_min: int = 1
    blob_count_max: int = 3
    dilation_radius: int = 2
    hue_amplitude: float = 0.15

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SyntheticSpec":
        fields = {f.name for f in dataclasses.fields(cls)}
        payload = json.loads(text)
        unknown = set(payload) - fields
        if unknown:
            raise ValueError(f"unknown synthetic spec fields: {sorted(unknown)}")
        return cls(**payload)


def build_vertex_table(spec: SyntheticSpec) -> VertexTable:
    """Vertices along a smooth random closed curve in embedding space.

    Consecutive vertices are close, mirroring how real surface embeddings
    vary smoothly across a body, and making the regression task learnable
    rather than a pure lookup.
    """
    rng = np.random.default_rng([spec.vertex_seed, 101])
    k = np.arange(spec.num_vertices)
    harmonics = 4
    rows = np.zeros((spec.num_vertices, 16))
    for j in range(1, harmonics + 1):
        phase = 2.0 * np.pi * j * k / spec.num_vertices
        rows += (rng.standard_normal(16)[None, :] * np.cos(phase)[:, None]
                 + rng.standard_normal(16)[None, :] * np.sin(phase)[:, None])
    rows /= np.linalg.norm(rows, axis=1, keepdims=True)
    return VertexTable(rows.astype(np.float32))


def _texture_map(spec: SyntheticSpec) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng([spec.texture_seed, 202])
    weight = rng.standard_normal((3, 16)) * 0.9
    bias = rng.uniform(-0.2, 0.2, 3)
    return weight.astype(np.float32), bias.astype(np.float32)


def texture_color(spec: SyntheticSpec, embeddings: np.ndarray,
                  hue_shift: np.ndarray | None = None) -> np.ndarray:
    """Ground-truth color for embeddings (N x 16): squashed linear map."""
    weight, bias = _texture_map(spec)
    pre = embeddings.astype(np.float32) @ weight.T + bias
    if hue_shift is not None:
        pre = pre + np.asarray(hue_shift, dtype=np.float32)
    return np.tanh(pre).astype(np.float32)


def hue_shift(spec: SyntheticSpec, index: int) -> np.ndarray:
    """Per-sample color shift; zero-mean, bounded by spec.hue_amplitude."""
    rng = np.random.default_rng([spec.palette_seed, 303, index])
    return rng.uniform(-spec.hue_amplitude, spec.hue_amplitude, 3).astype(np.float32)


def _render_body_plane(spec: SyntheticSpec, rng: np.random.Generator) -> np.ndarray:
    h, w = spec.height, spec.width
    yy, xx = np.mgrid[0:h, 0:w]
    body = np.zeros((h, w), dtype=bool)
    n_blobs = int(rng.integers(spec.blob_count_min, spec.blob_count_max + 1))
    cy = rng.uniform(0.3 * h, 0.7 * h)
    cx = rng.uniform(0.3 * w, 0.7 * w)
    for _ in range(n_blobs):
        ay = rng.uniform(0.12 * h, 0.28 * h)
        ax = rng.uniform(0.15 * w, 0.3 * w)
        body |= ((yy - cy) / ay) ** 2 + ((xx - cx) / ax) ** 2 <= 1.0
        # Next blob hangs off the previous one so the union stays connected.
        cy = np.clip(cy + rng.uniform(-ay, ay), 2, h - 3)
        cx = np.clip(cx + rng.uniform(-ax, ax), 2, w - 3)
    return body


def _parametrize(body: np.ndarray, rng: np.random.Generator,
                 num_vertices: int) -> np.ndarray:
    """Smooth scalar field over the body mapped to vertex indices."""
    ys, xs = np.nonzero(body)
    y0, y1 = ys.min(), ys.max()
    x0, x1 = xs.min(), xs.max()
    ny = (ys - y0) / max(y1 - y0, 1)
    nx = (xs - x0) / max(x1 - x0, 1)
    fy = rng.uniform(0.5, 1.5)
    fx = rng.uniform(0.5, 1.5)
    phase = rng.uniform(0.0, 1.0)
    s = np.mod(phase + fy * ny + fx * nx, 1.0)
    return np.minimum((s * num_vertices).astype(np.int64), num_vertices - 1)


def render_sample(spec: SyntheticSpec, index: int) -> SurfaceAnnotation:
    """Deterministic sample: scene, body embeddings, mask and image."""
    if not 0 <= index < spec.num_samples:
        raise ValueError(f"sample index {index} outside [0, {spec.num_samples})")
    table = build_vertex_table(spec)
    rng = np.random.default_rng([spec.palette_seed, 404, index])

    h, w = spec.height, spec.width
    image = np.empty((h, w, 3), dtype=np.float32)
    image[:] = rng.uniform(-0.9, 0.5, 3).astype(np.float32)
    # A couple of flat shapes so the context is not a single color.
    band_y = sorted(rng.integers(0, h, 2))
    image[band_y[0]:band_y[1] + 1, :, :] = rng.uniform(-0.9, 0.5, 3).astype(np.float32)
    rect_y = sorted(rng.integers(0, h, 2))
    rect_x = sorted(rng.integers(0, w, 2))
    image[rect_y[0]:rect_y[1] + 1, rect_x[0]:rect_x[1] + 1, :] = \
        rng.uniform(-0.9, 0.5, 3).astype(np.float32)

    body = _render_body_plane(spec, rng)
    indices = _parametrize(body, rng, spec.num_vertices)
    emb_data = np.zeros((h, w, 16), dtype=np.float32)
    emb_data[body] = table.embeddings[indices]

    shift = hue_shift(spec, index)
    image[body] = texture_color(spec, emb_data[body], hue_shift=shift)

    classes = np.full((h, w), Region.KNOWN, dtype=np.uint8)
    classes[body] = Region.BODY
    mask = dilate_mask(RegionMask(classes), spec.dilation_radius)
    # The dilated rim gets its own flat color, standing in for clothing edges.
    rim_color = rng.uniform(-0.9, 0.9, 3).astype(np.float32)
    image[mask.dilated] = rim_color

    embeddings = EmbeddingRaster(data=emb_data, valid=body)
    return SurfaceAnnotation(image=image, embeddings=embeddings, mask=mask)


def oracle_texture(ann: SurfaceAnnotation, spec: SyntheticSpec,
                   hue_shift: np.ndarray | None = None) -> np.ndarray:
    """Recompute the ground-truth BODY texture; other pixels pass through.

    With hue_shift=None this is the scoring oracle for trained generators:
    the expected body color with the per-sample shift marginalized out.
    """
    image = ann.image.copy()
    body = ann.mask.body
    image[body] = texture_color(spec, ann.embeddings.data[body], hue_shift=hue_shift)
    return image


def sample_id(index: int) -> str:
    return f"{index:06d}"


def make_dataset(spec: SyntheticSpec, out_dir: Path) -> dict:
    """Write all samples in the annotation format plus the vertex table."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    table = build_vertex_table(spec)
    save_vertex_table(table, out_dir / VERTEX_FILE_NAME)
    (out_dir / MANIFEST_NAME).write_text(spec.to_json())
    for index in range(spec.num_samples):
        ann = render_sample(spec, index)
        # Quantize through the 8-bit image codec so what tests read back
        # equals what the files hold.
        ann = SurfaceAnnotation(image=image_from_uint8(image_to_uint8(ann.image)),
                                embeddings=ann.embeddings, mask=ann.mask)
        save_annotation(ann, out_dir, sample_id(index))
    return {"samples": spec.num_samples, "directory": str(out_dir)}


def load_manifest(directory: Path) -> SyntheticSpec:
    return SyntheticSpec.from_json((Path(directory) / MANIFEST_NAME).read_text())
