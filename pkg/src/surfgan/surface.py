"""Vertex embedding tables, per-pixel embedding rasters, tri-state region masks.

The tri-state mask distinguishes KNOWN context pixels (kept as-is), BODY
pixels (carry a surface embedding, to be regenerated) and DILATED pixels
(to be regenerated but without an embedding). BODY pixels coincide exactly
with the valid plane of the embedding raster.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.ndimage import maximum_filter

from .errors import FormatError

EMBED_CHANNELS = 16

EMB_MAGIC = b"EMB1"
VTX_MAGIC = b"VTX1"

# 8-bit gray codes used in the on-disk mask plane.
MASK_CODE_KNOWN = 255
MASK_CODE_DILATED = 128
MASK_CODE_BODY = 0


class Region(IntEnum):
    KNOWN = 0
    BODY = 1
    DILATED = 2


@dataclass(frozen=True)
class VertexTable:
    """K x C table of canonical-surface positional embeddings, one row per vertex."""

    embeddings: np.ndarray

    def __post_init__(self):
        emb = np.asarray(self.embeddings, dtype=np.float32)
        if emb.ndim != 2:
            raise ValueError(f"vertex table must be 2-D, got shape {emb.shape}")
        if emb.shape[0] < 2:
            raise ValueError("vertex table needs at least 2 vertices")
        if not np.isfinite(emb).all():
            raise ValueError("vertex table contains non-finite entries")
        if np.unique(emb, axis=0).shape[0] != emb.shape[0]:
            raise ValueError("vertex table contains duplicate rows")
        object.__setattr__(self, "embeddings", emb)

    @property
    def num_vertices(self) -> int:
        return self.embeddings.shape[0]

    @property
    def channels(self) -> int:
        return self.embeddings.shape[1]


@dataclass(frozen=True)
class EmbeddingRaster:
    """H x W x C embedding plane plus a boolean validity plane.

    Contents at invalid pixels are unspecified and must never be read.
    """

    data: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float32)
        valid = np.asarray(self.valid, dtype=bool)
        if data.ndim != 3:
            raise ValueError(f"embedding raster must be H x W x C, got {data.shape}")
        if valid.shape != data.shape[:2]:
            raise ValueError("validity plane shape does not match embedding raster")
        if not np.isfinite(data[valid]).all():
            raise ValueError("embedding raster has non-finite values at valid pixels")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "valid", valid)

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class RegionMask:
    """H x W plane over {KNOWN, BODY, DILATED}."""

    classes: np.ndarray

    def __post_init__(self):
        classes = np.asarray(self.classes, dtype=np.uint8)
        if classes.ndim != 2:
            raise ValueError(f"region mask must be 2-D, got {classes.shape}")
        if not np.isin(classes, (Region.KNOWN, Region.BODY, Region.DILATED)).all():
            raise ValueError("region mask contains codes outside {KNOWN, BODY, DILATED}")
        object.__setattr__(self, "classes", classes)

    @property
    def known(self) -> np.ndarray:
        return self.classes == Region.KNOWN

    @property
    def body(self) -> np.ndarray:
        return self.classes == Region.BODY

    @property
    def dilated(self) -> np.ndarray:
        return self.classes == Region.DILATED

    @property
    def generate(self) -> np.ndarray:
        """Pixels the generator must fill: BODY or DILATED."""
        return self.classes != Region.KNOWN


@dataclass(frozen=True)
class SurfaceAnnotation:
    """One conditioning sample: image, embedding raster and region mask."""

    image: np.ndarray
    embeddings: EmbeddingRaster
    mask: RegionMask

    def __post_init__(self):
        image = np.asarray(self.image, dtype=np.float32)
        if image.ndim != 3 or image.shape[2] != 3:
            raise ValueError(f"image must be H x W x 3, got {image.shape}")
        if not np.isfinite(image).all():
            raise FormatError("image plane contains non-finite values")
        shape = image.shape[:2]
        if self.embeddings.data.shape[:2] != shape:
            raise FormatError("embedding plane shape differs from image plane")
        if self.mask.classes.shape != shape:
            raise FormatError("mask plane shape differs from image plane")
        if not np.array_equal(self.mask.body, self.embeddings.valid):
            raise FormatError("mask plane BODY pixels do not match embedding validity")
        object.__setattr__(self, "image", image)

    @property
    def height(self) -> int:
        return self.image.shape[0]

    @property
    def width(self) -> int:
        return self.image.shape[1]


def random_vertex_table(num_vertices: int, channels: int = EMBED_CHANNELS,
                        seed: int = 0) -> VertexTable:
    """Fixed, seeded stand-in table with unit-norm rows.

    A loader for externally trained tables is provided separately; this keeps
    tests hermetic while staying format-compatible.
    """
    rng = np.random.default_rng(seed)
    rows = rng.standard_normal((num_vertices, channels))
    rows /= np.linalg.norm(rows, axis=1, keepdims=True)
    return VertexTable(rows.astype(np.float32))


def nearest_vertex(e: np.ndarray, table: VertexTable) -> int:
    """Index of the table row closest to `e` in euclidean distance.

    Ties break toward the smallest index. Exact brute force; distances are
    accumulated in float64 so the result is reproducible bit-for-bit.
    """
    e = np.asarray(e, dtype=np.float64)
    if e.shape != (table.channels,):
        raise ValueError(f"query has shape {e.shape}, table rows have {table.channels} channels")
    if not np.isfinite(e).all():
        raise ValueError("query embedding contains non-finite values")
    d = np.sum((e[None, :] - table.embeddings.astype(np.float64)) ** 2, axis=1)
    return int(np.argmin(d))


def nearest_vertices(queries: np.ndarray, table: VertexTable,
                     chunk: int = 4096) -> np.ndarray:
    """Vectorized nearest_vertex over an N x C array of queries."""
    queries = np.asarray(queries, dtype=np.float64)
    if queries.ndim != 2 or queries.shape[1] != table.channels:
        raise ValueError(f"queries must be N x {table.channels}, got {queries.shape}")
    if not np.isfinite(queries).all():
        raise ValueError("query embeddings contain non-finite values")
    rows = table.embeddings.astype(np.float64)
    out = np.empty(queries.shape[0], dtype=np.int64)
    for start in range(0, queries.shape[0], chunk):
        block = queries[start:start + chunk]
        d = np.sum((block[:, None, :] - rows[None, :, :]) ** 2, axis=2)
        out[start:start + chunk] = np.argmin(d, axis=1)
    return out


def nearest_index_raster(raster: EmbeddingRaster, table: VertexTable) -> np.ndarray:
    """H x W int32 plane of nearest vertex indices; -1 where invalid."""
    if raster.channels != table.channels:
        raise ValueError(
            f"raster has {raster.channels} channels, table has {table.channels}")
    indices = np.full(raster.valid.shape, -1, dtype=np.int32)
    if raster.valid.any():
        queries = raster.data[raster.valid]
        indices[raster.valid] = nearest_vertices(queries, table)
    return indices


def discretize(raster: EmbeddingRaster, table: VertexTable) -> EmbeddingRaster:
    """Replace every valid pixel's embedding by its nearest table row."""
    indices = nearest_index_raster(raster, table)
    data = raster.data.copy()
    data[raster.valid] = table.embeddings[indices[raster.valid]]
    return EmbeddingRaster(data=data, valid=raster.valid.copy())


def is_discretized(raster: EmbeddingRaster, table: VertexTable) -> bool:
    """True if every valid pixel's embedding is exactly a table row."""
    indices = nearest_index_raster(raster, table)
    ok = raster.valid.copy()
    if not ok.any():
        return True
    rows = table.embeddings[indices[ok]]
    return bool(np.array_equal(raster.data[ok], rows))


def dilate_mask(mask: RegionMask, radius: int) -> RegionMask:
    """Turn KNOWN pixels within Chebyshev distance `radius` of BODY into DILATED.

    BODY pixels are unchanged; existing DILATED pixels stay DILATED.
    """
    if radius < 0:
        raise ValueError("dilation radius must be >= 0")
    classes = mask.classes.copy()
    if radius == 0:
        return RegionMask(classes)
    near_body = maximum_filter(mask.body.astype(np.uint8), size=2 * radius + 1) > 0
    classes[near_body & mask.known] = Region.DILATED
    return RegionMask(classes)


# ---------------------------------------------------------------------------
# On-disk format. Per sample id S the directory holds S.image.png (8-bit RGB),
# S.mask.png (8-bit gray; KNOWN=255, DILATED=128, BODY=0) and S.emb (binary).
# Invalid pixels of the embedding file are stored as NaN.
# ---------------------------------------------------------------------------

def image_to_uint8(image: np.ndarray) -> np.ndarray:
    """Affine [-1, 1] -> [0, 255] with rounding."""
    return np.clip(np.round((np.asarray(image) + 1.0) * 127.5), 0, 255).astype(np.uint8)


def image_from_uint8(raw: np.ndarray) -> np.ndarray:
    return raw.astype(np.float32) / np.float32(127.5) - np.float32(1.0)


def save_vertex_table(table: VertexTable, path: Path) -> None:
    path = Path(path)
    with open(path, "wb") as f:
        f.write(VTX_MAGIC)
        f.write(struct.pack("<II", table.num_vertices, table.channels))
        f.write(np.ascontiguousarray(table.embeddings, dtype="<f4").tobytes())


def load_vertex_table(path: Path) -> VertexTable:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != VTX_MAGIC:
        raise FormatError(f"{path}: bad magic in vertex table file")
    if len(raw) < 12:
        raise FormatError(f"{path}: truncated vertex table header")
    k, c = struct.unpack("<II", raw[4:12])
    expected = 12 + 4 * k * c
    if len(raw) != expected:
        raise FormatError(f"{path}: vertex table payload is {len(raw)} bytes, expected {expected}")
    rows = np.frombuffer(raw[12:], dtype="<f4").reshape(k, c)
    return VertexTable(rows.copy())


def _save_embeddings(raster: EmbeddingRaster, path: Path) -> None:
    h, w = raster.valid.shape
    data = raster.data.copy()
    data[~raster.valid] = np.nan
    with open(path, "wb") as f:
        f.write(EMB_MAGIC)
        f.write(struct.pack("<III", h, w, raster.channels))
        f.write(np.ascontiguousarray(data, dtype="<f4").tobytes())


def _load_embeddings(path: Path) -> EmbeddingRaster:
    raw = path.read_bytes()
    if raw[:4] != EMB_MAGIC:
        raise FormatError(f"{path}: bad magic in embedding plane")
    if len(raw) < 16:
        raise FormatError(f"{path}: truncated embedding plane header")
    h, w, c = struct.unpack("<III", raw[4:16])
    expected = 16 + 4 * h * w * c
    if len(raw) != expected:
        raise FormatError(f"{path}: embedding plane payload is {len(raw)} bytes, expected {expected}")
    data = np.frombuffer(raw[16:], dtype="<f4").reshape(h, w, c).copy()
    valid = np.isfinite(data).all(axis=2)
    data[~valid] = 0.0
    return EmbeddingRaster(data=data, valid=valid)


def save_annotation(ann: SurfaceAnnotation, directory: Path, sample_id: str) -> None:
    """Write the three planes for `sample_id`; round trip is bit-exact."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    Image.fromarray(image_to_uint8(ann.image), mode="RGB").save(
        directory / f"{sample_id}.image.png")
    codes = np.full(ann.mask.classes.shape, MASK_CODE_KNOWN, dtype=np.uint8)
    codes[ann.mask.body] = MASK_CODE_BODY
    codes[ann.mask.dilated] = MASK_CODE_DILATED
    Image.fromarray(codes, mode="L").save(directory / f"{sample_id}.mask.png")
    _save_embeddings(ann.embeddings, directory / f"{sample_id}.emb")


def load_annotation(directory: Path, sample_id: str) -> SurfaceAnnotation:
    directory = Path(directory)
    image_path = directory / f"{sample_id}.image.png"
    mask_path = directory / f"{sample_id}.mask.png"
    emb_path = directory / f"{sample_id}.emb"
    for p in (image_path, mask_path, emb_path):
        if not p.exists():
            raise FileNotFoundError(p)
    image = image_from_uint8(np.asarray(Image.open(image_path).convert("RGB")))
    codes = np.asarray(Image.open(mask_path).convert("L"))
    classes = np.empty(codes.shape, dtype=np.uint8)
    known = codes == MASK_CODE_KNOWN
    body = codes == MASK_CODE_BODY
    dil = codes == MASK_CODE_DILATED
    if not (known | body | dil).all():
        raise FormatError(f"{mask_path}: mask plane contains unknown codes")
    classes[known] = Region.KNOWN
    classes[body] = Region.BODY
    classes[dil] = Region.DILATED
    emb = _load_embeddings(emb_path)
    if emb.valid.shape != classes.shape:
        raise FormatError(f"{emb_path}: embedding plane shape differs from mask plane")
    if not np.array_equal(emb.valid, body):
        raise FormatError(
            f"{emb_path}: embedding validity does not match mask plane BODY pixels")
    return SurfaceAnnotation(image=image, embeddings=emb, mask=RegionMask(classes))


def list_sample_ids(directory: Path) -> list[str]:
    directory = Path(directory)
    return sorted(p.name[:-len(".image.png")]
                  for p in directory.glob("*.image.png"))
