"""Batch anonymization: crop each detected person with context, complete the
crop at model resolution, and paste the result back over exactly the body
and its dilated rim. Pixels outside every detection are never touched.

Inputs per image id S: S.image.png, S.mask.png, S.emb in the annotation
format (the full-frame embedding raster), plus S.boxes.txt with one
"x0 y0 x1 y1 score" record per line. A vertices.vtx table in the input
directory drives embedding discretization.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import FormatError
from .inference import InpaintModel
from .surface import (
    EmbeddingRaster,
    Region,
    RegionMask,
    SurfaceAnnotation,
    VertexTable,
    dilate_mask,
    discretize,
    image_to_uint8,
    list_sample_ids,
    load_annotation,
    load_vertex_table,
)

MIN_BOX_SIDE = 4
CROP_MARGIN = 0.2
VERTEX_FILE = "vertices.vtx"
BOXES_SUFFIX = ".boxes.txt"


@dataclass(frozen=True)
class PersonDetection:
    """One detected person: pixel box (x0, y0, x1, y1; end-exclusive),
    the embedding raster inside the box, and a confidence score."""

    box: tuple[int, int, int, int]
    embeddings: EmbeddingRaster
    score: float

    def __post_init__(self):
        x0, y0, x1, y1 = self.box
        if x1 <= x0 or y1 <= y0:
            raise ValueError(f"empty detection box {self.box}")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"confidence score {self.score} outside [0, 1]")
        if self.embeddings.valid.shape != (y1 - y0, x1 - x0):
            raise ValueError("embedding raster does not match the detection box")


@dataclass(frozen=True)
class AnonymizationOptions:
    truncation: float = 1.0
    seed: int = 0
    dilation_radius: int = 2
    fixed_z: bool = False

    def __post_init__(self):
        if not 0.0 <= self.truncation <= 1.0:
            raise ValueError("truncation must lie in [0, 1]")
        if self.dilation_radius < 0:
            raise ValueError("dilation radius must be >= 0")


@dataclass(frozen=True)
class AnonymizationJob:
    input_dir: Path
    output_dir: Path
    checkpoint: Path
    options: AnonymizationOptions = AnonymizationOptions()
    score_threshold: float = 0.1


@dataclass
class JobReport:
    images: int = 0
    persons: int = 0
    skipped_images: int = 0
    skipped_detections: int = 0
    warnings: list = field(default_factory=list)
    wall_time_s: float = 0.0

    def to_dict(self) -> dict:
        return {"images": self.images, "persons": self.persons,
                "skipped_images": self.skipped_images,
                "skipped_detections": self.skipped_detections,
                "warnings": list(self.warnings),
                "wall_time_s": self.wall_time_s}


def read_detection_boxes(path: Path) -> list[tuple[tuple[int, int, int, int], float]]:
    """Parse "x0 y0 x1 y1 score" records; blank lines ignored."""
    out = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 5:
            raise FormatError(f"{path}:{lineno}: expected 'x0 y0 x1 y1 score'")
        try:
            box = tuple(int(p) for p in parts[:4])
            score = float(parts[4])
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from exc
        out.append((box, score))
    return out


def detections_from_annotation(ann: SurfaceAnnotation,
                               boxes: list[tuple[tuple[int, int, int, int], float]],
                               score_threshold: float) -> list[PersonDetection]:
    """Crop the frame's embedding raster per box; thresholds are applied here."""
    detections = []
    for box, score in boxes:
        if score <= score_threshold:
            continue
        x0, y0, x1, y1 = box
        if not (0 <= x0 < x1 <= ann.width and 0 <= y0 < y1 <= ann.height):
            raise ValueError(f"detection box {box} outside the {ann.height}x"
                             f"{ann.width} image")
        crop = EmbeddingRaster(data=ann.embeddings.data[y0:y1, x0:x1].copy(),
                               valid=ann.embeddings.valid[y0:y1, x0:x1].copy())
        detections.append(PersonDetection(box=box, embeddings=crop,
                                          score=min(score, 1.0)))
    return detections


def _nearest_index(src: int, dst: int) -> np.ndarray:
    return np.minimum(((np.arange(dst) + 0.5) * src / dst).astype(np.int64),
                      src - 1)


def _resize_image_bilinear(image: np.ndarray, height: int, width: int) -> np.ndarray:
    channels = []
    for c in range(image.shape[2]):
        plane = Image.fromarray(image[:, :, c].astype(np.float32), mode="F")
        channels.append(np.asarray(plane.resize((width, height),
                                                Image.Resampling.BILINEAR)))
    return np.clip(np.stack(channels, axis=2), -1.0, 1.0).astype(np.float32)


def _resize_nearest(plane: np.ndarray, height: int, width: int) -> np.ndarray:
    ys = _nearest_index(plane.shape[0], height)
    xs = _nearest_index(plane.shape[1], width)
    return plane[np.ix_(ys, xs)]


def crop_with_margin(box: tuple[int, int, int, int], height: int, width: int,
                     margin: float = CROP_MARGIN) -> tuple[int, int, int, int]:
    x0, y0, x1, y1 = box
    mx = int(round((x1 - x0) * margin))
    my = int(round((y1 - y0) * margin))
    return (max(0, x0 - mx), max(0, y0 - my),
            min(width, x1 + mx), min(height, y1 + my))


def _crop_annotation(image: np.ndarray, det: PersonDetection,
                     crop: tuple[int, int, int, int], model: InpaintModel,
                     table: VertexTable, radius: int) -> tuple[SurfaceAnnotation, np.ndarray]:
    """Model-resolution annotation for one detection plus the original-
    resolution replacement region inside the crop."""
    cx0, cy0, cx1, cy1 = crop
    ch, cw = cy1 - cy0, cx1 - cx0
    x0, y0, x1, y1 = det.box
    emb_data = np.zeros((ch, cw, det.embeddings.channels), dtype=np.float32)
    emb_valid = np.zeros((ch, cw), dtype=bool)
    emb_data[y0 - cy0:y1 - cy0, x0 - cx0:x1 - cx0] = det.embeddings.data
    emb_valid[y0 - cy0:y1 - cy0, x0 - cx0:x1 - cx0] = det.embeddings.valid

    classes = np.full((ch, cw), Region.KNOWN, dtype=np.uint8)
    classes[emb_valid] = Region.BODY
    region = dilate_mask(RegionMask(classes), radius).generate

    mh, mw = model.resolution
    data_m = np.zeros((mh, mw, det.embeddings.channels), dtype=np.float32)
    ys = _nearest_index(ch, mh)
    xs = _nearest_index(cw, mw)
    data_m[:] = emb_data[np.ix_(ys, xs)]
    valid_m = emb_valid[np.ix_(ys, xs)]
    data_m[~valid_m] = 0.0
    emb_m = discretize(EmbeddingRaster(data=data_m, valid=valid_m), table)

    classes_m = np.full((mh, mw), Region.KNOWN, dtype=np.uint8)
    classes_m[valid_m] = Region.BODY
    mask_m = dilate_mask(RegionMask(classes_m), radius)
    image_m = _resize_image_bilinear(image[cy0:cy1, cx0:cx1], mh, mw)
    ann = SurfaceAnnotation(image=image_m, embeddings=emb_m, mask=mask_m)
    return ann, region


def anonymize_image(image: np.ndarray, detections: list[PersonDetection],
                    model: InpaintModel, table: VertexTable,
                    options: AnonymizationOptions = AnonymizationOptions(),
                    rng: np.random.Generator | None = None
                    ) -> tuple[np.ndarray, dict]:
    """Replace each detected person; returns the new image and counters.

    Detections are processed in descending score order; later pastes may
    overwrite earlier ones inside their own regions. Pixels outside every
    replacement region are bit-identical to the input.
    """
    if rng is None:
        rng = np.random.default_rng((options.seed, 83))
    out = np.asarray(image, dtype=np.float32).copy()
    stats = {"persons": 0, "skipped": 0, "warnings": []}
    order = sorted(range(len(detections)),
                   key=lambda i: (-detections[i].score, i))
    fixed_z = rng.standard_normal(model.z_dim).astype(np.float32)
    for rank, i in enumerate(order):
        det = detections[i]
        x0, y0, x1, y1 = det.box
        if x1 - x0 < MIN_BOX_SIDE or y1 - y0 < MIN_BOX_SIDE:
            stats["skipped"] += 1
            stats["warnings"].append(
                f"detection {i} box {det.box} smaller than "
                f"{MIN_BOX_SIDE}x{MIN_BOX_SIDE}, skipped")
            continue
        crop = crop_with_margin(det.box, out.shape[0], out.shape[1])
        ann, region = _crop_annotation(out, det, crop, model, table,
                                       options.dilation_radius)
        z = fixed_z if options.fixed_z else \
            rng.standard_normal(model.z_dim).astype(np.float32)
        generated = model.generate(ann, z, truncation=options.truncation)
        cx0, cy0, cx1, cy1 = crop
        restored = _resize_image_bilinear(generated, cy1 - cy0, cx1 - cx0)
        patch = out[cy0:cy1, cx0:cx1]
        patch[region] = restored[region]
        stats["persons"] += 1
    return out, stats


def run_job(job: AnonymizationJob) -> JobReport:
    """Process every annotated image in the input directory; missing or
    corrupt annotations skip that image, never the run."""
    started = time.time()
    report = JobReport()
    input_dir = Path(job.input_dir)
    output_dir = Path(job.output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    model = InpaintModel.from_checkpoint(job.checkpoint)
    table = load_vertex_table(input_dir / VERTEX_FILE)
    for sample in list_sample_ids(input_dir):
        try:
            ann = load_annotation(input_dir, sample)
            boxes = read_detection_boxes(input_dir / f"{sample}{BOXES_SUFFIX}")
            detections = detections_from_annotation(ann, boxes,
                                                    job.score_threshold)
        except (FormatError, FileNotFoundError, ValueError) as exc:
            report.skipped_images += 1
            report.warnings.append(f"{sample}: {exc}")
            continue
        rng = np.random.default_rng((job.options.seed, 83, sample_key(sample)))
        out, stats = anonymize_image(ann.image, detections, model, table,
                                     job.options, rng=rng)
        Image.fromarray(image_to_uint8(out), mode="RGB").save(
            output_dir / f"{sample}.image.png")
        report.images += 1
        report.persons += stats["persons"]
        report.skipped_detections += stats["skipped"]
        report.warnings.extend(f"{sample}: {w}" for w in stats["warnings"])
    report.wall_time_s = time.time() - started
    return report


def sample_key(sample_id: str) -> int:
    """Stable non-negative integer for seeding per-image randomness."""
    key = 0
    for ch in sample_id:
        key = (key * 131 + ord(ch)) % (2 ** 31 - 1)
    return key
