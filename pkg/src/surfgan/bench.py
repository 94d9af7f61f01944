"""Desk-scale end-to-end benchmark: train on the procedural dataset, then
score body texture against the oracle and the critic's embedding regression
on held-out samples.

The dataset's body texture is a known function of the embedding, so a
trained completion network has a deterministic reference to be scored
against; the per-sample hue shift sits above the oracle as an irreducible
noise floor well over the pass gates.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .checkpoint import load_module_records, read_records
from .discriminator import Discriminator, DiscriminatorConfig, embedding_targets, surface_loss
from .evaluation import psnr
from .generator import GeneratorConfig, mask_onehot_tensor
from .inference import InpaintModel
from .mapping import MappingConfig, sample_z
from .synthetic import SyntheticSpec, oracle_texture, render_sample
from .training import RenderedDataset, TrainConfig, checkpoint_configs, train

TRAIN_SAMPLES = 2000
HELDOUT_SAMPLES = 64


def bench_spec() -> SyntheticSpec:
    return SyntheticSpec(height=64, width=32, num_vertices=64,
                         num_samples=TRAIN_SAMPLES + HELDOUT_SAMPLES)


def bench_mapping_config(variational: bool = True) -> MappingConfig:
    return MappingConfig(depth=2, width=128, out_dim=64,
                         variational=variational, z_dim=32)


def bench_generator_config(modulation: str = "vsam") -> GeneratorConfig:
    return GeneratorConfig(height=64, width=32, modulation=modulation,
                           omega_dim=64, z_dim=32)


def bench_discriminator_config() -> DiscriminatorConfig:
    return DiscriminatorConfig(height=64, width=32)


def bench_train_config(steps: int, seed: int = 0, batch_size: int = 8
                       ) -> TrainConfig:
    # EMA half-life short enough that the averaged weights track a run of
    # a couple thousand steps.
    return TrainConfig(total_steps=steps, batch_size=batch_size, seed=seed,
                       ema_decay=0.995, checkpoint_interval=max(steps, 1))


@dataclass(frozen=True)
class BenchScores:
    body_psnr_db: float
    embedding_error: float
    samples: int


def train_bench_model(out_dir: Path, steps: int, variant: str = "vsam",
                      seed: int = 0, resume_from: Path | None = None,
                      progress: bool = False) -> Path:
    """Train one desk model; returns the final checkpoint path.

    variant "vsam" conditions the mapping on the latent; "sam" keeps the
    mapping embedding-only and injects the latent as a spatial map instead.
    """
    if variant not in ("vsam", "sam"):
        raise ValueError(f"unknown variant {variant!r}")
    spec = bench_spec()
    dataset = RenderedDataset(spec, 0, TRAIN_SAMPLES)
    state = train(dataset,
                  bench_mapping_config(variational=variant == "vsam"),
                  bench_generator_config(modulation=variant),
                  bench_discriminator_config(),
                  bench_train_config(steps, seed=seed),
                  out_dir=out_dir, resume_from=resume_from, progress=progress)
    return Path(out_dir) / "ckpt_final.bin"


def heldout_indices() -> range:
    return range(TRAIN_SAMPLES, TRAIN_SAMPLES + HELDOUT_SAMPLES)


def score_body_psnr(model: InpaintModel, spec: SyntheticSpec,
                    indices, seed: int = 0) -> float:
    """Mean PSNR between generated and oracle body texture, fresh latent
    per sample."""
    rng = np.random.default_rng((seed, 91))
    scores = []
    for index in indices:
        ann = render_sample(spec, index)
        z = sample_z(rng, model.z_dim)
        out = model.generate(ann, z)
        reference = oracle_texture(ann, spec)
        scores.append(psnr(out, reference, valid=ann.mask.body))
    return float(np.mean(scores))


def load_bench_discriminator(checkpoint: Path) -> Discriminator:
    _, config, records = read_records(checkpoint)
    _, _, disc_cfg, _ = checkpoint_configs(config)
    disc = Discriminator(disc_cfg)
    load_module_records("disc", disc, records)
    disc.eval()
    for p in disc.parameters():
        p.requires_grad_(False)
    return disc


def score_embedding_error(disc: Discriminator, spec: SyntheticSpec,
                          indices) -> float:
    """Mean masked smooth-L1 of the critic's embedding head on real samples."""
    total, count = 0.0, 0
    with torch.no_grad():
        for index in indices:
            ann = render_sample(spec, index)
            image = torch.from_numpy(
                np.ascontiguousarray(ann.image.transpose(2, 0, 1))).unsqueeze(0)
            masks = mask_onehot_tensor(ann.mask.classes).unsqueeze(0)
            target, body = embedding_targets([ann])
            out = disc(image, masks)
            res = surface_loss(out.e_hat, target, body)
            if not res.degenerate:
                total += float(res.value) * res.body_pixels
                count += res.body_pixels
    return total / count if count else float("inf")


def score_checkpoint(checkpoint: Path, seed: int = 0,
                     indices=None) -> BenchScores:
    spec = bench_spec()
    indices = list(indices if indices is not None else heldout_indices())
    model = InpaintModel.from_checkpoint(checkpoint, use_ema=True)
    disc = load_bench_discriminator(checkpoint)
    return BenchScores(
        body_psnr_db=score_body_psnr(model, spec, indices, seed=seed),
        embedding_error=score_embedding_error(disc, spec, indices),
        samples=len(indices))
