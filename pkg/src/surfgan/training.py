"""Adversarial training: non-saturating losses with an epsilon penalty,
lazy r1 masked to context pixels, surface regression on both networks,
running-mean tracking for truncation, and an EMA copy of the generator.

All per-step randomness is derived from (seed, stream, step), so a resumed
run retraces the interrupted one exactly.
"""

from __future__ import annotations

import copy
import dataclasses
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch.nn import functional as F

from .augment import AugmentConfig, augment
from .checkpoint import (
    config_snapshot,
    load_module_records,
    load_optimizer_records,
    module_records,
    optimizer_records,
    read_records,
    write_records,
)
from .discriminator import Discriminator, DiscriminatorConfig, surface_loss
from .errors import DivergenceError
from .generator import Generator, GeneratorConfig, build_generator_input, generate
from .mapping import MappingConfig, MappingNetwork, map_field, sample_z, update_omega_mean
from .surface import Region, SurfaceAnnotation, load_annotation, list_sample_ids
from .synthetic import SyntheticSpec, render_sample

# Independent substreams of the run seed.
_STREAM_BATCH = 11
_STREAM_AUGMENT = 13
_STREAM_Z_D = 17
_STREAM_Z_G = 19


@dataclass(frozen=True)
class TrainConfig:
    total_steps: int = 1000
    batch_size: int = 4
    g_lr: float = 2e-3
    d_lr: float = 2e-3
    adam_beta1: float = 0.0
    adam_beta2: float = 0.99
    lambda_cse: float = 1.0
    r1_gamma: float = 1.0
    r1_interval: int = 16
    epsilon_weight: float = 1e-3
    hflip: bool = True
    geometric: bool = True
    color: bool = True
    ema_decay: float = 0.999
    ema_enabled: bool = True
    omega_mean_decay: float = 0.995
    seed: int = 0
    checkpoint_interval: int = 1000

    def __post_init__(self):
        if min(self.g_lr, self.d_lr, self.r1_gamma, self.epsilon_weight) < 0:
            raise ValueError("rates and weights must be non-negative")
        if self.r1_interval < 1:
            raise ValueError("r1 interval must be >= 1")

    def augment_config(self) -> AugmentConfig:
        return AugmentConfig(hflip=self.hflip, geometric=self.geometric,
                             color=self.color)


class AnnotationDirectoryDataset:
    """Samples stored in the on-disk annotation format."""

    def __init__(self, directory: Path):
        self.directory = Path(directory)
        self.ids = list_sample_ids(self.directory)
        if not self.ids:
            raise ValueError(f"no annotation samples under {self.directory}")

    def __len__(self) -> int:
        return len(self.ids)

    def load(self, index: int) -> SurfaceAnnotation:
        return load_annotation(self.directory, self.ids[index])


class RenderedDataset:
    """Synthetic samples rendered on demand; no disk round trip."""

    def __init__(self, spec: SyntheticSpec, start: int = 0, count: int | None = None):
        self.spec = spec
        self.start = start
        self.count = spec.num_samples - start if count is None else count
        if self.start + self.count > spec.num_samples:
            raise ValueError("window exceeds the sample count in the spec")

    def __len__(self) -> int:
        return self.count

    def load(self, index: int) -> SurfaceAnnotation:
        return render_sample(self.spec, self.start + index)


@dataclass
class TrainState:
    mapping: MappingNetwork
    gen: Generator
    disc: Discriminator
    ema_mapping: MappingNetwork
    ema_gen: Generator
    opt_g: torch.optim.Adam
    opt_d: torch.optim.Adam
    step: int = 0


def build_state(map_cfg: MappingConfig, gen_cfg: GeneratorConfig,
                disc_cfg: DiscriminatorConfig, train_cfg: TrainConfig) -> TrainState:
    g = torch.Generator().manual_seed(train_cfg.seed)
    mapping = MappingNetwork(map_cfg, generator=g)
    gen = Generator(gen_cfg, generator=g)
    disc = Discriminator(disc_cfg, generator=g)
    ema_mapping = copy.deepcopy(mapping)
    ema_gen = copy.deepcopy(gen)
    for module in (ema_mapping, ema_gen):
        for p in module.parameters():
            p.requires_grad_(False)
    betas = (train_cfg.adam_beta1, train_cfg.adam_beta2)
    opt_g = torch.optim.Adam(list(gen.parameters()) + list(mapping.parameters()),
                             lr=train_cfg.g_lr, betas=betas)
    opt_d = torch.optim.Adam(disc.parameters(), lr=train_cfg.d_lr, betas=betas)
    return TrainState(mapping=mapping, gen=gen, disc=disc,
                      ema_mapping=ema_mapping, ema_gen=ema_gen,
                      opt_g=opt_g, opt_d=opt_d)


def _check_finite(total: torch.Tensor, terms: dict, step: int) -> None:
    if not torch.isfinite(total):
        raise DivergenceError(step, terms)


def d_loss(disc: Discriminator, real_images: torch.Tensor, masks: torch.Tensor,
           targets: torch.Tensor, body: torch.Tensor, fake_images: torch.Tensor,
           cfg: TrainConfig, r1_step: bool = False, step: int = -1
           ) -> tuple[torch.Tensor, dict]:
    """Critic objective on one batch; fake images are treated as constants."""
    if r1_step:
        real_images = real_images.detach().requires_grad_(True)
    out_real = disc(real_images, masks)
    out_fake = disc(fake_images.detach(), masks)
    terms = {
        "d_adv_real": F.softplus(-out_real.logit).mean(),
        "d_adv_fake": F.softplus(out_fake.logit).mean(),
        "d_epsilon": cfg.epsilon_weight * out_real.logit.square().mean(),
        "d_cse": cfg.lambda_cse * surface_loss(out_real.e_hat, targets, body).value,
    }
    if r1_step:
        grad = torch.autograd.grad(out_real.logit.sum(), real_images,
                                   create_graph=True)[0]
        masked = grad * masks[:, :1]
        penalty = masked.square().sum(dim=(1, 2, 3)).mean()
        terms["d_r1"] = (cfg.r1_gamma / 2.0) * penalty * cfg.r1_interval
    total = sum(terms.values())
    scalars = {k: float(v.detach()) for k, v in terms.items()}
    _check_finite(total, scalars, step)
    return total, scalars


def g_loss(disc: Discriminator, fake_images: torch.Tensor, masks: torch.Tensor,
           targets: torch.Tensor, body: torch.Tensor, cfg: TrainConfig,
           step: int = -1) -> tuple[torch.Tensor, dict]:
    """Generator objective; the critic is frozen for the call."""
    states = [p.requires_grad for p in disc.parameters()]
    try:
        for p in disc.parameters():
            p.requires_grad_(False)
        out = disc(fake_images, masks)
    finally:
        for p, s in zip(disc.parameters(), states):
            p.requires_grad_(s)
    terms = {
        "g_adv": F.softplus(-out.logit).mean(),
        "g_cse": cfg.lambda_cse * surface_loss(out.e_hat, targets, body).value,
    }
    total = sum(terms.values())
    scalars = {k: float(v.detach()) for k, v in terms.items()}
    _check_finite(total, scalars, step)
    return total, scalars


def ema_update(ema_module: torch.nn.Module, module: torch.nn.Module,
               decay: float) -> None:
    """ema = decay * ema + (1 - decay) * current; buffers copied verbatim."""
    with torch.no_grad():
        for pe, p in zip(ema_module.parameters(), module.parameters()):
            pe.copy_(decay * pe + (1.0 - decay) * p)
        for be, b in zip(ema_module.buffers(), module.buffers()):
            be.copy_(b)


def _batch_tensors(anns: list[SurfaceAnnotation]
                   ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    from .discriminator import embedding_targets

    targets, body = embedding_targets(anns)
    images = torch.stack([
        torch.from_numpy(np.ascontiguousarray(a.image.transpose(2, 0, 1)))
        for a in anns])
    return images, targets, body


def _fields_and_fake(anns, zs, state: TrainState):
    variational = state.mapping.config.variational
    fields = [map_field(ann, z if variational else None, state.mapping)
              for ann, z in zip(anns, zs)]
    # Spatial-z generators read the latent from the input instead.
    gin = build_generator_input(anns, fields, z=np.stack(zs))
    fake = generate(gin, state.gen)
    return fields, gin, fake


def save_checkpoint(state: TrainState, path: Path, map_cfg: MappingConfig,
                    gen_cfg: GeneratorConfig, disc_cfg: DiscriminatorConfig,
                    train_cfg: TrainConfig) -> None:
    records = {}
    records.update(module_records("map", state.mapping))
    records.update(module_records("gen", state.gen))
    records.update(module_records("disc", state.disc))
    records.update(module_records("ema_map", state.ema_mapping))
    records.update(module_records("ema_gen", state.ema_gen))
    records.update(optimizer_records("opt_g", state.opt_g))
    records.update(optimizer_records("opt_d", state.opt_d))
    config = config_snapshot(mapping=map_cfg, generator=gen_cfg,
                             discriminator=disc_cfg, training=train_cfg)
    write_records(path, state.step, config, records)


def checkpoint_configs(config: dict) -> tuple[MappingConfig, GeneratorConfig,
                                              DiscriminatorConfig, TrainConfig]:
    return (MappingConfig(**config["mapping"]),
            GeneratorConfig(**config["generator"]),
            DiscriminatorConfig(**config["discriminator"]),
            TrainConfig(**config["training"]))


def load_checkpoint(path: Path) -> tuple[TrainState, dict]:
    step, config, records = read_records(path)
    map_cfg, gen_cfg, disc_cfg, train_cfg = checkpoint_configs(config)
    state = build_state(map_cfg, gen_cfg, disc_cfg, train_cfg)
    load_module_records("map", state.mapping, records)
    load_module_records("gen", state.gen, records)
    load_module_records("disc", state.disc, records)
    load_module_records("ema_map", state.ema_mapping, records)
    load_module_records("ema_gen", state.ema_gen, records)
    load_optimizer_records("opt_g", state.opt_g, records)
    load_optimizer_records("opt_d", state.opt_d, records)
    state.step = step
    return state, config


def _append_metrics(path: Path | None, step: int, terms: dict) -> None:
    if path is None:
        return
    with open(path, "a") as f:
        for name, value in terms.items():
            f.write(f"{step} {name} {value:.8g}\n")


def train(dataset, map_cfg: MappingConfig, gen_cfg: GeneratorConfig,
          disc_cfg: DiscriminatorConfig, train_cfg: TrainConfig,
          out_dir: Path | None = None, resume_from: Path | None = None,
          progress: bool = False) -> TrainState:
    """Alternating critic/generator updates; deterministic under the seed."""
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    if resume_from is not None:
        state, config = load_checkpoint(resume_from)
        map_cfg, gen_cfg, disc_cfg, train_cfg = checkpoint_configs(config)
    else:
        state = build_state(map_cfg, gen_cfg, disc_cfg, train_cfg)
    out_dir = Path(out_dir) if out_dir is not None else None
    metrics_path = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        metrics_path = out_dir / "metrics.log"
    aug_cfg = train_cfg.augment_config()
    seed = train_cfg.seed
    z_dim = map_cfg.z_dim
    started = time.time()

    for step in range(state.step, train_cfg.total_steps):
        order = np.random.default_rng((seed, _STREAM_BATCH, step))
        indices = order.integers(0, len(dataset), train_cfg.batch_size)
        anns = []
        for slot, index in enumerate(indices):
            ann = dataset.load(int(index))
            rng = np.random.default_rng((seed, _STREAM_AUGMENT, step, slot))
            anns.append(augment(ann, rng, aug_cfg))
        real_images, targets, body = _batch_tensors(anns)

        # Critic update; generator output is constant here.
        zs_d = [sample_z(np.random.default_rng((seed, _STREAM_Z_D, step, slot)), z_dim)
                for slot in range(train_cfg.batch_size)]
        with torch.no_grad():
            _, gin, fake_d = _fields_and_fake(anns, zs_d, state)
        masks = gin.mask_onehot
        r1_step = step % train_cfg.r1_interval == 0
        d_total, d_terms = d_loss(state.disc, real_images, masks, targets, body,
                                  fake_d, train_cfg, r1_step=r1_step, step=step)
        state.opt_d.zero_grad(set_to_none=True)
        d_total.backward()
        state.opt_d.step()

        # Generator update with fresh latents.
        zs_g = [sample_z(np.random.default_rng((seed, _STREAM_Z_G, step, slot)), z_dim)
                for slot in range(train_cfg.batch_size)]
        fields, gin_g, fake_g = _fields_and_fake(anns, zs_g, state)
        g_total, g_terms = g_loss(state.disc, fake_g, gin_g.mask_onehot, targets,
                                  body, train_cfg, step=step)
        state.opt_g.zero_grad(set_to_none=True)
        g_total.backward()
        state.opt_g.step()

        with torch.no_grad():
            body_latents = [f.omega[:, torch.from_numpy(f.classes == Region.BODY)].t()
                            for f in fields]
            stacked = torch.cat(body_latents, dim=0)
            update_omega_mean(state.mapping, stacked,
                              decay=train_cfg.omega_mean_decay)
        if train_cfg.ema_enabled:
            ema_update(state.ema_mapping, state.mapping, train_cfg.ema_decay)
            ema_update(state.ema_gen, state.gen, train_cfg.ema_decay)

        state.step = step + 1
        _append_metrics(metrics_path, step, {**d_terms, **g_terms})
        if progress and (step % 50 == 0 or step + 1 == train_cfg.total_steps):
            elapsed = time.time() - started
            print(f"step {step + 1}/{train_cfg.total_steps} "
                  f"d={sum(d_terms.values()):.3f} g={sum(g_terms.values()):.3f} "
                  f"({elapsed:.0f}s)", flush=True)
        if out_dir is not None and state.step % train_cfg.checkpoint_interval == 0:
            save_checkpoint(state, out_dir / f"ckpt_{state.step:07d}.bin",
                            map_cfg, gen_cfg, disc_cfg, train_cfg)

    if out_dir is not None:
        save_checkpoint(state, out_dir / "ckpt_final.bin",
                        map_cfg, gen_cfg, disc_cfg, train_cfg)
    return state
