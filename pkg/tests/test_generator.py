import numpy as np
import pytest
import torch

from surfgan.generator import (
    Generator,
    GeneratorConfig,
    GeneratorInput,
    build_generator_input,
    count_parameters,
    full_scale_base_config,
    full_scale_large_config,
    generate,
    generate_decoder_only,
    mask_onehot_tensor,
)
from surfgan.mapping import MappingConfig, MappingNetwork, map_field, sample_z
from surfgan.surface import (
    EmbeddingRaster,
    Region,
    RegionMask,
    SurfaceAnnotation,
    dilate_mask,
)
from surfgan.synthetic import SyntheticSpec, build_vertex_table, render_sample

SPEC = SyntheticSpec(height=32, width=16, num_samples=4)
GCFG = GeneratorConfig(height=32, width=16, base_channels=16, max_channels=32,
                       omega_dim=12, z_dim=8)
MCFG = MappingConfig(depth=1, width=16, out_dim=12, variational=True, z_dim=8)


def make_nets(gcfg=GCFG, mcfg=MCFG, seed=0):
    g = torch.Generator().manual_seed(seed)
    return Generator(gcfg, generator=g), MappingNetwork(mcfg, generator=g)


def inputs_for(anns, mapper, rng, z=None):
    if z is None:
        z = sample_z(rng, mapper.config.z_dim)
    fields = [map_field(a, z, mapper) for a in anns]
    return build_generator_input(anns, fields, z=z)


class TestGenerate:
    def test_all_known_composite_equals_input(self):
        gen, mapper = make_nets()
        rng = np.random.default_rng(0)
        classes = np.zeros((32, 16), dtype=np.uint8)
        image = rng.uniform(-1, 1, (32, 16, 3)).astype(np.float32)
        ann = SurfaceAnnotation(
            image=image,
            embeddings=EmbeddingRaster(data=np.zeros((32, 16, 16), np.float32),
                                       valid=np.zeros((32, 16), bool)),
            mask=RegionMask(classes))
        gin = inputs_for([ann], mapper, rng)
        with torch.no_grad():
            out = generate(gin, gen)
        np.testing.assert_array_equal(out[0].numpy(),
                                      image.transpose(2, 0, 1))

    def test_known_pixels_always_preserved(self):
        gen, mapper = make_nets()
        rng = np.random.default_rng(1)
        ann = render_sample(SPEC, 0)
        gin = inputs_for([ann], mapper, rng)
        with torch.no_grad():
            out = generate(gin, gen)
        known = ann.mask.known
        np.testing.assert_array_equal(
            out[0].numpy().transpose(1, 2, 0)[known], ann.image[known])

    def test_deterministic(self):
        gen, mapper = make_nets()
        rng = np.random.default_rng(2)
        ann = render_sample(SPEC, 1)
        z = sample_z(rng, 8)
        a = generate(inputs_for([ann], mapper, rng, z=z), gen)
        b = generate(inputs_for([ann], mapper, rng, z=z), gen)
        assert torch.equal(a, b)

    def test_output_range_and_mean_at_random_init(self):
        gen, mapper = make_nets(seed=0)
        rng = np.random.default_rng(0)
        anns = [render_sample(SPEC, i) for i in range(3)]
        gin = inputs_for(anns, mapper, rng)
        with torch.no_grad():
            raw = gen(gin.masked_image, gin.mask_onehot, gin.omega)
        assert raw.min().item() >= -1.0 and raw.max().item() <= 1.0
        assert abs(raw.mean().item()) <= 0.5

    def test_masked_image_validation(self):
        gen, mapper = make_nets()
        rng = np.random.default_rng(3)
        ann = render_sample(SPEC, 2)
        gin = inputs_for([ann], mapper, rng)
        bad = gin.masked_image.clone()
        bad[0, :, ann.mask.body] = 0.5
        with pytest.raises(ValueError, match="exactly zero"):
            GeneratorInput(masked_image=bad, mask_onehot=gin.mask_onehot,
                           omega=gin.omega, original_image=gin.original_image)

    def test_every_parameter_receives_gradient(self):
        # Random cosine loss at random init: no dead branches.
        gen, mapper = make_nets(seed=7)
        rng = np.random.default_rng(4)
        anns = [render_sample(SPEC, i) for i in range(2)]
        gin = inputs_for(anns, mapper, rng)
        out = generate(gin, gen)
        probe = torch.randn(out.shape, generator=torch.Generator().manual_seed(8))
        loss = torch.nn.functional.cosine_similarity(
            out.reshape(1, -1), probe.reshape(1, -1)).sum()
        loss.backward()
        for name, p in gen.named_parameters():
            assert p.grad is not None and p.grad.abs().max() > 0, name

    def test_mapping_parameters_receive_gradient_through_field(self):
        gen, mapper = make_nets(seed=9)
        rng = np.random.default_rng(5)
        anns = [render_sample(SPEC, i) for i in range(2)]
        gin = inputs_for(anns, mapper, rng)
        out = generate(gin, gen)
        out.square().mean().backward()
        for name, p in mapper.named_parameters():
            assert p.grad is not None and p.grad.abs().max() > 0, name


class TestDecoderOnly:
    def _pose_annotation(self, h, w, cy, cx, table):
        yy, xx = np.mgrid[0:h, 0:w]
        body = ((yy - cy) / 9.0) ** 2 + ((xx - cx) / 5.0) ** 2 <= 1.0
        k = np.minimum((((xx - cx) + 2 * (yy - cy)) % 11 / 11.0 * table.num_vertices)
                       .astype(np.int64), table.num_vertices - 1)
        data = np.zeros((h, w, 16), dtype=np.float32)
        data[body] = table.embeddings[k[body]]
        classes = np.full((h, w), Region.KNOWN, dtype=np.uint8)
        classes[body] = Region.BODY
        mask = dilate_mask(RegionMask(classes), 2)
        return SurfaceAnnotation(image=np.zeros((h, w, 3), np.float32),
                                 embeddings=EmbeddingRaster(data=data, valid=body),
                                 mask=mask)

    def test_deterministic(self):
        gcfg = GeneratorConfig(height=32, width=16, base_channels=16,
                               max_channels=32, omega_dim=12, z_dim=8,
                               mode="decoder_only")
        gen, mapper = make_nets(gcfg)
        rng = np.random.default_rng(6)
        table = build_vertex_table(SPEC)
        ann = self._pose_annotation(32, 16, 16, 8, table)
        z = sample_z(rng, 8)
        field = map_field(ann, z, mapper)
        gin = build_generator_input([ann], [field], with_image=False)
        with torch.no_grad():
            a = generate_decoder_only(gin, gen)
            b = generate_decoder_only(gin, gen)
        assert torch.equal(a, b)

    def test_different_z_changes_body(self):
        gcfg = GeneratorConfig(height=32, width=16, base_channels=16,
                               max_channels=32, omega_dim=12, z_dim=8,
                               mode="decoder_only")
        gen, mapper = make_nets(gcfg)
        rng = np.random.default_rng(7)
        table = build_vertex_table(SPEC)
        ann = self._pose_annotation(32, 16, 16, 8, table)
        outs = []
        for _ in range(2):
            field = map_field(ann, sample_z(rng, 8), mapper)
            gin = build_generator_input([ann], [field], with_image=False)
            with torch.no_grad():
                outs.append(generate_decoder_only(gin, gen))
        body = torch.from_numpy(ann.mask.body)
        diff = (outs[0] - outs[1])[0, :, body].abs().mean()
        assert diff.item() > 0

    def test_translated_pose_translates_output(self):
        # Fully convolutional: shifting the pose by the total stride shifts
        # the synthesized body. The pose must keep twice the receptive-field
        # radius of margin from the borders, where zero padding anchors
        # features to absolute positions.
        gcfg = GeneratorConfig(height=128, width=128, base_channels=16,
                               max_channels=32, omega_dim=12, z_dim=8,
                               mode="decoder_only")
        gen, mapper = make_nets(gcfg)
        rng = np.random.default_rng(8)
        table = build_vertex_table(SPEC)
        dy, dx = 8, 4  # multiples of the generator's total stride (4)
        ann_a = self._pose_annotation(128, 128, 56, 60, table)
        ann_b = self._pose_annotation(128, 128, 56 + dy, 60 + dx, table)
        z = sample_z(rng, 8)
        outs = []
        for ann in (ann_a, ann_b):
            field = map_field(ann, z, mapper)
            gin = build_generator_input([ann], [field], with_image=False)
            with torch.no_grad():
                outs.append(generate_decoder_only(gin, gen)[0])
        body_a = torch.from_numpy(ann_a.mask.body)
        shifted = torch.roll(outs[1], shifts=(-dy, -dx), dims=(1, 2))
        diff = (outs[0] - shifted)[:, body_a].abs().max()
        assert diff.item() < 1e-4

    def test_mode_mismatch_rejected(self):
        gen, mapper = make_nets()
        rng = np.random.default_rng(9)
        ann = render_sample(SPEC, 0)
        gin = inputs_for([ann], mapper, rng)
        with pytest.raises(ValueError):
            generate_decoder_only(gin, gen)


class TestConfigs:
    def test_resolution_divisibility_checked(self):
        with pytest.raises(ValueError):
            GeneratorConfig(height=30, width=16)

    def test_full_scale_parameter_counts(self):
        # Wiring sanity: presets land within 10% of the documented sizes.
        for cfg, target in ((full_scale_base_config(), 7.4e6),
                            (full_scale_large_config(), 39.4e6)):
            net = Generator(cfg)
            mcfg = MappingConfig(depth=6, width=512, out_dim=cfg.omega_dim,
                                 variational=True, z_dim=cfg.z_dim)
            total = count_parameters(net) + count_parameters(MappingNetwork(mcfg))
            assert abs(total - target) / target < 0.10, total

    def test_desk_generator_is_about_a_million_parameters(self):
        n = count_parameters(Generator(GeneratorConfig()))
        assert 0.8e6 <= n <= 1.3e6

    def test_mask_onehot_partition(self):
        classes = np.random.default_rng(0).integers(0, 3, (6, 5)).astype(np.uint8)
        planes = mask_onehot_tensor(classes)
        assert torch.equal(planes.sum(0), torch.ones(6, 5))
