import numpy as np
import pytest

from surfgan.surface import is_discretized, load_annotation, load_vertex_table
from surfgan.synthetic import (
    SyntheticSpec,
    build_vertex_table,
    hue_shift,
    load_manifest,
    make_dataset,
    oracle_texture,
    render_sample,
    sample_id,
    texture_color,
)

SPEC = SyntheticSpec(height=32, width=16, num_samples=8)


class TestRenderSample:
    def test_deterministic(self):
        a = render_sample(SPEC, 3)
        b = render_sample(SPEC, 3)
        np.testing.assert_array_equal(a.image, b.image)
        np.testing.assert_array_equal(a.embeddings.data, b.embeddings.data)
        np.testing.assert_array_equal(a.mask.classes, b.mask.classes)

    def test_body_color_is_texture_of_embedding(self):
        ann = render_sample(SPEC, 0)
        body = ann.mask.body
        expected = texture_color(SPEC, ann.embeddings.data[body],
                                 hue_shift=hue_shift(SPEC, 0))
        np.testing.assert_array_equal(ann.image[body], expected)

    def test_different_indices_place_bodies_differently(self):
        a = render_sample(SPEC, 0).mask.body
        b = render_sample(SPEC, 1).mask.body
        inter = (a & b).sum()
        union = (a | b).sum()
        assert union > 0 and inter < union  # IoU < 1

    def test_index_out_of_range(self):
        with pytest.raises(ValueError):
            render_sample(SPEC, SPEC.num_samples)

    def test_embeddings_are_table_rows(self):
        ann = render_sample(SPEC, 2)
        assert is_discretized(ann.embeddings, build_vertex_table(SPEC))

    def test_body_nonempty_and_dilated_ring_present(self):
        for i in range(SPEC.num_samples):
            ann = render_sample(SPEC, i)
            assert ann.mask.body.any()
            assert ann.mask.dilated.any()

    def test_image_in_range(self):
        ann = render_sample(SPEC, 4)
        assert ann.image.min() >= -1.0 and ann.image.max() <= 1.0


class TestOracle:
    def test_matches_rendered_body_pixels_exactly(self):
        ann = render_sample(SPEC, 5)
        oracle = oracle_texture(ann, SPEC, hue_shift=hue_shift(SPEC, 5))
        body = ann.mask.body
        np.testing.assert_array_equal(oracle[body], ann.image[body])

    def test_known_pixels_untouched(self):
        ann = render_sample(SPEC, 5)
        oracle = oracle_texture(ann, SPEC)
        known = ann.mask.known
        np.testing.assert_array_equal(oracle[known], ann.image[known])

    def test_unshifted_oracle_close_to_rendered(self):
        # The per-sample shift is bounded, so the plain oracle stays near
        # the rendered texture.
        ann = render_sample(SPEC, 6)
        oracle = oracle_texture(ann, SPEC)
        body = ann.mask.body
        assert np.abs(oracle[body] - ann.image[body]).max() <= 2 * SPEC.hue_amplitude


class TestVertexCurve:
    def test_smooth_consecutive_rows(self):
        table = build_vertex_table(SPEC)
        diffs = np.linalg.norm(np.diff(table.embeddings, axis=0), axis=1)
        assert diffs.max() < 0.5  # consecutive vertices stay close

    def test_deterministic(self):
        a = build_vertex_table(SPEC)
        b = build_vertex_table(SPEC)
        np.testing.assert_array_equal(a.embeddings, b.embeddings)


class TestMakeDataset:
    def test_writes_loadable_samples(self, tmp_path):
        spec = SyntheticSpec(height=24, width=12, num_samples=3)
        summary = make_dataset(spec, tmp_path)
        assert summary["samples"] == 3
        table = load_vertex_table(tmp_path / "vertices.vtx")
        np.testing.assert_array_equal(table.embeddings,
                                      build_vertex_table(spec).embeddings)
        back = load_manifest(tmp_path)
        assert back == spec
        for i in range(3):
            ann = load_annotation(tmp_path, sample_id(i))
            assert ann.mask.body.any()
            # Embeddings survive the round trip bit-exactly.
            direct = render_sample(spec, i)
            np.testing.assert_array_equal(ann.embeddings.data[ann.embeddings.valid],
                                          direct.embeddings.data[direct.embeddings.valid])

    def test_spec_json_round_trip(self):
        spec = SyntheticSpec(num_samples=5, hue_amplitude=0.1)
        assert SyntheticSpec.from_json(spec.to_json()) == spec

    def test_spec_json_rejects_unknown_fields(self):
        with pytest.raises(ValueError, match="unknown"):
            SyntheticSpec.from_json('{"bogus": 1}')
