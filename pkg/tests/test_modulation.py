import numpy as np
import pytest
import torch

from helpers import check_parameter_gradients, central_difference_grads, max_relative_error
from surfgan.layers import EqualizedConv2d
from surfgan.modulation import StyleProjection, modulate, normalize, styles


def make_proj(latent_dim=6, channels=4, seed=0):
    g = torch.Generator().manual_seed(seed)
    return StyleProjection(latent_dim, channels, generator=g)


class TestStyles:
    def test_zero_weights_give_identity_styles(self):
        proj = make_proj()
        with torch.no_grad():
            proj.gamma.weight.zero_()
            proj.beta.weight.zero_()
        omega = torch.randn(6, 5, 4)
        gamma, beta = styles(omega, proj)
        assert torch.equal(gamma, torch.ones(4, 5, 4))
        assert torch.equal(beta, torch.zeros(4, 5, 4))

    def test_constant_field_gives_constant_styles(self):
        proj = make_proj()
        omega = torch.randn(6, 1, 1).expand(6, 5, 4).contiguous()
        gamma, beta = styles(omega, proj)
        for m in (gamma, beta):
            assert torch.equal(m, m[:, :1, :1].expand_as(m))

    def test_permutation_equivariant_bit_exact(self):
        proj = make_proj()
        omega = torch.randn(6, 5, 4)
        perm = torch.randperm(20)
        permuted = omega.reshape(6, -1)[:, perm].reshape(6, 5, 4)
        ga, ba = styles(permuted, proj)
        gb, bb = styles(omega, proj)
        assert torch.equal(ga.reshape(4, -1), gb.reshape(4, -1)[:, perm])
        assert torch.equal(ba.reshape(4, -1), bb.reshape(4, -1)[:, perm])

    def test_scaling_field_scales_centered_styles(self):
        proj = make_proj()
        omega = torch.randn(6, 3, 3, dtype=torch.float64)
        proj = proj.double()
        g1, b1 = styles(omega, proj)
        g2, b2 = styles(2.5 * omega, proj)
        bg = proj.gamma.bias[:, None, None]
        bb = proj.beta.bias[:, None, None]
        torch.testing.assert_close(g2 - bg, 2.5 * (g1 - bg))
        torch.testing.assert_close(b2 - bb, 2.5 * (b1 - bb))

    def test_dimension_mismatch(self):
        proj = make_proj(latent_dim=6)
        with pytest.raises(ValueError):
            styles(torch.randn(7, 3, 3), proj)

    def test_batched_matches_unbatched(self):
        # Accumulation order may differ between batch shapes; values agree
        # to float accuracy.
        proj = make_proj()
        omega = torch.randn(2, 6, 3, 3)
        gb, bb = styles(omega, proj)
        for i in range(2):
            g, b = styles(omega[i], proj)
            torch.testing.assert_close(gb[i], g, rtol=0, atol=1e-6)
            torch.testing.assert_close(bb[i], b, rtol=0, atol=1e-6)


class TestModulate:
    def test_identity_styles(self):
        x = torch.randn(4, 5, 5)
        out = modulate(x, torch.ones_like(x), torch.zeros_like(x))
        assert torch.equal(out, x)

    def test_zero_input_returns_beta(self):
        beta = torch.randn(4, 5, 5)
        out = modulate(torch.zeros_like(beta), torch.ones_like(beta), beta)
        assert torch.equal(out, beta)

    def test_algebraic_identity(self):
        # gamma=2, beta=-x gives 2x - x = x.
        x = torch.randn(3, 4, 4)
        out = modulate(x, torch.full_like(x, 2.0), -x)
        torch.testing.assert_close(out, x)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            modulate(torch.zeros(3, 4, 4), torch.zeros(3, 4, 5), torch.zeros(3, 4, 4))


class TestNormalize:
    def test_constant_channel_becomes_zero(self):
        x = torch.full((2, 8, 8), 3.7)
        out = normalize(x)
        assert torch.equal(out, torch.zeros_like(x))

    def test_standardized_input_almost_unchanged(self):
        rng = torch.Generator().manual_seed(0)
        x = torch.randn(3, 16, 16, generator=rng, dtype=torch.float64)
        x = normalize(x)
        again = normalize(x)
        assert (again - x).abs().max().item() < 1e-6

    def test_output_moments(self):
        rng = torch.Generator().manual_seed(1)
        x = torch.randn(5, 12, 10, generator=rng)
        out = normalize(x)
        mean = out.mean(dim=(1, 2))
        var = out.var(dim=(1, 2), unbiased=False)
        assert mean.abs().max().item() < 1e-6
        assert (var - 1).abs().max().item() < 1e-4

    def test_statistics_permutation_invariant(self):
        x = torch.randn(3, 4, 5, dtype=torch.float64)
        perm = torch.randperm(20)
        permuted = x.reshape(3, -1)[:, perm].reshape(3, 4, 5)
        a = normalize(permuted).reshape(3, -1)
        b = normalize(x).reshape(3, -1)[:, perm]
        torch.testing.assert_close(a, b, rtol=1e-12, atol=1e-12)


class TestCompositeGradients:
    def test_modulate_conv_normalize_parameter_and_input_gradients(self):
        # The full per-layer pipeline on a 4x4x3 toy case, double precision.
        g = torch.Generator().manual_seed(2)
        proj = StyleProjection(5, 3, generator=g).double()
        conv = EqualizedConv2d(3, 2, 3, padding=1, generator=g).double()
        omega = torch.randn(5, 4, 4, generator=g, dtype=torch.float64)
        x0 = torch.randn(3, 4, 4, generator=g, dtype=torch.float64)
        probe = torch.randn(2, 4, 4, generator=g, dtype=torch.float64)
        x_in = x0.clone().requires_grad_(True)

        def loss():
            gamma, beta = styles(omega, proj)
            h = modulate(x_in, gamma, beta)
            h = conv(h.unsqueeze(0))
            h = normalize(h).squeeze(0)
            return (h * probe).sum()

        params = list(proj.parameters()) + list(conv.parameters())
        err = check_parameter_gradients(loss, params)
        assert err < 1e-3

        for p in params + [x_in]:
            p.grad = None
        loss().backward()
        analytic = [x_in.grad.detach().clone()]
        numeric = central_difference_grads(loss, [x_in.detach()])
        assert max_relative_error(analytic, numeric) < 1e-3

    def test_composite_permutation_equivariance_statistics(self):
        # styles and modulate are bit-exact; normalize matches to float
        # accuracy because only its reduction order changes.
        g = torch.Generator().manual_seed(3)
        proj = StyleProjection(5, 3, generator=g).double()
        omega = torch.randn(5, 4, 5, dtype=torch.float64)
        x = torch.randn(3, 4, 5, dtype=torch.float64)
        perm = torch.randperm(20)

        def run(o, xx):
            gamma, beta = styles(o, proj)
            return normalize(modulate(xx, gamma, beta))

        base = run(omega, x).reshape(3, -1)[:, perm]
        shuffled = run(omega.reshape(5, -1)[:, perm].reshape(5, 4, 5),
                       x.reshape(3, -1)[:, perm].reshape(3, 4, 5)).reshape(3, -1)
        torch.testing.assert_close(shuffled, base, rtol=1e-12, atol=1e-12)
