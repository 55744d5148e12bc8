import numpy as np
import pytest
import torch

from rcm2he.model import (DiscriminatorSpec, GeneratorSpec, NetworkAssembly,
                          PatchDiscriminator, RgbConcat, UnetGenerator,
                          audit_params, build_discriminator, build_generator,
                          count_params, discriminator_param_count,
                          generator_param_count, rgb_concat_forward)


def _layerwise_generator_count(spec):
    """Independent layer-by-layer count from the architecture schedule."""
    w = [min(spec.base_width * 2 ** k, spec.base_width * 8) for k in range(spec.levels)]
    norm_cost = 0 if spec.norm == "none" else 2
    total = 16 * spec.in_channels * w[0] + w[0]
    for k in range(1, spec.levels - 1):
        total += 16 * w[k - 1] * w[k]
        total += w[k] if spec.norm == "none" else norm_cost * w[k]
    total += 16 * w[-2] * w[-1] + w[-1]
    total += 16 * w[-1] * w[-2]
    total += w[-2] if spec.norm == "none" else norm_cost * w[-2]
    for k in range(spec.levels - 2, 0, -1):
        total += 16 * 2 * w[k] * w[k - 1]
        total += w[k - 1] if spec.norm == "none" else norm_cost * w[k - 1]
    total += 16 * 2 * w[0] * spec.out_channels + spec.out_channels
    return total


class TestGenerator:
    def test_shape_preserved(self):
        gen = build_generator(GeneratorSpec(levels=6, base_width=8))
        out = gen(torch.randn(2, 1, 64, 64))
        assert out.shape == (2, 1, 64, 64)

    def test_reference_width_schedule(self):
        spec = GeneratorSpec(in_channels=3, out_channels=3, levels=8, base_width=64)
        assert spec.widths() == [64, 128, 256, 512, 512, 512, 512, 512]

    def test_bad_input_dims(self):
        gen = build_generator(GeneratorSpec(levels=5, base_width=4))
        with pytest.raises(ValueError, match="divisible"):
            gen(torch.randn(1, 1, 48, 48))

    @pytest.mark.parametrize("levels,base,cin,cout", [
        (2, 4, 1, 1), (4, 8, 1, 3), (6, 16, 1, 1), (8, 16, 3, 3),
    ])
    def test_param_count_matches_layerwise_oracle(self, levels, base, cin, cout):
        spec = GeneratorSpec(in_channels=cin, out_channels=cout,
                             levels=levels, base_width=base)
        gen = UnetGenerator(spec)
        expected = _layerwise_generator_count(spec)
        assert count_params(gen) == expected
        assert generator_param_count(spec) == expected

    def test_output_bounded_by_tanh(self):
        gen = build_generator(GeneratorSpec(levels=3, base_width=4))
        out = gen(torch.randn(2, 1, 16, 16) * 10)
        assert out.min() >= -1.0 and out.max() <= 1.0


class TestDiscriminator:
    def test_single_value_in_open_interval(self):
        disc = build_discriminator(DiscriminatorSpec(in_channels=2, base_width=8))
        disc.eval()
        out = disc(torch.randn(3, 1, 64, 64), torch.randn(3, 1, 64, 64))
        assert out.shape == (3,)
        assert (out > 0).all() and (out < 1).all()

    def test_extreme_inputs_stay_inside(self):
        disc = build_discriminator(DiscriminatorSpec(in_channels=2, base_width=8))
        disc.eval()
        out = disc(torch.full((1, 1, 32, 32), 1e6), torch.full((1, 1, 32, 32), -1e6))
        assert 0.0 < float(out) < 1.0

    def test_patch_mode_returns_map(self):
        disc = build_discriminator(DiscriminatorSpec(in_channels=2, base_width=8,
                                                     patch_output=True))
        disc.eval()
        out = disc(torch.randn(1, 1, 64, 64), torch.randn(1, 1, 64, 64))
        assert out.dim() == 4 and out.shape[-1] > 1
        assert (out > 0).all() and (out < 1).all()

    def test_param_count_matches_formula(self):
        for cin in (2, 4, 6):
            spec = DiscriminatorSpec(in_channels=cin, base_width=16)
            assert count_params(PatchDiscriminator(spec)) == discriminator_param_count(spec)

    def test_below_footprint_rejected(self):
        disc = build_discriminator(DiscriminatorSpec(in_channels=2, base_width=4))
        with pytest.raises(ValueError, match="stride footprint"):
            disc(torch.randn(1, 1, 4, 4), torch.randn(1, 1, 4, 4))

    def test_unconditional_mode(self):
        disc = build_discriminator(DiscriminatorSpec(in_channels=1, base_width=4,
                                                     conditional=False))
        disc.eval()
        assert disc(torch.randn(2, 1, 32, 32)).shape == (2,)


class TestRgbConcat:
    def test_zero_channels_give_exact_white(self, rng):
        layer = RgbConcat()
        with torch.no_grad():
            layer.weights_h.copy_(torch.tensor([0.3, -1.0, 2.0]))
            layer.weights_e.copy_(torch.tensor([1.5, 0.0, -0.7]))
        out = rgb_concat_forward(np.zeros((4, 4)), np.zeros((4, 4)), layer)
        assert torch.equal(out, torch.ones(4, 4, 3, dtype=torch.float64))

    def test_sigmoid_at_zero_weight(self):
        layer = RgbConcat()
        with torch.no_grad():
            layer.weights_h.zero_()
            layer.weights_e.zero_()
        out = rgb_concat_forward(np.ones((2, 2)), np.zeros((2, 2)), layer)
        assert torch.allclose(out, torch.full((2, 2, 3), 0.5, dtype=torch.float64))

    def test_matches_scalar_loop_oracle(self, rng):
        layer = RgbConcat()
        with torch.no_grad():
            layer.weights_h.copy_(torch.tensor([0.2, -0.4, 1.1]))
            layer.weights_e.copy_(torch.tensor([-0.9, 0.5, 0.05]))
        i_h = rng.random((8, 8))
        i_e = rng.random((8, 8))
        out = rgb_concat_forward(i_h, i_e, layer).detach().numpy()
        sig = lambda x: 1.0 / (1.0 + np.exp(-x))
        for i in range(8):
            for j in range(8):
                for c in range(3):
                    expected = (1.0 - i_h[i, j] * sig(layer.weights_h[c].item())
                                - i_e[i, j] * sig(layer.weights_e[c].item()))
                    assert abs(out[i, j, c] - expected) < 1e-7

    def test_range_is_open_interval(self, rng):
        layer = RgbConcat()
        out = rgb_concat_forward(rng.random((16, 16)), rng.random((16, 16)), layer)
        assert out.min() > -1.0 and out.max() <= 1.0

    def test_dim_mismatch(self):
        with pytest.raises(ValueError, match="differ"):
            rgb_concat_forward(np.zeros((4, 4)), np.zeros((5, 5)), RgbConcat())

    def test_analytic_weight_gradient_vs_finite_difference(self, rng):
        layer = RgbConcat().double()
        with torch.no_grad():
            layer.weights_h.copy_(torch.tensor([0.3, -0.2, 0.9], dtype=torch.float64))
            layer.weights_e.copy_(torch.tensor([-1.1, 0.4, 0.0], dtype=torch.float64))
        i_h = torch.tensor(rng.random((8, 8)))
        i_e = torch.tensor(rng.random((8, 8)))

        def loss_at(param, idx, value):
            with torch.no_grad():
                old = param[idx].item()
                param[idx] = value
            out = rgb_concat_forward(i_h, i_e, layer)
            with torch.no_grad():
                param[idx] = old
            return out.sum().item()

        h = 1e-6
        for param, channel_imgs in ((layer.weights_h, i_h), (layer.weights_e, i_e)):
            for c in range(3):
                sig = torch.sigmoid(param[c]).item()
                analytic = float((-channel_imgs * sig * (1 - sig)).sum())
                w0 = param[c].item()
                fd = (loss_at(param, c, w0 + h) - loss_at(param, c, w0 - h)) / (2 * h)
                assert abs(analytic - fd) / max(abs(analytic), 1e-8) < 1e-4


class TestAssembly:
    def test_forward_full_ranges_and_shape(self):
        asm = NetworkAssembly(GeneratorSpec(levels=4, base_width=4),
                              DiscriminatorSpec(base_width=4), seed=0)
        asm.eval()
        x = torch.randn(2, 1, 32, 32)
        i_h, i_e, i_rgb = asm.forward_full(x)
        for t in (i_h, i_e):
            assert t.min() >= 0.0 and t.max() <= 1.0
            assert t.shape == (2, 1, 32, 32)
        assert i_rgb.shape == (2, 3, 32, 32)
        assert i_rgb.min() > -1.0 and i_rgb.max() <= 1.0

    def test_forward_deterministic_in_eval(self):
        asm = NetworkAssembly(GeneratorSpec(levels=3, base_width=4),
                              DiscriminatorSpec(base_width=4), seed=1)
        asm.eval()
        x = torch.randn(1, 1, 16, 16)
        a = asm.forward_full(x)
        b = asm.forward_full(x)
        assert all(torch.equal(u, v) for u, v in zip(a, b))

    def test_twin_generators_identical_counts_and_outputs(self):
        asm = NetworkAssembly(GeneratorSpec(levels=3, base_width=4),
                              DiscriminatorSpec(base_width=4), seed=2)
        assert count_params(asm.g_h) == count_params(asm.g_e)
        asm.g_e.load_state_dict(asm.g_h.state_dict())
        asm.eval()
        x = torch.randn(1, 1, 16, 16)
        assert torch.equal(asm.g_h(x), asm.g_e(x))

    def test_audit_structure(self):
        asm = NetworkAssembly(GeneratorSpec(levels=3, base_width=4),
                              DiscriminatorSpec(base_width=4), seed=3)
        report = audit_params(asm)
        assert report.components["concat"] == 6
        assert report.generator_side_total == (report.components["g_h"]
                                               + report.components["g_e"] + 6)
        assert (report.generator_side_total - 6) % 2 == 0
        assert (report.generator_side_total - 6) // 2 == report.components["g_h"]
