"""Fusion network and synthesis equations."""

import pytest
import torch

from awnet.datamodel import apply_dynamic_filters
from awnet.errors import InvariantError, ModeError, ShapeError
from awnet.fusion import (
    MULTI_REFERENCE,
    SINGLE_REFERENCE,
    ConvDP,
    FusionNet,
    FusionOutput,
    convdp_forward,
    extract_filters,
    extract_mask,
    fusion_forward,
    synthesize_multi,
    synthesize_single,
    weight_map,
)

from helpers import finite_difference_grads, max_rel_error, textured


def single_inputs(h=16, w=16, seed=0, dtype=torch.float32):
    g = torch.Generator().manual_seed(seed)
    ref_w = torch.rand(h, w, 3, generator=g, dtype=dtype)
    lsr_up = torch.rand(h, w, 3, generator=g, dtype=dtype)
    flow = torch.rand(h, w, 2, generator=g, dtype=dtype) - 0.5
    return ref_w, lsr_up, flow, ref_w - lsr_up


class TestFusionNet:
    def test_output_shape_single(self):
        torch.manual_seed(0)
        net = FusionNet()
        out = fusion_forward(net, *single_inputs(64, 96))
        assert out.channels.shape == (64, 96, 26)
        assert out.mode == SINGLE_REFERENCE

    def test_output_shape_multi(self):
        torch.manual_seed(0)
        net = FusionNet(MULTI_REFERENCE)
        ref_w, lsr_up, flow, res = single_inputs(32, 48)
        out = fusion_forward(
            net, ref_w, lsr_up, flow, res,
            ref1_warped=ref_w.flip(0), flow1=flow, residual1=res,
        )
        assert out.channels.shape == (32, 48, 53)

    def test_non_multiple_of_eight_sizes(self):
        torch.manual_seed(0)
        net = FusionNet()
        out = fusion_forward(net, *single_inputs(30, 41))
        assert out.channels.shape == (30, 41, 26)

    def test_deterministic(self):
        torch.manual_seed(0)
        net = FusionNet()
        inp = single_inputs(24, 24, seed=5)
        a = fusion_forward(net, *inp).channels
        b = fusion_forward(net, *inp).channels
        assert torch.equal(a, b)

    def test_parameter_budget(self):
        assert FusionNet().parameter_count() < 2_500_000
        assert FusionNet(MULTI_REFERENCE).parameter_count() < 2_500_000

    def test_mode_mismatch_rejected(self):
        torch.manual_seed(0)
        net = FusionNet(MULTI_REFERENCE)
        with pytest.raises(ModeError):
            fusion_forward(net, *single_inputs())

    def test_mixed_resolution_rejected(self):
        torch.manual_seed(0)
        net = FusionNet()
        ref_w, lsr_up, flow, res = single_inputs()
        with pytest.raises(ShapeError):
            fusion_forward(net, ref_w, lsr_up[:8], flow, res)

    def test_init_starts_near_identity_regime(self):
        torch.manual_seed(0)
        net = FusionNet()
        out = fusion_forward(net, *single_inputs(32, 32, seed=2))
        bank = extract_filters(out)
        mask = extract_mask(out)
        assert (bank[..., 2, 2] - 1.0).abs().max() < 0.05
        off_center = bank.clone()
        off_center[..., 2, 2] = 0.0
        assert off_center.abs().max() < 0.05
        assert (mask - 0.5).abs().max() < 0.05

    def test_gradients_match_finite_differences(self):
        torch.manual_seed(3)
        net = FusionNet().double()
        inputs = [t.to(torch.float64) for t in single_inputs(16, 16, seed=3)]

        def fn(*ts):
            return fusion_forward(net, *ts).channels.sum()

        tensors = [t.clone().requires_grad_(True) for t in inputs]
        loss = fn(*tensors)
        analytic = torch.autograd.grad(loss, tensors)
        numeric = finite_difference_grads(fn, [t.detach().clone() for t in inputs])
        for a, n in zip(analytic, numeric):
            assert max_rel_error(a, n) <= 1e-4

    def test_every_parameter_receives_gradient(self):
        torch.manual_seed(4)
        net = FusionNet()
        ref_w, lsr_up, flow, res = single_inputs(16, 16, seed=4)
        out = fusion_forward(net, ref_w, lsr_up, flow, res)
        y = synthesize_single(ref_w, lsr_up, extract_filters(out), extract_mask(out))
        loss = (y - torch.rand_like(y)).abs().mean()
        loss.backward()
        for name, p in net.named_parameters():
            assert p.grad is not None, name
            assert torch.isfinite(p.grad).all(), name
            assert p.grad.abs().sum() > 0, name


class TestExtractFilters:
    def make_output(self, channels):
        return FusionOutput(channels, SINGLE_REFERENCE)

    @pytest.mark.parametrize(
        "tap,channel",
        [((1, 1), 0), ((2, 3), 7), ((3, 3), 12), ((5, 5), 24)],
    )
    def test_channel_indexing(self, tap, channel):
        c = torch.zeros(8, 8, 26)
        c[..., channel] = 1.0
        bank = extract_filters(self.make_output(c))
        i, j = tap[0] - 1, tap[1] - 1
        assert torch.equal(bank[..., i, j], torch.ones(8, 8))
        assert float(bank.sum()) == 8 * 8  # nothing else is set

    def test_center_channel_gives_delta_identity(self):
        c = torch.zeros(12, 12, 26)
        c[..., 12] = 1.0
        bank = extract_filters(self.make_output(c))
        img = textured(12, 12, seed=1)
        assert torch.equal(apply_dynamic_filters(img, bank), img)

    def test_two_reference_split(self):
        c = torch.zeros(8, 8, 53)
        c[..., 12] = 1.0
        c[..., 25 + 7] = 2.0
        bank0, bank1 = extract_filters(FusionOutput(c, MULTI_REFERENCE))
        assert torch.equal(bank0[..., 2, 2], torch.ones(8, 8))
        assert torch.equal(bank1[..., 1, 2], torch.full((8, 8), 2.0))

    def test_wrong_channel_count(self):
        with pytest.raises(ModeError):
            FusionOutput(torch.zeros(8, 8, 20), SINGLE_REFERENCE)


class TestExtractMask:
    def test_sigmoid_of_zero_is_half(self):
        c = torch.zeros(8, 8, 26)
        mask = extract_mask(FusionOutput(c, SINGLE_REFERENCE))
        assert torch.equal(mask, torch.full((8, 8), 0.5))

    def test_sigmoid_saturation(self):
        c = torch.zeros(8, 8, 26)
        c[..., 25] = 20.0
        mask = extract_mask(FusionOutput(c, SINGLE_REFERENCE))
        assert float((1.0 - mask).max()) < 1e-8

    def test_softmax_symmetric(self):
        c = torch.full((8, 8, 53), 0.7)
        m0, m1, m2 = extract_mask(FusionOutput(c, MULTI_REFERENCE))
        for m in (m0, m1, m2):
            assert (m - 1 / 3).abs().max() < 1e-6

    def test_softmax_sums_to_one_for_random_logits(self):
        g = torch.Generator().manual_seed(0)
        c = torch.rand(16, 16, 53, generator=g) * 40 - 20
        m0, m1, m2 = extract_mask(FusionOutput(c, MULTI_REFERENCE))
        assert ((m0 + m1 + m2) - 1.0).abs().max() < 1e-6


class TestSynthesis:
    def test_mask_zero_returns_upscaled(self):
        ref_w, lsr_up, _, _ = single_inputs()
        bank = torch.rand(16, 16, 5, 5)
        out = synthesize_single(ref_w, lsr_up, bank, torch.zeros(16, 16))
        assert torch.equal(out, lsr_up)

    def test_mask_one_with_delta_returns_reference(self):
        ref_w, lsr_up, _, _ = single_inputs(seed=2)
        bank = torch.zeros(16, 16, 5, 5)
        bank[..., 2, 2] = 1.0
        out = synthesize_single(ref_w, lsr_up, bank, torch.ones(16, 16))
        assert torch.equal(out, ref_w)

    def test_half_mask_arithmetic(self):
        bank = torch.zeros(8, 8, 5, 5)
        bank[..., 2, 2] = 1.0
        out = synthesize_single(
            torch.ones(8, 8, 3), torch.zeros(8, 8, 3), bank, torch.full((8, 8), 0.5)
        )
        assert (out - 0.5).abs().max() < 1e-7

    def test_multi_upscale_only(self):
        a, b, c = torch.rand(8, 8, 3), torch.rand(8, 8, 3), torch.rand(8, 8, 3)
        zero, one = torch.zeros(8, 8), torch.ones(8, 8)
        out = synthesize_multi(a, b, c, zero, zero, one)
        assert torch.equal(out, c)

    def test_multi_first_reference_only(self):
        a, b, c = torch.rand(8, 8, 3), torch.rand(8, 8, 3), torch.rand(8, 8, 3)
        zero, one = torch.zeros(8, 8), torch.ones(8, 8)
        out = synthesize_multi(a, b, c, one, zero, zero)
        assert torch.equal(out, a)

    def test_multi_equal_thirds(self):
        third = torch.full((8, 8), 1 / 3)
        out = synthesize_multi(
            torch.zeros(8, 8, 3),
            torch.full((8, 8, 3), 0.3),
            torch.full((8, 8, 3), 0.6),
            third, third, third,
        )
        assert (out - 0.3).abs().max() < 1e-6

    def test_multi_mask_sum_violation(self):
        half = torch.full((8, 8), 0.5)
        with pytest.raises(InvariantError):
            synthesize_multi(
                torch.rand(8, 8, 3), torch.rand(8, 8, 3), torch.rand(8, 8, 3),
                half, half, half,
            )

    def test_spatial_equivariance(self):
        # translate all inputs by an integer offset -> output translates
        g = torch.Generator().manual_seed(7)
        ref_w = torch.rand(24, 24, 3, generator=g)
        lsr_up = torch.rand(24, 24, 3, generator=g)
        bank = torch.rand(24, 24, 5, 5, generator=g) * 0.2
        mask = torch.rand(24, 24, generator=g)
        out = synthesize_single(ref_w, lsr_up, bank, mask)
        dy, dx = 3, 5
        shifted = synthesize_single(
            torch.roll(ref_w, (dy, dx), (0, 1)),
            torch.roll(lsr_up, (dy, dx), (0, 1)),
            torch.roll(bank, (dy, dx), (0, 1)),
            torch.roll(mask, (dy, dx), (0, 1)),
        )
        inner = (slice(8, 20), slice(8, 20))
        assert torch.equal(
            torch.roll(out, (dy, dx), (0, 1))[inner], shifted[inner]
        )


class TestWeightMap:
    def test_zero_mask(self):
        bank = torch.rand(8, 8, 5, 5)
        assert torch.equal(weight_map(torch.zeros(8, 8), bank), torch.zeros(8, 8))

    def test_unit_mask_unit_kernel_sum(self):
        bank = torch.zeros(8, 8, 5, 5)
        bank[..., 2, 2] = 1.0
        assert torch.equal(weight_map(torch.ones(8, 8), bank), torch.ones(8, 8))

    def test_closed_form_two_thirds(self):
        bank = torch.zeros(8, 8, 5, 5)
        bank[..., 0, 0] = 2.0
        w = weight_map(torch.full((8, 8), 0.5), bank)
        assert (w - 2.0 / 3.0).abs().max() < 1e-6

    def test_bounded_for_adversarial_inputs(self):
        g = torch.Generator().manual_seed(1)
        bank = torch.rand(16, 16, 5, 5, generator=g) * 4 - 2  # negative sums too
        mask = torch.rand(16, 16, generator=g)
        w = weight_map(mask, bank)
        assert torch.isfinite(w).all()
        assert float(w.min()) >= 0.0 and float(w.max()) <= 1.0


class TestConvDP:
    def test_depth_and_shape(self):
        torch.manual_seed(0)
        net = ConvDP()
        assert len(net.layers) == 36
        ref_w, lsr_up, flow, res = single_inputs(16, 24)
        out = convdp_forward(net, ref_w, lsr_up, flow, res)
        assert out.shape == (16, 24, 3)
        assert float(out.min()) >= 0.0 and float(out.max()) <= 1.0

    def test_deterministic(self):
        torch.manual_seed(0)
        net = ConvDP()
        inp = single_inputs(16, 16, seed=9)
        assert torch.equal(convdp_forward(net, *inp), convdp_forward(net, *inp))
