"""PSNR, SSIM, reports and comparisons."""

import numpy as np
import pytest
import torch

from awnet.datamodel import Frame, VideoSequence, add_gaussian_noise
from awnet.errors import ConfigError, InvariantError, ShapeError
from awnet.metrics import EvalReport, compare, evaluate, psnr, ssim

from helpers import textured


class TestPsnr:
    def test_identical_frames_hit_sentinel(self):
        a = textured(16, 16, seed=0)
        assert psnr(a, a.clone()) == 99.0

    def test_uniform_difference_01(self):
        a = torch.full((16, 16, 3), 0.6, dtype=torch.float64)
        b = torch.full((16, 16, 3), 0.5, dtype=torch.float64)
        assert psnr(a, b) == pytest.approx(20.0, abs=1e-6)

    def test_mse_00025(self):
        a = torch.full((16, 16, 3), 0.55, dtype=torch.float64)
        b = torch.full((16, 16, 3), 0.5, dtype=torch.float64)
        # 10 * log10(1 / 0.0025) = 26.0206
        assert psnr(a, b) == pytest.approx(26.0206, abs=1e-3)

    def test_symmetry_exact(self):
        a, b = textured(24, 24, seed=1), textured(24, 24, seed=2)
        assert psnr(a, b) == psnr(b, a)

    def test_monotone_in_noise_variance(self):
        base = torch.full((64, 64, 3), 0.5)
        values = [
            psnr(add_gaussian_noise(base, var, seed=3), base)
            for var in (0.001, 0.01, 0.05)
        ]
        assert values[0] > values[1] > values[2]

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            psnr(torch.rand(8, 8, 3), torch.rand(8, 9, 3))


class TestSsim:
    def test_self_similarity_is_one(self):
        a = textured(32, 32, seed=0)
        assert abs(ssim(a, a.clone()) - 1.0) < 1e-9

    def test_constant_frames_closed_form(self):
        # zero-variance images collapse the structure term to 1; the
        # luminance term is (2*0.5*0.6 + C1) / (0.25 + 0.36 + C1)
        a = torch.full((32, 32, 3), 0.5)
        b = torch.full((32, 32, 3), 0.6)
        c1 = 0.01**2
        expect = (2 * 0.5 * 0.6 + c1) / (0.5**2 + 0.6**2 + c1)
        assert ssim(a, b) == pytest.approx(expect, abs=1e-6)

    def test_inverted_texture_scores_low(self):
        a = textured(48, 48, seed=4) * 0.8 + 0.1
        assert ssim(a, 1.0 - a) < 0.5

    def test_matches_reference_implementation(self):
        # cross-check against scikit-image's Gaussian-weighted SSIM
        skimage = pytest.importorskip("skimage.metrics")
        a = textured(48, 64, seed=5).numpy().astype(np.float64)
        b = textured(48, 64, seed=6).numpy().astype(np.float64)
        ref = skimage.structural_similarity(
            a, b, channel_axis=2, data_range=1.0,
            gaussian_weights=True, sigma=1.5, use_sample_covariance=False,
        )
        assert ssim(a, b) == pytest.approx(ref, abs=5e-4)

    def test_frame_too_small(self):
        with pytest.raises(ShapeError):
            ssim(torch.rand(8, 8, 3), torch.rand(8, 8, 3))


def make_seq(frames, fps=10.0):
    return VideoSequence(
        [Frame(p, timestamp=i / fps) for i, p in enumerate(frames)], fps=fps
    )


class TestEvaluate:
    def test_perfect_output(self):
        gt = make_seq([textured(16, 16, seed=i) for i in range(3)])
        rep = evaluate(gt, gt, method="identity")
        assert rep.mean_psnr == 99.0
        assert rep.mean_ssim == pytest.approx(1.0, abs=1e-9)
        assert len(rep.frame_psnr) == 3

    def test_report_roundtrip(self, tmp_path):
        gt = make_seq([textured(16, 16, seed=i) for i in range(2)])
        out = make_seq([textured(16, 16, seed=i + 10) for i in range(2)])
        rep = evaluate(out, gt, method="noise", config_fingerprint="abc123")
        path = tmp_path / "report.json"
        rep.save(path)
        back = EvalReport.load(path)
        assert back.to_dict() == rep.to_dict()

    def test_weight_statistics(self):
        gt = make_seq([textured(16, 16, seed=i) for i in range(2)])
        maps = [torch.full((16, 16), 0.25), torch.full((16, 16), 0.75)]
        rep = evaluate(gt, gt, weight_maps=maps)
        assert rep.frame_mean_weight == [0.25, 0.75]
        assert rep.mean_weight == pytest.approx(0.5)

    def test_length_mismatch(self):
        gt = make_seq([textured(16, 16, seed=i) for i in range(3)])
        out = make_seq([textured(16, 16, seed=i) for i in range(2)])
        with pytest.raises(InvariantError):
            evaluate(out, gt)


class TestCompare:
    def test_ground_truth_ranks_first(self):
        gt = make_seq([textured(16, 16, seed=i) for i in range(2)])
        noisy = make_seq(
            [add_gaussian_noise(f.pixels, 0.01, seed=i) for i, f in enumerate(gt.frames)]
        )
        very_noisy = make_seq(
            [add_gaussian_noise(f.pixels, 0.05, seed=i) for i, f in enumerate(gt.frames)]
        )
        table = compare(gt, {"noisy": noisy, "exact": gt, "worse": very_noisy})
        assert table.best() == "exact"
        assert len(table.rows) == 3
        assert [r["method"] for r in table.rows] == ["exact", "noisy", "worse"]

    def test_csv_and_markdown(self):
        gt = make_seq([textured(16, 16, seed=i) for i in range(2)])
        table = compare(gt, {"a": gt})
        csv = table.to_csv()
        assert csv.splitlines()[0] == "method,mean_psnr,mean_ssim,rank"
        assert len(csv.strip().splitlines()) == 2
        assert "| a |" in table.to_markdown()

    def test_empty_methods_rejected(self):
        gt = make_seq([textured(16, 16, seed=i) for i in range(2)])
        with pytest.raises(ConfigError):
            compare(gt, {})
