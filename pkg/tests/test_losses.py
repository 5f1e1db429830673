import numpy as np
import pytest
from skimage.metrics import structural_similarity

from splatforge.losses.core import (
    alpha_loss,
    color_loss,
    depth_loss,
    material_loss,
    mse_loss,
)
from splatforge.losses.ssim import ssim
from splatforge.losses.weights import (
    DISTORTION_WEIGHT_EARLY,
    DISTORTION_WEIGHT_LATE,
    LossBreakdown,
    LossWeights,
)


class TestSsim:
    def test_matches_reference_implementation(self):
        rng = np.random.default_rng(0)
        for _ in range(3):
            x = rng.uniform(0, 1, (24, 24, 3))
            y = np.clip(x + rng.normal(size=x.shape) * 0.1, 0, 1)
            mine, _ = ssim(x, y, with_grad=False)
            ref = structural_similarity(
                x, y, win_size=11, gaussian_weights=True, sigma=1.5,
                use_sample_covariance=False, data_range=1.0, channel_axis=2,
            )
            assert abs(mine - ref) < 1e-12

    def test_identity_and_symmetry(self):
        rng = np.random.default_rng(1)
        x = rng.uniform(0, 1, (16, 16, 3))
        y = rng.uniform(0, 1, (16, 16, 3))
        assert ssim(x, x, with_grad=False)[0] == pytest.approx(1.0, abs=1e-12)
        assert abs(ssim(x, y, with_grad=False)[0]
                   - ssim(y, x, with_grad=False)[0]) < 1e-9

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(2)
        x = rng.uniform(0.1, 0.9, (16, 16, 3))
        y = rng.uniform(0.1, 0.9, (16, 16, 3))
        _, grad = ssim(x, y)
        h = 1e-6
        for idx in [(3, 4, 0), (8, 8, 1), (12, 5, 2), (11, 13, 0)]:
            xp = x.copy()
            xp[idx] += h
            lp = ssim(xp, y, with_grad=False)[0]
            xp[idx] -= 2 * h
            lm = ssim(xp, y, with_grad=False)[0]
            fd = (lp - lm) / (2 * h)
            assert abs(fd - grad[idx]) / max(abs(fd), 1e-10) < 1e-3

    def test_checkerboard_near_max_dissimilarity(self):
        cb = (np.indices((16, 16)).sum(0) % 2).astype(np.float64)
        value, _ = ssim(cb, 1.0 - cb, with_grad=False)
        assert value < -0.98  # 1 - ssim close to its binary-image maximum of 2


class TestColorLoss:
    def test_identity_is_zero_with_zero_gradient(self):
        rng = np.random.default_rng(3)
        x = rng.uniform(0, 1, (16, 16, 3))
        parts, total, grad = color_loss(x, x)
        assert total == pytest.approx(0.0, abs=1e-12)
        assert np.abs(grad).max() < 1e-12

    def test_constant_offset_closed_form(self):
        rng = np.random.default_rng(4)
        gt = rng.uniform(0.2, 0.7, (16, 16, 3))
        parts, total, _ = color_loss(gt + 0.1, gt)
        assert parts["color_mse"] == pytest.approx(0.01, rel=1e-9)
        assert 0 < parts["color_ssim"] < 0.5

    def test_weights_applied(self):
        rng = np.random.default_rng(5)
        gt = rng.uniform(0, 1, (16, 16, 3))
        pred = rng.uniform(0, 1, (16, 16, 3))
        w = LossWeights(lambda_mse=3.0, lambda_ssim=0.0)
        parts, total, grad = color_loss(pred, gt, weights=w)
        mse_v, mse_g = mse_loss(pred, gt)
        assert total == pytest.approx(3.0 * mse_v)
        assert np.allclose(grad, 3.0 * mse_g)

    def test_perceptual_hook_slot(self):
        rng = np.random.default_rng(6)
        gt = rng.uniform(0, 1, (16, 16, 3))
        pred = rng.uniform(0, 1, (16, 16, 3))

        def hook(p, t):
            return 0.5, np.ones_like(p)

        parts, total, grad = color_loss(pred, gt, perceptual_hook=hook)
        assert parts["color_perceptual"] == pytest.approx(5.0 * 0.5)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(7)
        gt = rng.uniform(0.1, 0.9, (16, 16, 3))
        pred = rng.uniform(0.1, 0.9, (16, 16, 3))
        _, _, grad = color_loss(pred, gt)
        h = 1e-6
        for idx in [(2, 3, 1), (9, 14, 0), (7, 7, 2)]:
            p = pred.copy()
            p[idx] += h
            lp = color_loss(p, gt)[1]
            p[idx] -= 2 * h
            lm = color_loss(p, gt)[1]
            fd = (lp - lm) / (2 * h)
            assert abs(fd - grad[idx]) / max(abs(fd), 1e-10) < 1e-3


class TestAlphaLoss:
    def test_exact_binary_match_at_clamp_floor(self):
        gt = (np.indices((8, 8)).sum(0) % 2).astype(np.float64)
        value, _ = alpha_loss(gt, gt)
        assert value <= -np.log(1.0 - 1e-6) + 1e-12

    def test_half_vs_one_is_ln2(self):
        value, _ = alpha_loss(np.full((8, 8), 0.5), np.ones((8, 8)))
        assert value == pytest.approx(np.log(2.0), rel=1e-12)

    def test_gradient_sign_pushes_up(self):
        pred = np.full((4, 4), 0.3)
        gt = np.full((4, 4), 0.9)
        _, grad = alpha_loss(pred, gt)
        assert np.all(grad < 0)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(8)
        pred = rng.uniform(0.05, 0.95, (16, 16))
        gt = rng.uniform(0, 1, (16, 16))
        _, grad = alpha_loss(pred, gt)
        h = 1e-7
        for idx in [(0, 0), (5, 9), (15, 15)]:
            p = pred.copy()
            p[idx] += h
            lp = alpha_loss(p, gt)[0]
            p[idx] -= 2 * h
            lm = alpha_loss(p, gt)[0]
            fd = (lp - lm) / (2 * h)
            assert abs(fd - grad[idx]) / max(abs(fd), 1e-10) < 1e-3


class TestMaterialLoss:
    def test_exact_match_is_zero(self):
        rng = np.random.default_rng(9)
        m = rng.uniform(0, 1, (8, 8))
        r = rng.uniform(0, 1, (8, 8))
        value, gm, gr = material_loss(m, r, m, r, np.ones((8, 8)))
        assert value == 0.0

    def test_metallic_offset_closed_form(self):
        base = np.full((8, 8), 0.5)
        value, _, _ = material_loss(base + 0.2, base, base, base, np.ones((8, 8)))
        assert value == pytest.approx(0.04, rel=1e-9)

    def test_background_masked_out(self):
        rng = np.random.default_rng(10)
        value, gm, gr = material_loss(
            rng.uniform(0, 1, (8, 8)), rng.uniform(0, 1, (8, 8)),
            np.zeros((8, 8)), np.zeros((8, 8)), np.zeros((8, 8)),
        )
        assert value == 0.0
        assert np.all(gm == 0) and np.all(gr == 0)


class TestDepthLoss:
    def test_masked_l1(self):
        pred = np.full((4, 4), 2.0)
        gt = np.full((4, 4), 1.5)
        alpha = np.zeros((4, 4))
        alpha[:2] = 1.0
        value, grad = depth_loss(pred, gt, alpha)
        assert value == pytest.approx(0.5)
        assert np.all(grad[:2] > 0) and np.all(grad[2:] == 0)


class TestWeights:
    def test_paper_defaults(self):
        w = LossWeights()
        assert (w.lambda_mse, w.lambda_ssim, w.lambda_perceptual) == (1.0, 2.0, 5.0)

    def test_distortion_schedule_exact(self):
        w = LossWeights()
        for epoch in (0, 1, 2):
            assert w.distortion(epoch) == DISTORTION_WEIGHT_EARLY == 2e4
        for epoch in (3, 4, 10, 100):
            assert w.distortion(epoch) == DISTORTION_WEIGHT_LATE == 1e2

    def test_breakdown_total_is_sum(self):
        b = LossBreakdown(color_mse=0.5, alpha_bce=0.25, distortion=1.0)
        assert b.total == pytest.approx(1.75)
        d = b.as_dict()
        assert d["total"] == pytest.approx(sum(v for k, v in d.items()
                                               if k != "total"), abs=1e-6)

    def test_negative_weight_rejected(self):
        with pytest.raises(ValueError):
            LossWeights(alpha=-1.0).validate()


def test_losses_nonnegative_and_zero_iff_match():
    rng = np.random.default_rng(11)
    for _ in range(10):
        x = rng.uniform(0, 1, (16, 16, 3))
        y = rng.uniform(0, 1, (16, 16, 3))
        _, total, _ = color_loss(x, y)
        assert total >= 0
        if not np.allclose(x, y):
            assert total > 0
        a = rng.uniform(0, 1, (16, 16))
        b = rng.uniform(0, 1, (16, 16))
        value, _ = alpha_loss(a, b)
        assert value >= 0
        m_value, _, _ = material_loss(a, b, a, b, np.ones((16, 16)))
        assert m_value >= 0
