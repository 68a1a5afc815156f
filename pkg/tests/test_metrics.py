import math

import numpy as np
import pytest
import torch
from scipy.stats import spearmanr

from hdrcodec.display import DisplayModel, choose_exposures, display_render
from hdrcodec.hdr_io import HdrImage, LdrImage, luminance
from hdrcodec.metrics import (
    BASE_METRICS,
    DSSIM_METRIC,
    PSNR_METRIC,
    SSIM_METRIC,
    NlpdConfig,
    base_psnr,
    base_ssim,
    d_h,
    d_h_star,
    nlp_transform,
    nlpd,
    nlpd_luminance,
    ssim_t,
)
from tests.conftest import smooth_hdr


def displayed_luminance(rng, h=32, w=32):
    """A luminance map in the displayable range [1, 300] cd/m^2."""
    v = rng.random((h, w, 3))
    return display_render(np.clip(v, 0, 1).mean(axis=-1) * 0 + luminance(v))


class TestNlpTransform:
    def test_band_count(self, rng):
        lum = displayed_luminance(rng, 64, 64)
        bands = nlp_transform(lum)
        # 64 -> 32 -> 16 -> 8 stops (coarsest band kept >= 8)
        assert len(bands) == 4
        assert bands[0].shape == (64, 64)
        assert bands[-1].shape == (8, 8)

    def test_levels_cap(self, rng):
        lum = displayed_luminance(rng, 448, 448)
        assert NlpdConfig().effective_levels(448, 448) == 6

    def test_constant_image_high_bands_near_zero(self):
        lum = np.full((32, 32), 120.0)
        bands = nlp_transform(lum)
        for band in bands[:-1]:
            assert np.abs(band).max() < 1e-9
        assert np.abs(bands[-1]).max() > 0  # lowpass residual survives

    def test_denominator_floor_keeps_bands_finite(self, rng):
        lum = displayed_luminance(rng)
        for band in nlp_transform(lum):
            assert np.isfinite(band).all()

    def test_rejects_non_positive(self):
        with pytest.raises(ValueError):
            nlp_transform(np.zeros((8, 8)))


class TestNlpd:
    def test_identical_luminance_is_zero(self, rng):
        lum = displayed_luminance(rng)
        assert nlpd_luminance(lum, lum) == 0.0

    def test_non_negative(self, rng):
        for _ in range(10):
            a = displayed_luminance(rng)
            b = displayed_luminance(rng)
            assert nlpd_luminance(a, b) >= 0.0

    def test_display_rendered_match_is_zero(self, rng):
        """An LDR image whose displayed luminance reproduces the reference
        gives (numerically) zero distance."""
        s = smooth_hdr(rng, 32, 32)
        from hdrcodec.hdr_io import preprocess

        s = preprocess(s)
        l_max = 299.0  # keeps the calibrated range inside [1, 300]
        ref_lum = luminance(s) * l_max
        v = np.clip((ref_lum - 1.0) / 299.0, 0.0, 1.0) ** (1 / 2.2)
        ldr = LdrImage(np.repeat(v[..., None], 3, axis=-1))
        assert nlpd(s, ldr, l_max) < 1e-6

    def test_noise_monotonicity(self, rng):
        s = smooth_hdr(rng, 48, 48)
        from hdrcodec.hdr_io import preprocess

        s = preprocess(s)
        l_max = 1e5
        base_v = np.clip(luminance(s)[..., None].repeat(3, axis=-1), 0, 1) ** (1 / 2.2)
        levels = [0.01, 0.02, 0.05, 0.1]
        values = []
        for amp in levels:
            noisy = np.clip(base_v + rng.normal(0, amp, base_v.shape), 0, 1)
            values.append(nlpd(s, LdrImage(noisy), l_max))
        rho = spearmanr(levels, values).statistic
        assert rho == 1.0

    def test_eq4_specialization_matches_two_loop_oracle(self, rng):
        """alpha = beta = 1 reduces to the mean of per-band mean |diff|."""
        a = displayed_luminance(rng)
        b = displayed_luminance(rng)
        cfg = NlpdConfig()
        value = nlpd_luminance(a, b, cfg)
        bands_a = nlp_transform(a, cfg)
        bands_b = nlp_transform(b, cfg)
        total = 0.0
        for ya, yb in zip(bands_a, bands_b):
            acc = 0.0
            for i in range(ya.shape[0]):
                for j in range(ya.shape[1]):
                    acc += abs(ya[i, j] - yb[i, j])
            total += acc / ya.size
        oracle = total / len(bands_a)
        assert value == pytest.approx(oracle, rel=1e-10)

    def test_general_exponents(self, rng):
        a = displayed_luminance(rng, 16, 16)
        b = displayed_luminance(rng, 16, 16)
        cfg = NlpdConfig(alpha=2.0, beta=1.5)
        value = nlpd_luminance(a, b, cfg)
        bands_a = nlp_transform(a, cfg)
        bands_b = nlp_transform(b, cfg)
        per = [
            (np.abs(ya - yb) ** 2.0).mean() ** (1.5 / 2.0)
            for ya, yb in zip(bands_a, bands_b)
        ]
        oracle = (np.mean(per)) ** (1 / 1.5)
        assert value == pytest.approx(oracle, rel=1e-9)

    def test_shape_mismatch(self, rng):
        s = HdrImage(rng.random((8, 8, 3)))
        with pytest.raises(ValueError):
            nlpd(s, LdrImage(np.zeros((4, 4, 3))), 1e4)


class TestBaseMetrics:
    def test_psnr_identity_capped(self, rng):
        x = rng.random((8, 8, 3))
        assert base_psnr(x, x) == 100.0

    def test_psnr_log_readoff(self):
        a = np.zeros((10, 10, 3))
        b = np.full((10, 10, 3), 0.1)  # MSE = 0.01
        assert base_psnr(a, b) == pytest.approx(20.0)

    def test_ssim_identity(self, rng):
        x = rng.random((16, 16, 3))
        assert base_ssim(x, x) == pytest.approx(1.0)

    def test_ssim_symmetric(self, rng):
        a, b = rng.random((16, 16, 3)), rng.random((16, 16, 3))
        assert base_ssim(a, b) == pytest.approx(base_ssim(b, a), abs=1e-12)

    def test_ssim_range(self, rng):
        a, b = rng.random((16, 16, 3)), rng.random((16, 16, 3))
        assert -1.0 <= base_ssim(a, b) <= 1.0

    def test_registry_polarities(self):
        assert BASE_METRICS["psnr"].polarity == "higher"
        assert BASE_METRICS["ssim"].polarity == "higher"
        assert BASE_METRICS["dssim"].polarity == "lower"

    def test_dssim_is_one_minus_ssim(self, rng):
        a = torch.rand(1, 3, 16, 16)
        b = torch.rand(1, 3, 16, 16)
        assert float(DSSIM_METRIC.evaluate(a, b)) == pytest.approx(
            1.0 - float(ssim_t(a, b)), abs=1e-6
        )


class TestDh:
    @pytest.fixture
    def pair(self, rng):
        from hdrcodec.hdr_io import preprocess

        s = preprocess(smooth_hdr(rng, 32, 32))
        noisy = np.clip(s.pixels + rng.normal(0, 0.03, s.pixels.shape), 1e-6, None)
        s_hat = HdrImage(noisy)
        exposures = choose_exposures(s, 1e5, 4)
        return s, s_hat, exposures

    def test_identity_gives_optimal_sum(self, pair):
        s, _, exposures = pair
        assert d_h(s, s, 1e5, exposures, base=DSSIM_METRIC) == pytest.approx(0.0, abs=1e-9)
        assert d_h(s, s, 1e5, exposures, base=PSNR_METRIC) == pytest.approx(400.0)

    def test_k1_reduces_to_base_metric(self, pair, rng):
        s, s_hat, exposures = pair
        from hdrcodec.display import decompose_exposures

        one = [exposures[0]]
        val = d_h(s, s_hat, 1e5, one, base=PSNR_METRIC)
        ref = decompose_exposures(s, 1e5, one).frames[0].pixels
        test = decompose_exposures(s_hat, 1e5, one).frames[0].pixels
        assert val == pytest.approx(base_psnr(ref, test), rel=1e-6)

    def test_permutation_invariance(self, pair):
        s, s_hat, exposures = pair
        v1 = d_h(s, s_hat, 1e5, exposures, base=DSSIM_METRIC)
        perm = exposures[::-1]
        v2 = d_h(s, s_hat, 1e5, perm, exposures_test=perm, base=DSSIM_METRIC)
        assert v1 == pytest.approx(v2, rel=1e-9)

    def test_k_mismatch(self, pair):
        s, s_hat, exposures = pair
        with pytest.raises(ValueError):
            d_h(s, s_hat, 1e5, exposures, exposures_test=exposures[:2])


class TestDhStar:
    def test_identity_recovers_exposures(self, rng):
        from hdrcodec.hdr_io import preprocess

        s = preprocess(smooth_hdr(rng, 32, 32))
        exposures = choose_exposures(s, 1e5, 3)
        value, matched = d_h_star(s, s, 1e5, exposures, PSNR_METRIC)
        assert value == pytest.approx(300.0)  # three capped terms
        for e, m in zip(exposures, matched):
            assert abs(math.log2(m / e)) <= 0.011

    def test_dominance(self, rng):
        from hdrcodec.hdr_io import preprocess

        for trial in range(5):
            s = preprocess(smooth_hdr(rng, 24, 24))
            s_hat = HdrImage(
                np.clip(s.pixels * rng.uniform(0.7, 1.4) + rng.normal(0, 0.05, s.pixels.shape), 1e-6, None)
            )
            exposures = choose_exposures(s, 1e5, 4)
            plain_psnr = d_h(s, s_hat, 1e5, exposures, base=PSNR_METRIC)
            star_psnr, _ = d_h_star(s, s_hat, 1e5, exposures, PSNR_METRIC)
            assert star_psnr >= plain_psnr - 1e-9
            plain_d = d_h(s, s_hat, 1e5, exposures, base=DSSIM_METRIC)
            star_d, _ = d_h_star(s, s_hat, 1e5, exposures, DSSIM_METRIC)
            assert star_d <= plain_d + 1e-9

    def test_scale_absorption(self, rng):
        from hdrcodec.hdr_io import preprocess

        s = preprocess(smooth_hdr(rng, 32, 32))
        s_hat = HdrImage(np.clip(s.pixels + rng.normal(0, 0.02, s.pixels.shape), 1e-6, None))
        exposures = choose_exposures(s, 1e5, 4)
        baseline, _ = d_h_star(s, s_hat, 1e5, exposures, PSNR_METRIC)
        for c in (0.5, 1.5, 2.0):
            scaled, _ = d_h_star(s, HdrImage(c * s_hat.pixels), 1e5, exposures, PSNR_METRIC)
            # per-exposure average within 0.1 dB
            assert abs(scaled - baseline) / len(exposures) < 0.1
