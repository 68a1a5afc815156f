import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from hdrcodec.entropy import (
    PMF_FLOOR,
    SIGMA_MIN,
    FactorizedPrior,
    HdrEntropyModel,
    LdrEntropyModel,
    MaskedConv2d,
    coding_support,
    gaussian_likelihood,
    gaussian_pmf,
    noise_proxy,
    quantize,
    rate_hdr,
    rate_ldr,
)


class TestQuantize:
    def test_round_half_up(self):
        x = np.array([0.4, 0.5, -1.2, -0.5, 2.49999])
        assert list(quantize(x)) == [0.0, 1.0, -1.0, 0.0, 2.0]

    def test_integers_are_fixed_points(self):
        n = np.arange(-100, 101, dtype=np.float64)
        assert np.array_equal(quantize(n), n)

    def test_torch_matches_numpy(self, rng):
        x = rng.normal(0, 5, 1000)
        assert np.array_equal(quantize(torch.from_numpy(x)).numpy(), quantize(x))

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            quantize(np.array([1.0, np.nan]))

    @settings(max_examples=50, deadline=None)
    @given(st.floats(-1e6, 1e6))
    def test_floor_plus_half(self, v):
        assert quantize(np.array([v]))[0] == math.floor(v + 0.5)


class TestNoiseProxy:
    def test_bounded_by_half(self, rng):
        x = torch.from_numpy(rng.normal(0, 3, (64, 64)))
        out = noise_proxy(x, torch.Generator().manual_seed(0))
        assert ((out - x).abs() < 0.5).all()

    def test_zero_mean(self):
        g = torch.Generator().manual_seed(1)
        x = torch.zeros(100_000, dtype=torch.float64)
        assert abs(float(noise_proxy(x, g).mean())) < 0.01

    def test_identity_gradient(self):
        x = torch.randn(16, requires_grad=True)
        y = noise_proxy(x, torch.Generator().manual_seed(0)).sum()
        y.backward()
        assert torch.equal(x.grad, torch.ones_like(x))


class TestGaussianPmf:
    def test_reference_value(self):
        # unit Gaussian, central bin: Phi(0.5) - Phi(-0.5)
        expected = norm.cdf(0.5) - norm.cdf(-0.5)
        assert gaussian_pmf(0, 0.0, 1.0) == pytest.approx(expected, abs=2e-3)
        assert gaussian_pmf(0, 0.0, 1.0) == pytest.approx(0.38292, abs=2e-3)

    def test_symmetry(self):
        assert gaussian_pmf(1, 0.0, 0.5) == pytest.approx(gaussian_pmf(-1, 0.0, 0.5), rel=1e-12)

    def test_sums_to_one_over_support(self):
        lo, hi = coding_support(0.3, 2.0)
        total = sum(gaussian_pmf(n, 0.3, 2.0) for n in range(lo, hi + 1))
        assert total == pytest.approx(1.0, abs=1e-9)

    def test_out_of_support_is_zero(self):
        assert gaussian_pmf(500, 0.0, 1.0) == 0.0

    def test_support_respects_global_bound(self):
        lo, hi = coding_support(0.0, 100.0)
        assert lo >= -1024 and hi <= 1023
        lo, hi = coding_support(5000.0, 1.0)
        assert lo == hi == 1023

    def test_likelihood_floor(self):
        x = torch.tensor([50.0])
        p = gaussian_likelihood(x, torch.tensor([0.0]), torch.tensor([0.11]))
        assert float(p) == PMF_FLOOR


class TestMaskedConv:
    def test_first_position_is_bias_only(self):
        torch.manual_seed(0)
        conv = MaskedConv2d(4, 8)
        x = torch.randn(1, 4, 6, 6)
        out = conv(x)
        assert torch.allclose(out[0, :, 0, 0], conv.bias)

    def test_strict_causality(self):
        torch.manual_seed(0)
        conv = MaskedConv2d(2, 4)
        x = torch.randn(1, 2, 8, 8)
        base = conv(x)
        # perturbing position (i, j) must not change outputs at (i, j) or
        # any earlier raster position
        x2 = x.clone()
        x2[0, :, 3, 4] += 10.0
        out = conv(x2)
        changed = (out - base).abs().sum(dim=1)[0] > 1e-9
        for i in range(8):
            for j in range(8):
                if (i, j) <= (3, 4):
                    assert not changed[i, j]

    def test_future_positions_see_perturbation(self):
        torch.manual_seed(1)
        conv = MaskedConv2d(2, 4)
        x = torch.randn(1, 2, 8, 8)
        x2 = x.clone()
        x2[0, :, 3, 4] += 10.0
        diff = (conv(x2) - conv(x)).abs().sum()
        assert float(diff) > 0


class TestFactorizedPrior:
    def test_cdf_monotone(self):
        torch.manual_seed(0)
        prior = FactorizedPrior(8)
        x = torch.linspace(-50, 50, 401)[None, :].expand(8, -1)
        cdf = prior.cdf(x)
        assert (cdf.diff(dim=1) >= 0).all()
        assert (cdf > 0).all() and (cdf < 1).all()

    def test_likelihood_positive(self):
        torch.manual_seed(0)
        prior = FactorizedPrior(4)
        z = torch.randn(2, 4, 3, 3) * 10
        p = prior.likelihood(z)
        assert (p >= PMF_FLOOR).all() and (p <= 1.0).all()

    def test_channel_pmfs_normalized(self):
        torch.manual_seed(3)
        prior = FactorizedPrior(6)
        for offset, pmf in prior.channel_pmfs():
            assert pmf.sum() == pytest.approx(1.0)
            assert (pmf > 0).all()
            assert -1024 <= offset <= 1023


class TestEntropyModels:
    @pytest.fixture
    def ldr_model(self):
        torch.manual_seed(0)
        return LdrEntropyModel(latent_channels=8, hyper_channels=4).eval()

    def test_hyper_shapes(self, ldr_model):
        y = torch.randn(1, 8, 8, 8)
        z = ldr_model.hyper_analysis(y)
        assert z.shape == (1, 4, 2, 2)
        psi = ldr_model.psi_for(z, (8, 8))
        assert psi.shape == (1, 16, 8, 8)  # 2x latent channels

    def test_psi_crop_for_odd_latent(self, ldr_model):
        y = torch.randn(1, 8, 5, 5)
        z = ldr_model.hyper_analysis(y)
        psi = ldr_model.psi_for(z, (5, 5))
        assert psi.shape[-2:] == (5, 5)

    def test_sigma_min_clamp(self, ldr_model):
        y = torch.randn(1, 8, 4, 4) * 100
        psi = ldr_model.psi_for(ldr_model.hyper_analysis(y), (4, 4))
        _, sigma = ldr_model.params(y, psi)
        assert (sigma >= SIGMA_MIN).all()
        assert torch.isfinite(sigma).all()

    def test_rate_is_per_element_sum(self, ldr_model):
        """Total bits equal a brute-force per-element accumulation."""
        torch.manual_seed(2)
        y = quantize(torch.randn(1, 8, 4, 4) * 2)
        z = quantize(ldr_model.hyper_analysis(y))
        with torch.no_grad():
            total = float(rate_ldr(y, z, ldr_model))
            psi = ldr_model.psi_for(z, (4, 4))
            mu, sigma = ldr_model.params(y, psi)
            acc = 0.0
            for c in range(8):
                for i in range(4):
                    for j in range(4):
                        p = gaussian_likelihood(
                            y[0, c, i, j], mu[0, c, i, j], sigma[0, c, i, j]
                        )
                        acc -= math.log2(float(p))
            pz = ldr_model.prior.likelihood(z)
            for idx in np.ndindex(*pz.shape):
                acc -= math.log2(float(pz[idx]))
        assert total == pytest.approx(acc, rel=1e-5)

    def test_rate_nonnegative(self, ldr_model, rng):
        for _ in range(5):
            y = quantize(torch.from_numpy(rng.normal(0, 3, (1, 8, 4, 4))).float())
            z = quantize(ldr_model.hyper_analysis(y))
            with torch.no_grad():
                assert float(rate_ldr(y, z, ldr_model)) >= 0

    def test_half_probability_gives_element_count(self):
        """If every element has probability 1/2 the rate is the element
        count in bits."""
        n = torch.tensor([0.0, 1.0, -3.0, 7.0])
        p = torch.full_like(n, 0.5)
        bits = float((-torch.log2(p)).sum())
        assert bits == len(n)

    def test_hdr_model_context_flag(self):
        torch.manual_seed(0)
        with_ctx = HdrEntropyModel(6, use_context=True)
        torch.manual_seed(0)
        without = HdrEntropyModel(6, use_context=False)
        y = quantize(torch.randn(1, 6, 4, 4) * 2)
        with torch.no_grad():
            mu_a, _ = with_ctx.params(y)
            mu_b, _ = without.params(y)
        # context-free params are spatially constant, conditioned ones not
        assert torch.allclose(mu_b, mu_b[:, :, :1, :1].expand_as(mu_b))
        assert not torch.allclose(mu_a, mu_a[:, :, :1, :1].expand_as(mu_a))

    def test_rate_hdr_matches_per_element_oracle(self):
        torch.manual_seed(4)
        model = HdrEntropyModel(4, use_context=True).eval()
        y = quantize(torch.randn(1, 4, 3, 3) * 2)
        with torch.no_grad():
            total = float(rate_hdr(y, model))
            mu, sigma = model.params(y)
            acc = 0.0
            for idx in np.ndindex(1, 4, 3, 3):
                p = gaussian_likelihood(y[idx], mu[idx], sigma[idx])
                acc -= math.log2(float(p))
        assert total == pytest.approx(acc, rel=1e-5)


class TestRateDifferentiability:
    def test_rate_gradient_matches_fd(self):
        """Noise-proxied rate gradients vs central differences."""
        torch.manual_seed(0)
        model = LdrEntropyModel(latent_channels=4, hyper_channels=3).double()
        y0 = torch.randn(1, 4, 4, 4, dtype=torch.double)

        def loss_fn():
            g = torch.Generator().manual_seed(9)
            y = noise_proxy(y0, g)
            z = noise_proxy(model.hyper_analysis(y0), g)
            return rate_ldr(y, z, model)

        loss = loss_fn()
        loss.backward()
        rng = np.random.default_rng(1)
        h = 1e-3
        errs = []
        with torch.no_grad():
            for p in model.parameters():
                flat, gflat = p.view(-1), p.grad.view(-1)
                for i in rng.choice(flat.numel(), size=min(2, flat.numel()), replace=False):
                    orig = float(flat[i])
                    flat[i] = orig + h
                    lp = float(loss_fn())
                    flat[i] = orig - h
                    lm = float(loss_fn())
                    flat[i] = orig
                    fd = (lp - lm) / (2 * h)
                    an = float(gflat[i])
                    errs.append(abs(fd - an) / max(abs(fd), abs(an), 1e-6))
        assert np.median(errs) < 1e-3
