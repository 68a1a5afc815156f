"""Quantization, the latent entropy models, and rate estimation.

The LDR latent is modeled by conditionally independent Gaussians whose
parameters come from a hyper-prior branch (two stride-2 stages each way)
combined with a strictly causal 5x5 masked-convolution context. The small
HDR latent drops the hyper branch: its parameters come from the same kind
of causal context plus a learned per-channel bias. The hyper-latent itself
uses a per-channel learned monotone cumulative distribution (three
softplus-constrained layers).
"""

from __future__ import annotations

import math

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

SIGMA_MIN = 0.11
PMF_FLOOR = 2.0**-16
SUPPORT_SIGMAS = 32.0
GLOBAL_SYMBOL_MIN = -1024
GLOBAL_SYMBOL_MAX = 1023


def quantize(x):
    """Uniform quantizer Q(v) = floor(v + 0.5), elementwise."""
    if isinstance(x, torch.Tensor):
        if not torch.isfinite(x).all():
            raise ValueError("cannot quantize non-finite values")
        return torch.floor(x + 0.5)
    x = np.asarray(x)
    if not np.isfinite(x).all():
        raise ValueError("cannot quantize non-finite values")
    return np.floor(x + 0.5)


def noise_proxy(x: torch.Tensor, generator: torch.Generator | None = None) -> torch.Tensor:
    """Additive Uniform(-0.5, 0.5) relaxation of quantization; the gradient
    with respect to x is the identity."""
    u = torch.rand(x.shape, generator=generator, dtype=x.dtype, device=x.device) - 0.5
    return x + u


def gaussian_likelihood(x: torch.Tensor, mu: torch.Tensor, sigma: torch.Tensor) -> torch.Tensor:
    """P(Q(v) = x) under N(mu, sigma^2): Phi(x+.5) - Phi(x-.5), floored."""
    inv = 1.0 / (sigma * math.sqrt(2.0))
    upper = torch.erf((x + 0.5 - mu) * inv)
    lower = torch.erf((x - 0.5 - mu) * inv)
    return (0.5 * (upper - lower)).clamp_min(PMF_FLOOR)


def gaussian_pmf(n, mu, sigma):
    """Probability of integer n under the coding model: the Gaussian bin
    mass floored at 2^-16 and renormalized over the coding support
    [mu - 32 sigma, mu + 32 sigma] clipped to the global symbol bound."""
    lo, hi = coding_support(mu, sigma)
    grid = np.arange(lo, hi + 1, dtype=np.float64)
    pmf = _gaussian_bin_mass(grid, float(mu), float(sigma))
    pmf = np.maximum(pmf, PMF_FLOOR)
    pmf /= pmf.sum()
    n = int(n)
    if n < lo or n > hi:
        return 0.0
    return float(pmf[n - lo])


def _gaussian_bin_mass(n: np.ndarray, mu: float, sigma: float) -> np.ndarray:
    from scipy.special import ndtr

    inv = 1.0 / sigma
    return ndtr((n + 0.5 - mu) * inv) - ndtr((n - 0.5 - mu) * inv)


def coding_support(mu: float, sigma: float) -> tuple[int, int]:
    lo = max(GLOBAL_SYMBOL_MIN, int(math.floor(mu - SUPPORT_SIGMAS * sigma)))
    hi = min(GLOBAL_SYMBOL_MAX, int(math.ceil(mu + SUPPORT_SIGMAS * sigma)))
    if lo > hi:  # mean far outside the global bound
        lo = hi = min(max(int(round(mu)), GLOBAL_SYMBOL_MIN), GLOBAL_SYMBOL_MAX)
    return lo, hi


class MaskedConv2d(nn.Conv2d):
    """Convolution over strictly-past positions in raster order (the center
    tap and everything after it are masked out)."""

    def __init__(self, cin, cout, kernel_size=5):
        super().__init__(cin, cout, kernel_size, padding=kernel_size // 2)
        mask = torch.zeros(1, 1, kernel_size, kernel_size)
        mask[..., : kernel_size // 2, :] = 1.0
        mask[..., kernel_size // 2, : kernel_size // 2] = 1.0
        self.register_buffer("mask", mask)

    def forward(self, x):
        return F.conv2d(
            x, self.weight * self.mask, self.bias, padding=self.padding
        )


class HyperAnalysis(nn.Module):
    """Two stride-2 stages condensing the LDR latent into the hyper-latent."""

    def __init__(self, latent_channels: int, hyper_channels: int):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(latent_channels, hyper_channels, 3, padding=1),
            nn.SiLU(),
            nn.Conv2d(hyper_channels, hyper_channels, 5, stride=2, padding=2),
            nn.SiLU(),
            nn.Conv2d(hyper_channels, hyper_channels, 5, stride=2, padding=2),
        )

    def forward(self, y):
        return self.net(y)


class HyperSynthesis(nn.Module):
    """Two stride-2 stages back up; emits 2x latent_channels of features."""

    def __init__(self, latent_channels: int, hyper_channels: int):
        super().__init__()
        self.net = nn.Sequential(
            nn.ConvTranspose2d(hyper_channels, hyper_channels, 4, stride=2, padding=1),
            nn.SiLU(),
            nn.ConvTranspose2d(hyper_channels, hyper_channels, 4, stride=2, padding=1),
            nn.SiLU(),
            nn.Conv2d(hyper_channels, 2 * latent_channels, 3, padding=1),
        )

    def forward(self, z):
        return self.net(z)


class ParamHead(nn.Module):
    """Pointwise network mapping concatenated conditioning features to
    per-element Gaussian (mu, sigma); sigma = SIGMA_MIN + softplus(raw)."""

    def __init__(self, in_channels: int, latent_channels: int):
        super().__init__()
        mid = 2 * latent_channels
        self.net = nn.Sequential(
            nn.Conv2d(in_channels, mid, 1),
            nn.SiLU(),
            nn.Conv2d(mid, mid, 1),
            nn.SiLU(),
            nn.Conv2d(mid, 2 * latent_channels, 1),
        )
        # bias the raw sigma head so initial sigmas are near 1
        with torch.no_grad():
            self.net[-1].bias[latent_channels:].fill_(0.55)

    def forward(self, feats):
        mu, raw = self.net(feats).chunk(2, dim=1)
        return mu, SIGMA_MIN + F.softplus(raw)


class FactorizedPrior(nn.Module):
    """Per-channel learned monotone CDF (softplus-constrained 3-layer map),
    evaluated at n +/- 0.5 to give integer bin masses."""

    def __init__(self, channels: int, filters=(3, 3, 3), init_scale: float = 10.0):
        super().__init__()
        self.channels = channels
        dims = (1,) + tuple(filters) + (1,)
        scale = init_scale ** (1.0 / (len(dims) - 1))
        self._weights = nn.ParameterList()
        self._biases = nn.ParameterList()
        self._gains = nn.ParameterList()
        for k in range(len(dims) - 1):
            init = math.log(math.expm1(1.0 / scale / dims[k + 1]))
            w = nn.Parameter(torch.full((channels, dims[k + 1], dims[k]), init))
            b = nn.Parameter(torch.empty(channels, dims[k + 1], 1).uniform_(-0.5, 0.5))
            self._weights.append(w)
            self._biases.append(b)
            if k < len(dims) - 2:
                self._gains.append(nn.Parameter(torch.zeros(channels, dims[k + 1], 1)))

    def _logits(self, x: torch.Tensor) -> torch.Tensor:
        """x: (channels, n) -> logits of the CDF, shape (channels, n)."""
        h = x[:, None, :]
        for k, (w, b) in enumerate(zip(self._weights, self._biases)):
            h = torch.matmul(F.softplus(w), h) + b
            if k < len(self._gains):
                h = h + torch.tanh(self._gains[k]) * torch.tanh(h)
        return h[:, 0, :]

    def cdf(self, x: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self._logits(x))

    def likelihood(self, z: torch.Tensor) -> torch.Tensor:
        """z: (B, C, h, w) -> per-element bin mass, floored at 2^-16."""
        b, c, h, w = z.shape
        flat = z.permute(1, 0, 2, 3).reshape(c, -1)
        mass = self.cdf(flat + 0.5) - self.cdf(flat - 0.5)
        mass = mass.reshape(c, b, h, w).permute(1, 0, 2, 3)
        return mass.clamp_min(PMF_FLOOR)

    @torch.no_grad()
    def channel_pmfs(self) -> list[tuple[int, np.ndarray]]:
        """Per-channel (support_offset, pmf) over integers where the bin
        mass is non-negligible, for building coding tables."""
        grid = torch.arange(
            GLOBAL_SYMBOL_MIN, GLOBAL_SYMBOL_MAX + 1, dtype=torch.float64
        )
        x = grid[None, :].expand(self.channels, -1).to(next(self.parameters()).dtype)
        mass = (self.cdf(x + 0.5) - self.cdf(x - 0.5)).double().cpu().numpy()
        out = []
        for c in range(self.channels):
            keep = np.nonzero(mass[c] >= PMF_FLOOR / 2)[0]
            if len(keep) == 0:
                med = int(np.argmax(mass[c]))
                lo = hi = med
            else:
                lo, hi = int(keep[0]), int(keep[-1])
            pmf = np.maximum(mass[c, lo : hi + 1], PMF_FLOOR)
            out.append((lo + GLOBAL_SYMBOL_MIN, pmf / pmf.sum()))
        return out


class LdrEntropyModel(nn.Module):
    """Hyper-prior + autoregressive context entropy model for the LDR latent."""

    def __init__(self, latent_channels: int, hyper_channels: int):
        super().__init__()
        self.latent_channels = latent_channels
        self.hyper_analysis = HyperAnalysis(latent_channels, hyper_channels)
        self.hyper_synthesis = HyperSynthesis(latent_channels, hyper_channels)
        self.context = MaskedConv2d(latent_channels, 2 * latent_channels)
        self.head = ParamHead(4 * latent_channels, latent_channels)
        self.prior = FactorizedPrior(hyper_channels)

    def psi_for(self, z: torch.Tensor, hw: tuple[int, int]) -> torch.Tensor:
        """Hyper features aligned to an (h, w) latent grid. The decoder
        doubles twice, so non-divisible latents need a crop."""
        psi = self.hyper_synthesis(z)
        return psi[..., : hw[0], : hw[1]]

    def params(self, y: torch.Tensor, psi: torch.Tensor):
        ctx = self.context(y)
        return self.head(torch.cat([psi, ctx], dim=1))

    def rate_bits(self, y: torch.Tensor, z: torch.Tensor, psi: torch.Tensor):
        """(bits for y, bits for z); differentiable for noise-proxied inputs."""
        mu, sigma = self.params(y, psi)
        p_y = gaussian_likelihood(y, mu, sigma)
        p_z = self.prior.likelihood(z)
        bits_y = -torch.log2(p_y).sum()
        bits_z = -torch.log2(p_z).sum()
        return bits_y, bits_z


class HdrEntropyModel(nn.Module):
    """Context + per-channel bias entropy model for the HDR latent (no
    hyper branch); context conditioning can be disabled to make the model
    fully factorized per channel."""

    def __init__(self, latent_channels: int, use_context: bool = True):
        super().__init__()
        self.latent_channels = latent_channels
        self.use_context = use_context
        self.context = MaskedConv2d(latent_channels, 2 * latent_channels)
        self.bias = nn.Parameter(torch.zeros(2 * latent_channels))
        self.head = ParamHead(4 * latent_channels, latent_channels)

    def params(self, y: torch.Tensor):
        b, _, h, w = y.shape
        bias = self.bias[None, :, None, None].expand(b, -1, h, w)
        if self.use_context:
            ctx = self.context(y)
        else:
            ctx = torch.zeros_like(bias)
        return self.head(torch.cat([bias, ctx], dim=1))

    def rate_bits(self, y: torch.Tensor) -> torch.Tensor:
        mu, sigma = self.params(y)
        return -torch.log2(gaussian_likelihood(y, mu, sigma)).sum()


def rate_ldr(y, z, model: LdrEntropyModel) -> torch.Tensor:
    """Total bits for the LDR latent pair under the model (Gaussian part
    conditioned on hyper features and causal context, factorized hyper)."""
    psi = model.psi_for(z, y.shape[-2:])
    bits_y, bits_z = model.rate_bits(y, z, psi)
    return bits_y + bits_z


def rate_hdr(y, model: HdrEntropyModel) -> torch.Tensor:
    """Total bits for the HDR latent under the context+bias model."""
    return model.rate_bits(y)
