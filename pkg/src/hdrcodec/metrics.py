"""Perceptual distortion functions.

Three layers: the normalized-Laplacian-pyramid distance between a reference
HDR luminance map and a displayed LDR image; plain PSNR/SSIM base metrics;
and the exposure-stack HDR distortion (sum of a base metric over matched
LDR exposure pairs) with an exposure-matched evaluation variant that
searches each test exposure over +/- 2 stops.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import torch
import torch.nn.functional as F

from .display import DisplayModel, exposure_frames_t, render_luminance_t
from .hdr_io import HdrImage, LdrImage, luminance

_BINOMIAL_1D = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0


def luminance_t(x: torch.Tensor) -> torch.Tensor:
    """Rec. 709 luminance of a (B, 3, H, W) tensor -> (B, 1, H, W)."""
    return (
        0.2126 * x[:, 0:1] + 0.7152 * x[:, 1:2] + 0.0722 * x[:, 2:3]
    )


def _default_dn_filter() -> np.ndarray:
    return np.outer(_BINOMIAL_1D, _BINOMIAL_1D)


@dataclass
class NlpdConfig:
    levels: int = 6
    alpha: float = 1.0
    beta: float = 1.0
    frontend_exponent: float = 1.0 / 2.6
    dn_sigma: float = 0.17
    dn_filter: np.ndarray = field(default_factory=_default_dn_filter)
    min_band: int = 8  # coarsest band kept at least this large
    smooth_eps: float = 0.0  # > 0 smooths |.| for gradient-based use

    def __post_init__(self):
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        if self.alpha <= 0 or self.beta <= 0:
            raise ValueError("alpha and beta must be positive")
        f = np.asarray(self.dn_filter, dtype=np.float64)
        if f.shape != (5, 5) or (f < 0).any():
            raise ValueError("dn_filter must be a non-negative 5x5 kernel")
        self.dn_filter = f

    def effective_levels(self, h: int, w: int) -> int:
        m = 1
        size = min(h, w)
        while m < self.levels and size // 2 >= self.min_band:
            size //= 2
            m += 1
        return m


def _abs_term(x: torch.Tensor, eps: float) -> torch.Tensor:
    if eps == 0.0:
        return x.abs()
    return torch.sqrt(x * x + eps * eps) - eps


def _conv5(x: torch.Tensor, kernel: torch.Tensor) -> torch.Tensor:
    x = F.pad(x, (2, 2, 2, 2), mode="reflect")
    return F.conv2d(x, kernel)


def _reduce(x: torch.Tensor, kernel: torch.Tensor) -> torch.Tensor:
    return _conv5(x, kernel)[..., ::2, ::2]


def _expand(x: torch.Tensor, kernel: torch.Tensor, target_hw) -> torch.Tensor:
    h, w = target_hw
    up = x.new_zeros(*x.shape[:-2], h, w)
    up[..., ::2, ::2] = x
    return _conv5(up, 4.0 * kernel)


def _pyramid_kernel(like: torch.Tensor) -> torch.Tensor:
    k = torch.as_tensor(
        np.outer(_BINOMIAL_1D, _BINOMIAL_1D), dtype=like.dtype, device=like.device
    )
    return k[None, None]


def nlp_bands_t(lum: torch.Tensor, cfg: NlpdConfig) -> list[torch.Tensor]:
    """Normalized Laplacian pyramid of a (B, 1, H, W) luminance tensor."""
    kernel = _pyramid_kernel(lum)
    dn = torch.as_tensor(cfg.dn_filter, dtype=lum.dtype, device=lum.device)[None, None]
    x = lum ** cfg.frontend_exponent
    m = cfg.effective_levels(lum.shape[-2], lum.shape[-1])
    bands = []
    for _ in range(m - 1):
        g = _reduce(x, kernel)
        band = x - _expand(g, kernel, x.shape[-2:])
        bands.append(band / (cfg.dn_sigma + _conv5(_abs_term(band, cfg.smooth_eps), dn)))
        x = g
    bands.append(x / (cfg.dn_sigma + _conv5(_abs_term(x, cfg.smooth_eps), dn)))
    return bands


def nlp_transform(lum: np.ndarray, cfg: NlpdConfig = NlpdConfig()) -> list[np.ndarray]:
    """Normalized Laplacian pyramid of an (H, W) luminance map in cd/m^2."""
    lum = np.asarray(lum, dtype=np.float64)
    if lum.ndim != 2:
        raise ValueError("expected an (H, W) luminance map")
    if lum.min() <= 0:
        raise ValueError("luminance must be strictly positive")
    t = torch.from_numpy(lum)[None, None]
    return [b[0, 0].numpy() for b in nlp_bands_t(t, cfg)]


def nlpd_bands_t(
    ref_bands: list[torch.Tensor],
    test_bands: list[torch.Tensor],
    cfg: NlpdConfig,
) -> torch.Tensor:
    """Nested norm of band differences (Eq. with exponents alpha, beta)."""
    per_band = []
    for r, t in zip(ref_bands, test_bands):
        diff = _abs_term(r - t, cfg.smooth_eps) ** cfg.alpha
        per_band.append(diff.mean(dim=(-3, -2, -1)) ** (cfg.beta / cfg.alpha))
    return torch.stack(per_band, dim=0).mean(dim=0) ** (1.0 / cfg.beta)


def nlpd_luminance_t(
    ref_lum: torch.Tensor,
    test_lum: torch.Tensor,
    cfg: NlpdConfig = NlpdConfig(),
) -> torch.Tensor:
    """NLPD between two (B, 1, H, W) luminance tensors (cd/m^2 scale)."""
    if ref_lum.shape != test_lum.shape:
        raise ValueError("luminance shapes must match")
    ref_bands = nlp_bands_t(ref_lum.clamp_min(1e-6), cfg)
    test_bands = nlp_bands_t(test_lum.clamp_min(1e-6), cfg)
    return nlpd_bands_t(ref_bands, test_bands, cfg)


def nlpd_luminance(ref_lum, test_lum, cfg: NlpdConfig = NlpdConfig()) -> float:
    r = torch.as_tensor(np.asarray(ref_lum, dtype=np.float64))[None, None]
    t = torch.as_tensor(np.asarray(test_lum, dtype=np.float64))[None, None]
    with torch.no_grad():
        return float(nlpd_luminance_t(r, t, cfg))


def nlpd(
    image: HdrImage,
    ldr: LdrImage,
    l_max_scene: float,
    display: DisplayModel = DisplayModel(),
    cfg: NlpdConfig = NlpdConfig(),
) -> float:
    """Distance between a pre-processed HDR reference (calibrated by
    ``l_max_scene``) and a display-rendered LDR image."""
    if image.pixels.shape != ldr.pixels.shape:
        raise ValueError("image shapes must match")
    ref = luminance(image) * l_max_scene
    test_v = torch.from_numpy(luminance(ldr))[None, None]
    test = render_luminance_t(test_v, display)
    r = torch.from_numpy(ref)[None, None]
    with torch.no_grad():
        return float(nlpd_luminance_t(r, test, cfg))


# ---------------------------------------------------------------------------
# Base LDR metrics
# ---------------------------------------------------------------------------

PSNR_CAP_DB = 100.0
_PSNR_MSE_FLOOR = 1e-10


def base_psnr(a, b) -> float:
    """PSNR in dB for [0, 1] images, capped at 100 dB."""
    a, b = np.asarray(a, np.float64), np.asarray(b, np.float64)
    if a.shape != b.shape:
        raise ValueError("image shapes must match")
    mse = float(np.mean((a - b) ** 2))
    if mse < _PSNR_MSE_FLOOR:
        return PSNR_CAP_DB
    return 10.0 * math.log10(1.0 / mse)


def psnr_t(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    mse = ((a - b) ** 2).mean()
    if float(mse) < _PSNR_MSE_FLOOR:
        return torch.full_like(mse, PSNR_CAP_DB)
    return 10.0 * torch.log10(1.0 / mse)


def _gaussian_window(size: int, sigma: float, dtype, device) -> torch.Tensor:
    g = torch.arange(size, dtype=dtype, device=device) - (size - 1) / 2.0
    g = torch.exp(-(g**2) / (2 * sigma**2))
    g = g / g.sum()
    return torch.outer(g, g)[None, None]


def ssim_t(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """SSIM with an 11x11 Gaussian window (sigma 1.5) on (B, C, H, W) in [0,1]."""
    if a.shape != b.shape:
        raise ValueError("image shapes must match")
    c = a.shape[1]
    win = _gaussian_window(11, 1.5, a.dtype, a.device).expand(c, 1, 11, 11)
    pad = 5
    mu1 = F.conv2d(a, win, padding=pad, groups=c)
    mu2 = F.conv2d(b, win, padding=pad, groups=c)
    mu1_sq, mu2_sq, mu12 = mu1 * mu1, mu2 * mu2, mu1 * mu2
    s1 = F.conv2d(a * a, win, padding=pad, groups=c) - mu1_sq
    s2 = F.conv2d(b * b, win, padding=pad, groups=c) - mu2_sq
    s12 = F.conv2d(a * b, win, padding=pad, groups=c) - mu12
    c1, c2 = 0.01**2, 0.03**2
    m = ((2 * mu12 + c1) * (2 * s12 + c2)) / ((mu1_sq + mu2_sq + c1) * (s1 + s2 + c2))
    return m.mean()


def base_ssim(a, b) -> float:
    ta = torch.from_numpy(np.asarray(a, np.float64)).permute(2, 0, 1)[None]
    tb = torch.from_numpy(np.asarray(b, np.float64)).permute(2, 0, 1)[None]
    with torch.no_grad():
        return float(ssim_t(ta, tb))


@dataclass(frozen=True)
class BaseMetric:
    """A pluggable LDR distortion/quality metric for the exposure-stack
    distances. ``fn`` maps two (B, 3, H, W) tensors to a scalar tensor."""

    name: str
    polarity: str  # "lower" or "higher" is better
    fn: Callable[[torch.Tensor, torch.Tensor], torch.Tensor]
    optimal: float

    def __post_init__(self):
        if self.polarity not in ("lower", "higher"):
            raise ValueError("polarity must be 'lower' or 'higher'")

    def evaluate(self, a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
        return self.fn(a, b)

    def better(self, x: float, y: float) -> bool:
        return x < y if self.polarity == "lower" else x > y


PSNR_METRIC = BaseMetric("psnr", "higher", psnr_t, PSNR_CAP_DB)
SSIM_METRIC = BaseMetric("ssim", "higher", ssim_t, 1.0)
DSSIM_METRIC = BaseMetric("dssim", "lower", lambda a, b: 1.0 - ssim_t(a, b), 0.0)

BASE_METRICS = {m.name: m for m in (PSNR_METRIC, SSIM_METRIC, DSSIM_METRIC)}


# ---------------------------------------------------------------------------
# Exposure-stack HDR distortion
# ---------------------------------------------------------------------------


def _to_chw(image) -> torch.Tensor:
    if isinstance(image, torch.Tensor):
        return image
    px = image.pixels if isinstance(image, (HdrImage, LdrImage)) else np.asarray(image)
    return torch.from_numpy(np.asarray(px, np.float64)).permute(2, 0, 1)


def d_h_t(
    s: torch.Tensor,
    s_hat: torch.Tensor,
    l_max_scene: float,
    exposures_ref,
    exposures_test=None,
    base: BaseMetric = DSSIM_METRIC,
    display: DisplayModel = DisplayModel(),
    smooth_delta: float = 0.0,
) -> torch.Tensor:
    """Sum of the base metric over exposure-decomposed frame pairs.

    Tensors are (3, H, W) or (B, 3, H, W); for training use, ``s_hat`` may
    carry gradients and ``smooth_delta`` > 0 smooths the exposure clipping.
    """
    if exposures_test is None:
        exposures_test = exposures_ref
    if len(exposures_test) != len(exposures_ref):
        raise ValueError("reference and test stacks must have equal K")
    if s.dim() == 3:
        s, s_hat = s[None], s_hat[None]
    gamma = display.gamma
    ref = exposure_frames_t(s, l_max_scene, exposures_ref, gamma)
    test = exposure_frames_t(s_hat, l_max_scene, exposures_test, gamma, smooth_delta)
    total = None
    for k in range(len(exposures_ref)):
        v = base.evaluate(ref[k], test[k])
        total = v if total is None else total + v
    return total


def d_h(
    image: HdrImage,
    image_hat: HdrImage,
    l_max_scene: float,
    exposures_ref,
    exposures_test=None,
    base: BaseMetric = DSSIM_METRIC,
    display: DisplayModel = DisplayModel(),
) -> float:
    with torch.no_grad():
        return float(
            d_h_t(
                _to_chw(image),
                _to_chw(image_hat),
                l_max_scene,
                exposures_ref,
                exposures_test,
                base,
                display,
            )
        )


def _golden_min(f, a: float, b: float, tol: float, seen: dict):
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    seen[c], seen[d] = fc, fd
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
            seen[c] = fc
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
            seen[d] = fd


def d_h_star(
    image: HdrImage,
    image_hat: HdrImage,
    l_max_scene: float,
    exposures_ref,
    base: BaseMetric = PSNR_METRIC,
    display: DisplayModel = DisplayModel(),
    search_stops: float = 2.0,
    grid_points: int = 17,
    tol_stops: float = 0.01,
) -> tuple[float, list[float]]:
    """Exposure-matched evaluation: each test exposure is optimized
    independently over log2 offsets in [-search_stops, +search_stops]
    (coarse grid then golden-section refinement). Returns the aggregate and
    the matched exposures; never worse than the unmatched value because the
    search set contains the zero offset."""
    s = _to_chw(image)[None]
    s_hat = _to_chw(image_hat)[None]
    gamma = display.gamma
    sign = 1.0 if base.polarity == "lower" else -1.0

    total = 0.0
    matched = []
    with torch.no_grad():
        ref = exposure_frames_t(s, l_max_scene, exposures_ref, gamma)
        for k, e in enumerate(exposures_ref):
            ref_k = ref[k]

            def objective(delta: float) -> float:
                frame = exposure_frames_t(s_hat, l_max_scene, [e * 2.0**delta], gamma)[0]
                return sign * float(base.evaluate(ref_k, frame))

            seen: dict[float, float] = {}
            grid = np.linspace(-search_stops, search_stops, grid_points)
            for g in grid:
                seen[float(g)] = objective(float(g))
            best = min(seen, key=seen.get)
            i = int(np.argmin(np.abs(grid - best)))
            lo = float(grid[max(0, i - 1)])
            hi = float(grid[min(grid_points - 1, i + 1)])
            _golden_min(objective, lo, hi, tol_stops, seen)
            best = min(seen, key=seen.get)
            total += sign * seen[best]
            matched.append(e * 2.0**best)
    return total, matched
