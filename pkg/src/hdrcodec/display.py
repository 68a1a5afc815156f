"""Forward/inverse display model and exposure-stack decomposition.

A fixed standard-dynamic-range display is assumed: emitted luminance
L = (l_max - l_min) * V^gamma + l_min for display-encoded V in [0, 1].
The inverse model turns a calibrated HDR image into a stack of LDR frames,
one per exposure value: frame = clip(S * L_max / e, 0, 1)^(1/gamma).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .hdr_io import HdrImage, LdrImage, luminance


@dataclass(frozen=True)
class DisplayModel:
    """Gamma power-law display with luminance range [l_min, l_max] cd/m^2."""

    l_min: float = 1.0
    l_max: float = 300.0
    gamma: float = 2.2

    def __post_init__(self):
        if not 0 < self.l_min < self.l_max:
            raise ValueError("need 0 < l_min < l_max")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")


@dataclass
class ExposureStack:
    """K exposure divisors (strictly increasing) and the K LDR frames."""

    exposures: list[float]
    frames: list[LdrImage]

    def __post_init__(self):
        if len(self.exposures) < 1:
            raise ValueError("need at least one exposure")
        if len(self.exposures) != len(self.frames):
            raise ValueError("exposures and frames must have equal length")
        if any(e <= 0 for e in self.exposures):
            raise ValueError("exposures must be positive")
        if any(b <= a for a, b in zip(self.exposures, self.exposures[1:])):
            raise ValueError("exposures must be strictly increasing")

    @property
    def k(self) -> int:
        return len(self.exposures)


def display_render(v, model: DisplayModel = DisplayModel()) -> np.ndarray:
    """Emitted luminance map (cd/m^2) for a display-encoded image."""
    y = luminance(v) if isinstance(v, LdrImage) or (
        hasattr(v, "ndim") and np.asarray(v).ndim == 3
    ) else np.asarray(v, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if y.min() < -1e-9 or y.max() > 1 + 1e-9:
        raise ValueError("display input must lie in [0, 1]")
    y = np.clip(y, 0.0, 1.0)
    return (model.l_max - model.l_min) * y**model.gamma + model.l_min


def render_luminance_t(y: torch.Tensor, model: DisplayModel) -> torch.Tensor:
    """Torch version of :func:`display_render` on a luminance tensor in [0,1]."""
    return (model.l_max - model.l_min) * y.clamp(0, 1) ** model.gamma + model.l_min


def smooth_clamp01(x: torch.Tensor, delta: float) -> torch.Tensor:
    """C-infinity approximation of clip(x, 0, 1) with corner width ``delta``.

    Exact hard clip when delta == 0. The smooth variant stays strictly inside
    (0, 1), which also keeps the subsequent fractional power differentiable.
    """
    if delta == 0.0:
        return x.clamp(0.0, 1.0)
    sp = torch.nn.functional.softplus
    return x - delta * sp((x - 1.0) / delta) + delta * sp(-x / delta)


def exposure_frames_t(
    pixels: torch.Tensor,
    l_max_scene: float,
    exposures,
    gamma: float = 2.2,
    smooth_delta: float = 0.0,
) -> torch.Tensor:
    """Exposure stack for (..., 3, H, W) tensors; returns (K, ..., 3, H, W)."""
    frames = []
    for e in exposures:
        scaled = pixels * (l_max_scene / float(e))
        frames.append(smooth_clamp01(scaled, smooth_delta) ** (1.0 / gamma))
    return torch.stack(frames, dim=0)


def decompose_exposures(
    image: HdrImage,
    l_max_scene: float,
    exposures,
    model: DisplayModel = DisplayModel(),
) -> ExposureStack:
    """Decompose a pre-processed HDR image into an LDR exposure stack."""
    exposures = [float(e) for e in exposures]
    if any(e <= 0 for e in exposures):
        raise ValueError("exposures must be positive")
    frames = []
    for e in exposures:
        scaled = np.clip(image.pixels * (l_max_scene / e), 0.0, 1.0)
        frames.append(LdrImage(scaled ** (1.0 / model.gamma)))
    return ExposureStack(exposures=exposures, frames=frames)


def choose_exposures(
    image: HdrImage,
    l_max_scene: float,
    k: int = 4,
    percentiles=None,
) -> list[float]:
    """Exposure values from luminance percentiles of the calibrated image.

    Defaults to ``k`` percentiles uniformly spaced on [10, 90], taken over
    pixels with positive luminance; pass ``percentiles`` explicitly to
    override (e.g. display-oriented choices). Ties are broken by epsilon
    perturbation so the result is strictly increasing.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    y = luminance(image) * l_max_scene
    y = y[y > 0]
    if y.size == 0:
        raise ValueError("image has no positive-luminance pixels")
    if percentiles is None:
        percentiles = np.linspace(10.0, 90.0, k)
    else:
        percentiles = np.asarray(percentiles, dtype=np.float64)
        if percentiles.ndim != 1 or len(percentiles) != k:
            raise ValueError("percentiles must be a flat list of length k")
    values = [float(np.percentile(y, p)) for p in percentiles]
    eps = np.finfo(np.float64).eps
    out = [values[0]]
    for v in values[1:]:
        prev = out[-1]
        out.append(v if v > prev else prev * (1.0 + 4.0 * eps))
    return out
