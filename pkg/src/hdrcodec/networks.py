"""Learned transforms: LDR/HDR analysis, conditional LDR synthesis, HDR
side-information synthesis, and HDR reconstruction.

All transforms are built from stride-2 residual stages with SiLU
activations (smooth everywhere, which keeps finite-difference gradient
checks clean). The LDR synthesis network is conditioned on a sinusoidal
embedding of log10 of the maximum scene luminance via per-stage
feature-wise scale-and-shift.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F


@dataclass(frozen=True)
class NetworkConfig:
    base_channels: int = 48
    ldr_latent_channels: int = 64
    hdr_latent_channels: int = 32
    num_down_stages: int = 4
    embed_dim: int = 128
    attention: bool = True
    hyper_channels: int = 32
    hdr_use_context: bool = True

    def __post_init__(self):
        for name in (
            "base_channels",
            "ldr_latent_channels",
            "hdr_latent_channels",
            "num_down_stages",
            "embed_dim",
            "hyper_channels",
        ):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.embed_dim % 2 != 0:
            raise ValueError("embed_dim must be even")

    @property
    def down_factor(self) -> int:
        return 2**self.num_down_stages


def conv3(cin, cout, stride=1):
    return nn.Conv2d(cin, cout, 3, stride=stride, padding=1)


def conv1(cin, cout, stride=1):
    return nn.Conv2d(cin, cout, 1, stride=stride)


def deconv2(cin, cout):
    # kernel 4, stride 2, pad 1 doubles any spatial size exactly
    return nn.ConvTranspose2d(cin, cout, 4, stride=2, padding=1)


class ResBlock(nn.Module):
    def __init__(self, ch):
        super().__init__()
        self.conv1 = conv3(ch, ch)
        self.conv2 = conv3(ch, ch)

    def forward(self, x):
        h = self.conv2(F.silu(self.conv1(x)))
        return x + h


class DownBlock(nn.Module):
    """Stride-2 residual downsampling stage."""

    def __init__(self, cin, cout):
        super().__init__()
        self.conv1 = conv3(cin, cout, stride=2)
        self.conv2 = conv3(cout, cout)
        self.skip = conv1(cin, cout, stride=2)

    def forward(self, x):
        return self.skip(x) + self.conv2(F.silu(self.conv1(x)))


class UpBlock(nn.Module):
    """Stride-2 residual upsampling stage."""

    def __init__(self, cin, cout):
        super().__init__()
        self.up = deconv2(cin, cout)
        self.conv = conv3(cout, cout)
        self.skip = deconv2(cin, cout)

    def forward(self, x):
        return self.skip(x) + self.conv(F.silu(self.up(x)))


class AttentionBlock(nn.Module):
    """Residual spatial attention: trunk modulated by a sigmoid mask."""

    def __init__(self, ch):
        super().__init__()
        self.trunk = nn.Sequential(ResBlock(ch), ResBlock(ch))
        self.mask = nn.Sequential(ResBlock(ch), ResBlock(ch), conv1(ch, ch))

    def forward(self, x):
        return x + self.trunk(x) * torch.sigmoid(self.mask(x))


def pad_to_multiple(x: torch.Tensor, multiple: int):
    """Pad (B, C, H, W) on bottom/right to a size multiple; returns the
    padded tensor and (pad_h, pad_w). Reflection where possible, edge
    replication for inputs smaller than the pad."""
    h, w = x.shape[-2:]
    pad_h = (-h) % multiple
    pad_w = (-w) % multiple
    if pad_h == 0 and pad_w == 0:
        return x, (0, 0)
    if pad_h <= h - 1 and pad_w <= w - 1:
        return F.pad(x, (0, pad_w, 0, pad_h), mode="reflect"), (pad_h, pad_w)
    # degenerate sizes: repeat edge rows/columns
    if pad_h > 0:
        x = torch.cat([x, x[..., -1:, :].expand(*x.shape[:-2], pad_h, x.shape[-1])], dim=-2)
    if pad_w > 0:
        x = torch.cat([x, x[..., :, -1:].expand(*x.shape[:-1], pad_w)], dim=-1)
    return x, (pad_h, pad_w)


def crop_padding(x: torch.Tensor, pad_hw) -> torch.Tensor:
    pad_h, pad_w = pad_hw
    h = x.shape[-2] - pad_h
    w = x.shape[-1] - pad_w
    return x[..., :h, :w]


class LuminanceEmbedding(nn.Module):
    """Sinusoidal embedding of log10(L_max) refined by a two-layer MLP.

    Frequencies are geometrically spaced from 1 to 1e4 across embed_dim/2
    sin/cos pairs.
    """

    def __init__(self, embed_dim: int):
        super().__init__()
        if embed_dim % 2 != 0:
            raise ValueError("embed_dim must be even")
        self.embed_dim = embed_dim
        half = embed_dim // 2
        i = torch.arange(half, dtype=torch.float32)
        denom = max(half - 1, 1)
        self.register_buffer("freqs", torch.pow(10.0, 4.0 * i / denom))
        self.fc1 = nn.Linear(embed_dim, embed_dim)
        self.fc2 = nn.Linear(embed_dim, embed_dim)

    def forward(self, l_max: torch.Tensor) -> torch.Tensor:
        """l_max: (B,) positive luminances in cd/m^2 -> (B, embed_dim)."""
        if (l_max <= 0).any():
            raise ValueError("L_max must be positive")
        t = torch.log10(l_max.to(self.freqs.dtype))[:, None] * self.freqs[None, :]
        base = torch.cat([torch.sin(t), torch.cos(t)], dim=1)
        return self.fc2(F.silu(self.fc1(base.to(self.fc1.weight.dtype))))


class FiLM(nn.Module):
    """Per-channel scale-and-shift from a conditioning vector."""

    def __init__(self, embed_dim, ch):
        super().__init__()
        self.proj = nn.Linear(embed_dim, 2 * ch)

    def forward(self, x, emb):
        scale, shift = self.proj(emb)[:, :, None, None].chunk(2, dim=1)
        return x * (1 + scale) + shift


class AnalysisNet(nn.Module):
    """Stride-2 residual encoder mapping (B, 3, H, W) to a latent grid."""

    def __init__(self, cfg: NetworkConfig, out_channels: int):
        super().__init__()
        ch = cfg.base_channels
        self.stem = conv3(3, ch)
        stages = []
        for i in range(cfg.num_down_stages):
            stages.append(DownBlock(ch, ch))
            stages.append(ResBlock(ch))
            if cfg.attention and i >= cfg.num_down_stages - 2:
                stages.append(AttentionBlock(ch))
        self.stages = nn.Sequential(*stages)
        self.head = conv3(ch, out_channels)

    def forward(self, x):
        if x.shape[-1] == 0 or x.shape[-2] == 0:
            raise ValueError("empty image")
        return self.head(self.stages(self.stem(x)))


class SynthesisLdr(nn.Module):
    """Conditional decoder from the LDR latent to a display-encoded image.

    The luminance embedding modulates features after every upsampling stage;
    a final sigmoid squashes the output into [0, 1].
    """

    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        ch = cfg.base_channels
        self.stem = conv3(cfg.ldr_latent_channels, ch)
        self.ups = nn.ModuleList()
        self.films = nn.ModuleList()
        self.resblocks = nn.ModuleList()
        self.attns = nn.ModuleList()
        for i in range(cfg.num_down_stages):
            self.ups.append(UpBlock(ch, ch))
            self.films.append(FiLM(cfg.embed_dim, ch))
            self.resblocks.append(ResBlock(ch))
            use_attn = cfg.attention and i < 2
            self.attns.append(AttentionBlock(ch) if use_attn else nn.Identity())
        self.head = conv3(ch, 3)

    def forward(self, y, emb):
        x = self.stem(y)
        for up, film, res, attn in zip(self.ups, self.films, self.resblocks, self.attns):
            x = attn(res(film(up(x), emb)))
        return torch.sigmoid(self.head(x))


class SynthesisHdr(nn.Module):
    """Decoder from the HDR latent to side-information feature maps at
    1/4, 1/2 and full resolution with base, base/2, base/4 channels."""

    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        ch = cfg.base_channels
        self.ch_quarter = ch
        self.ch_half = max(1, ch // 2)
        self.ch_full = max(1, ch // 4)
        n_to_quarter = cfg.num_down_stages - 2
        self.stem = conv3(cfg.hdr_latent_channels, ch)
        trunk = []
        for _ in range(abs(n_to_quarter)):
            # latents shallower than 1/4 resolution are brought down instead
            trunk.append(UpBlock(ch, ch) if n_to_quarter > 0 else DownBlock(ch, ch))
            trunk.append(ResBlock(ch))
        self.trunk = nn.Sequential(*trunk)
        self.up_half = UpBlock(ch, self.ch_half)
        self.up_full = UpBlock(self.ch_half, self.ch_full)

    def forward(self, y):
        f_quarter = self.trunk(self.stem(y))
        f_half = self.up_half(f_quarter)
        f_full = self.up_full(f_half)
        return [f_quarter, f_half, f_full]


class ReconstructionNet(nn.Module):
    """Encoder-decoder with skip connections reconstructing HDR radiance
    from the LDR image; side-information features are concatenated at each
    matching scale. Softplus output keeps radiance non-negative."""

    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        ch = cfg.base_channels
        c_full = max(1, ch // 4)
        c_half = max(1, ch // 2)
        c_quarter = ch
        self.enc0 = nn.Sequential(conv3(3 + c_full, ch), ResBlock(ch))
        self.down1 = DownBlock(ch, ch)
        self.enc1 = nn.Sequential(conv3(ch + c_half, ch), ResBlock(ch))
        self.down2 = DownBlock(ch, ch)
        self.enc2 = nn.Sequential(conv3(ch + c_quarter, ch), ResBlock(ch))
        self.up1 = UpBlock(ch, ch)
        self.dec1 = nn.Sequential(conv3(2 * ch, ch), ResBlock(ch))
        self.up0 = UpBlock(ch, ch)
        self.dec0 = nn.Sequential(conv3(2 * ch, ch), ResBlock(ch))
        self.head = conv3(ch, 3)

    def forward(self, ldr, features):
        f_quarter, f_half, f_full = features
        if f_full.shape[-2:] != ldr.shape[-2:]:
            raise ValueError(
                f"side features {tuple(f_full.shape[-2:])} do not match "
                f"image size {tuple(ldr.shape[-2:])}"
            )
        e0 = self.enc0(torch.cat([ldr, f_full], dim=1))
        e1 = self.enc1(torch.cat([self.down1(e0), f_half], dim=1))
        e2 = self.enc2(torch.cat([self.down2(e1), f_quarter], dim=1))
        d1 = self.dec1(torch.cat([self.up1(e2), e1], dim=1))
        d0 = self.dec0(torch.cat([self.up0(d1), e0], dim=1))
        return F.softplus(self.head(d0))
