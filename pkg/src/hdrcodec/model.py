"""The assembled codec: transforms + entropy models + latent (de)coding.

Training uses the vectorized forward pass with the uniform-noise proxy.
Actual coding drives one table-generator per substream through the range
coder; the generator computes entropy parameters position by position from
already-coded elements only, so encoder and decoder derive bit-identical
probability tables by construction.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import asdict

import numpy as np
import torch
import torch.nn as nn

from .entropy import (
    GLOBAL_SYMBOL_MAX,
    GLOBAL_SYMBOL_MIN,
    PMF_FLOOR,
    SUPPORT_SIGMAS,
    HdrEntropyModel,
    LdrEntropyModel,
    noise_proxy,
    quantize,
)
from .networks import (
    AnalysisNet,
    LuminanceEmbedding,
    NetworkConfig,
    ReconstructionNet,
    SynthesisHdr,
    SynthesisLdr,
    crop_padding,
    pad_to_multiple,
)
from .rangecoder import SymbolTable, build_table

CHECKPOINT_VERSION = 1


def hyper_dims(h: int, w: int) -> tuple[int, int]:
    """Spatial size of the hyper-latent for an (h, w) LDR latent (two
    stride-2 k5 p2 convolutions: ceil(n/2) each)."""
    return ((h + 1) // 2 + 1) // 2, ((w + 1) // 2 + 1) // 2


class HdrCodec(nn.Module):
    """Two-branch compression model: LDR latent (hyper-prior + context
    entropy model, conditional synthesis) and HDR latent (context + bias
    entropy model, side-information synthesis + reconstruction)."""

    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        self.cfg = cfg
        self.analysis_ldr = AnalysisNet(cfg, cfg.ldr_latent_channels)
        self.analysis_hdr = AnalysisNet(cfg, cfg.hdr_latent_channels)
        self.synthesis_ldr = SynthesisLdr(cfg)
        self.synthesis_hdr = SynthesisHdr(cfg)
        self.reconstruction = ReconstructionNet(cfg)
        self.embedding = LuminanceEmbedding(cfg.embed_dim)
        self.ldr_entropy = LdrEntropyModel(cfg.ldr_latent_channels, cfg.hyper_channels)
        self.hdr_entropy = HdrEntropyModel(cfg.hdr_latent_channels, cfg.hdr_use_context)

    @property
    def model_id(self) -> int:
        """Architecture fingerprint stored in bitstream headers."""
        blob = json.dumps(asdict(self.cfg), sort_keys=True).encode()
        return zlib.crc32(blob, CHECKPOINT_VERSION) & 0xFFFFFFFF

    def forward(
        self,
        x: torch.Tensor,
        l_max: torch.Tensor,
        generator: torch.Generator | None = None,
        training_noise: bool = True,
    ) -> dict:
        """x: (B, 3, H, W) pre-processed radiance; l_max: (B,) cd/m^2."""
        x_pad, pad = pad_to_multiple(x, self.cfg.down_factor)
        y_l = self.analysis_ldr(x_pad)
        y_h = self.analysis_hdr(x_pad)
        z_l = self.ldr_entropy.hyper_analysis(y_l)
        if training_noise:
            y_l_bar = noise_proxy(y_l, generator)
            z_l_bar = noise_proxy(z_l, generator)
            y_h_bar = noise_proxy(y_h, generator)
        else:
            y_l_bar = quantize(y_l)
            z_l_bar = quantize(z_l)
            y_h_bar = quantize(y_h)
        psi = self.ldr_entropy.psi_for(z_l_bar, y_l_bar.shape[-2:])
        bits_y, bits_z = self.ldr_entropy.rate_bits(y_l_bar, z_l_bar, psi)
        bits_h = self.hdr_entropy.rate_bits(y_h_bar)
        emb = self.embedding(l_max)
        ldr_pad = self.synthesis_ldr(y_l_bar, emb)
        hdr_pad = self.reconstruction(ldr_pad, self.synthesis_hdr(y_h_bar))
        return {
            "ldr": crop_padding(ldr_pad, pad),
            "hdr": crop_padding(hdr_pad, pad),
            "ldr_padded": ldr_pad,
            "hdr_padded": hdr_pad,
            "bits_ldr": bits_y + bits_z,
            "bits_hdr": bits_h,
            "y_ldr": y_l_bar,
            "y_hdr": y_h_bar,
            "z_ldr": z_l_bar,
            "pad": pad,
        }

    # -- decoding helpers -------------------------------------------------

    def synthesize_ldr(self, y_l_bar: torch.Tensor, l_max: float, pad=(0, 0)) -> torch.Tensor:
        emb = self.embedding(torch.tensor([float(l_max)]))
        return crop_padding(self.synthesis_ldr(y_l_bar, emb), pad)

    def reconstruct_hdr(self, ldr_pad: torch.Tensor, y_h_bar: torch.Tensor, pad=(0, 0)) -> torch.Tensor:
        return crop_padding(self.reconstruction(ldr_pad, self.synthesis_hdr(y_h_bar)), pad)


# ---------------------------------------------------------------------------
# Serial (autoregressive) table generation for the range coder
# ---------------------------------------------------------------------------


def _gaussian_support(mu: np.ndarray, sigma: np.ndarray):
    lo = np.floor(mu - SUPPORT_SIGMAS * sigma).astype(np.int64)
    hi = np.ceil(mu + SUPPORT_SIGMAS * sigma).astype(np.int64)
    lo = np.clip(lo, GLOBAL_SYMBOL_MIN, GLOBAL_SYMBOL_MAX)
    hi = np.clip(hi, GLOBAL_SYMBOL_MIN, GLOBAL_SYMBOL_MAX)
    hi = np.maximum(hi, lo)
    return lo, hi


def _position_tables(mu: np.ndarray, sigma: np.ndarray) -> list[SymbolTable]:
    """Coding tables for all channels at one spatial position."""
    from scipy.special import ndtr

    lo, hi = _gaussian_support(mu, sigma)
    g_lo, g_hi = int(lo.min()), int(hi.max())
    grid = np.arange(g_lo, g_hi + 1, dtype=np.float64)
    inv = 1.0 / sigma[:, None]
    mass = ndtr((grid[None, :] + 0.5 - mu[:, None]) * inv) - ndtr(
        (grid[None, :] - 0.5 - mu[:, None]) * inv
    )
    tables = []
    for c in range(len(mu)):
        pmf = np.maximum(mass[c, lo[c] - g_lo : hi[c] - g_lo + 1], PMF_FLOOR)
        tables.append(build_table(pmf / pmf.sum(), int(lo[c])))
    return tables


def gaussian_table_gen(
    context_conv: nn.Module,
    head: nn.Module,
    cond: torch.Tensor,
    channels: int,
    h: int,
    w: int,
):
    """Yield one table per (position, channel) in raster order; the decoded
    (or, when encoding, true) symbol is sent back and folded into the causal
    context canvas before the next position's parameters are computed."""
    weight = (context_conv.weight * context_conv.mask).detach()
    bias = context_conv.bias.detach()
    canvas = torch.zeros(1, channels, h + 4, w + 4, dtype=weight.dtype)
    for i in range(h):
        for j in range(w):
            window = canvas[:, :, i : i + 5, j : j + 5]
            ctx = torch.nn.functional.conv2d(window, weight, bias)
            feats = torch.cat([cond[:, :, i : i + 1, j : j + 1], ctx], dim=1)
            with torch.no_grad():
                mu, sigma = head(feats)
            mu = mu[0, :, 0, 0].double().numpy()
            sigma = sigma[0, :, 0, 0].double().numpy()
            col = []
            for table in _position_tables(mu, sigma):
                sym = yield table
                col.append(sym)
            canvas[0, :, i + 2, j + 2] = torch.tensor(
                col, dtype=canvas.dtype
            )


def factorized_table_gen(prior, channels: int, n_per_channel: int):
    """Yield static per-channel tables for the hyper-latent, channel-major."""
    pmfs = prior.channel_pmfs()
    for c in range(channels):
        offset, pmf = pmfs[c]
        table = build_table(pmf, offset)
        for _ in range(n_per_channel):
            yield table


def ldr_table_gen(model: HdrCodec, h: int, w: int):
    """Combined provider for the LDR substream: hyper-latent first (static
    tables), then the main latent conditioned on the decoded hyper-latent
    and the causal context."""
    cz = model.cfg.hyper_channels
    cy = model.cfg.ldr_latent_channels
    hz, wz = hyper_dims(h, w)
    z_syms = []
    pmfs = model.ldr_entropy.prior.channel_pmfs()
    for c in range(cz):
        offset, pmf = pmfs[c]
        table = build_table(pmf, offset)
        for _ in range(hz * wz):
            sym = yield table
            z_syms.append(sym)
    z_bar = torch.tensor(z_syms, dtype=torch.float32).reshape(1, cz, hz, wz)
    with torch.no_grad():
        psi = model.ldr_entropy.psi_for(z_bar, (h, w))
    yield from gaussian_table_gen(
        model.ldr_entropy.context, model.ldr_entropy.head, psi, cy, h, w
    )


def hdr_table_gen(model: HdrCodec, h: int, w: int):
    """Provider for the HDR substream: causal context + per-channel bias."""
    ch = model.cfg.hdr_latent_channels
    bias = model.hdr_entropy.bias.detach()[None, :, None, None].expand(1, -1, h, w)
    if model.hdr_entropy.use_context:
        context = model.hdr_entropy.context
    else:
        context = _ZeroContext(model.hdr_entropy.context)
    yield from gaussian_table_gen(context, model.hdr_entropy.head, bias, ch, h, w)


class _ZeroContext(nn.Module):
    """Stands in for the masked context conv when context is disabled."""

    def __init__(self, like):
        super().__init__()
        self.weight = torch.zeros_like(like.weight)
        self.mask = torch.ones_like(like.mask)
        self.bias = torch.zeros_like(like.bias)


def latent_symbol_counts(model: HdrCodec, h: int, w: int) -> tuple[int, int]:
    hz, wz = hyper_dims(h, w)
    n_ldr = model.cfg.hyper_channels * hz * wz + model.cfg.ldr_latent_channels * h * w
    n_hdr = model.cfg.hdr_latent_channels * h * w
    return n_ldr, n_hdr


def ldr_symbols(model: HdrCodec, y_l_bar: torch.Tensor, z_l_bar: torch.Tensor) -> list[int]:
    """Symbol order for the LDR substream: hyper-latent channel-major, then
    main latent position-major with channels innermost."""
    z = z_l_bar[0].numpy().astype(np.int64).reshape(-1)
    y = y_l_bar[0].permute(1, 2, 0).numpy().astype(np.int64).reshape(-1)
    return list(z) + list(y)


def hdr_symbols(y_h_bar: torch.Tensor) -> list[int]:
    return list(y_h_bar[0].permute(1, 2, 0).numpy().astype(np.int64).reshape(-1))


def unpack_ldr_symbols(model: HdrCodec, syms: list[int], h: int, w: int):
    cz = model.cfg.hyper_channels
    cy = model.cfg.ldr_latent_channels
    hz, wz = hyper_dims(h, w)
    n_z = cz * hz * wz
    z = torch.tensor(syms[:n_z], dtype=torch.float32).reshape(1, cz, hz, wz)
    y = (
        torch.tensor(syms[n_z:], dtype=torch.float32)
        .reshape(h, w, cy)
        .permute(2, 0, 1)[None]
    )
    return y, z


def unpack_hdr_symbols(model: HdrCodec, syms: list[int], h: int, w: int) -> torch.Tensor:
    ch = model.cfg.hdr_latent_channels
    return (
        torch.tensor(syms, dtype=torch.float32).reshape(h, w, ch).permute(2, 0, 1)[None]
    )
