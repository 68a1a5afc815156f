"""Automated decoding: pseudo-multi-exposure synthesis and fusion.

One decoded LDR latent is rendered once per conditioning luminance in
{1e4, 1e5, 1e6, 1e7} cd/m^2; the resulting stack is fused with the classic
contrast x saturation x well-exposedness weighting and Laplacian-pyramid
multi-band blending, and the fused image drives the HDR reconstruction.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F

from .bitstream import Bitstream
from .codec import decode_latents
from .hdr_io import HdrImage, LdrImage
from .metrics import _pyramid_kernel, luminance_t
from .model import HdrCodec
from .networks import crop_padding

CONDITIONING_LUMINANCES = (1e4, 1e5, 1e6, 1e7)

_LAPLACIAN_3X3 = torch.tensor([[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]])


def pseudo_exposure_stack(
    y_l_bar: torch.Tensor,
    model: HdrCodec,
    luminances=CONDITIONING_LUMINANCES,
) -> torch.Tensor:
    """Synthesize the LDR image under each conditioning luminance.

    Returns a (K, 3, H, W) tensor of padded-size frames.
    """
    frames = []
    with torch.no_grad():
        for l_max in luminances:
            emb = model.embedding(torch.tensor([float(l_max)]))
            frames.append(model.synthesis_ldr(y_l_bar, emb)[0])
    return torch.stack(frames, dim=0)


def fusion_weights(frames: torch.Tensor, sigma: float = 0.2) -> torch.Tensor:
    """Per-pixel fusion weights for a (K, 3, H, W) stack in [0, 1].

    Contrast (|Laplacian| of luminance) x saturation (RGB standard
    deviation) x well-exposedness (per-channel Gaussian around 0.5),
    normalized to sum to one across frames at every pixel.
    """
    if frames.dim() != 4 or frames.shape[1] != 3:
        raise ValueError("expected a (K, 3, H, W) stack")
    lum = luminance_t(frames)
    lap = _LAPLACIAN_3X3.to(frames.dtype)[None, None]
    contrast = F.conv2d(F.pad(lum, (1, 1, 1, 1), mode="replicate"), lap).abs()
    saturation = frames.std(dim=1, keepdim=True, unbiased=False)
    well_exposed = torch.exp(-((frames - 0.5) ** 2) / (2 * sigma**2)).prod(
        dim=1, keepdim=True
    )
    w = contrast * saturation * well_exposed + 1e-12
    return w / w.sum(dim=0, keepdim=True)


def exposure_fusion(frames: torch.Tensor) -> torch.Tensor:
    """Fuse a (K, 3, H, W) stack into one (3, H, W) image in [0, 1].

    Weight maps are blended per Laplacian-pyramid band (weights go through
    the matching Gaussian pyramid), which avoids seams at weight
    transitions. A single frame is returned unchanged.
    """
    if frames.dim() != 4 or frames.shape[1] != 3:
        raise ValueError("expected a (K, 3, H, W) stack")
    k = frames.shape[0]
    if k == 0:
        raise ValueError("empty stack")
    if k == 1:
        return frames[0].clone()

    weights = fusion_weights(frames)
    kernel = _pyramid_kernel(frames)
    kernel3 = kernel.expand(3, 1, 5, 5)

    levels = 1
    size = min(frames.shape[-2:])
    while levels < 6 and size // 2 >= 8:
        size //= 2
        levels += 1

    def _reduce_n(x, kern, ch):
        x = F.pad(x, (2, 2, 2, 2), mode="reflect")
        return F.conv2d(x, kern, groups=ch)[..., ::2, ::2]

    def _expand_n(x, kern, ch, target_hw):
        h, w = target_hw
        up = x.new_zeros(*x.shape[:-2], h, w)
        up[..., ::2, ::2] = x
        up = F.pad(up, (2, 2, 2, 2), mode="reflect")
        return F.conv2d(up, 4.0 * kern, groups=ch)

    # image Laplacian pyramids and weight Gaussian pyramid, fused per band
    img = frames
    wgt = weights
    fused_bands = []
    for _ in range(levels - 1):
        down = _reduce_n(img, kernel3, 3)
        band = img - _expand_n(down, kernel3, 3, img.shape[-2:])
        fused_bands.append((band * wgt).sum(dim=0))
        wgt = _reduce_n(wgt, kernel, 1)
        img = down
    fused_bands.append((img * wgt).sum(dim=0))

    out = fused_bands[-1]
    for band in reversed(fused_bands[:-1]):
        out = band + _expand_n(out[None], kernel3, 3, band.shape[-2:])[0]
    return out.clamp(0.0, 1.0)


def automated_decode(
    bitstream: Bitstream,
    model: HdrCodec,
    luminances=CONDITIONING_LUMINANCES,
) -> tuple[LdrImage, HdrImage]:
    """Decode without trusting the header luminance: synthesize the
    pseudo-exposure stack, fuse it for display, and reconstruct HDR from
    the fused image plus the decoded side information."""
    header = bitstream.header
    y_l, y_h, _ = decode_latents(bitstream, model)
    pad = (header.pad_h, header.pad_w)
    frames = pseudo_exposure_stack(y_l, model, luminances)
    fused_pad = exposure_fusion(frames)
    with torch.no_grad():
        hdr_pad = model.reconstruction(fused_pad[None], model.synthesis_hdr(y_h))
    ldr = crop_padding(fused_pad[None], pad)[0].permute(1, 2, 0).numpy().astype(np.float64)
    hdr = crop_padding(hdr_pad, pad)[0].permute(1, 2, 0).numpy().astype(np.float64)
    return LdrImage(np.clip(ldr, 0, 1)), HdrImage(hdr)
