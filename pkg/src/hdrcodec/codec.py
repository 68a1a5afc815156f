"""User-facing compress / decompress pipeline."""

from __future__ import annotations

import numpy as np
import torch

from .bitstream import Bitstream, BitstreamHeader, parse_bitstream
from .entropy import quantize
from .hdr_io import HdrImage, LdrImage, preprocess
from .model import (
    HdrCodec,
    hdr_symbols,
    hdr_table_gen,
    ldr_symbols,
    ldr_table_gen,
    unpack_hdr_symbols,
    unpack_ldr_symbols,
)
from .networks import crop_padding, pad_to_multiple
from .rangecoder import range_decode, range_encode


class ModelMismatchError(ValueError):
    """Bitstream was produced by a model with a different architecture."""


def _to_tensor(image: HdrImage) -> torch.Tensor:
    return torch.from_numpy(image.pixels).float().permute(2, 0, 1)[None]


def compress(image: HdrImage, model: HdrCodec, l_max: float) -> Bitstream:
    """Pre-process, transform, quantize and entropy-code an HDR image."""
    if l_max <= 0:
        raise ValueError("l_max must be positive")
    model.eval()
    image = preprocess(image)
    x = _to_tensor(image)
    with torch.no_grad():
        x_pad, pad = pad_to_multiple(x, model.cfg.down_factor)
        y_l_cont = model.analysis_ldr(x_pad)
        y_l = quantize(y_l_cont)
        y_h = quantize(model.analysis_hdr(x_pad))
        z_l = quantize(model.ldr_entropy.hyper_analysis(y_l_cont))
    h, w = y_l.shape[-2:]
    ldr_stream = range_encode(ldr_symbols(model, y_l, z_l), ldr_table_gen(model, h, w))
    hdr_stream = range_encode(hdr_symbols(y_h), hdr_table_gen(model, h, w))
    header = BitstreamHeader(
        width=image.width,
        height=image.height,
        pad_h=pad[0],
        pad_w=pad[1],
        l_max=float(l_max),
        model_id=model.model_id,
        len_ldr=len(ldr_stream),
        len_hdr=len(hdr_stream),
    )
    return Bitstream(header=header, ldr_stream=ldr_stream, hdr_stream=hdr_stream)


def latent_dims(model: HdrCodec, header: BitstreamHeader) -> tuple[int, int]:
    f = model.cfg.down_factor
    return (header.height + header.pad_h) // f, (header.width + header.pad_w) // f


def decode_latents(bitstream: Bitstream, model: HdrCodec):
    """Entropy-decode both substreams back to the quantized latents."""
    model.eval()
    header = bitstream.header
    if header.model_id != model.model_id:
        raise ModelMismatchError(
            f"bitstream model id {header.model_id:#x} != model {model.model_id:#x}"
        )
    h, w = latent_dims(model, header)
    ldr_syms = range_decode(bitstream.ldr_stream, ldr_table_gen(model, h, w))
    hdr_syms = range_decode(bitstream.hdr_stream, hdr_table_gen(model, h, w))
    y_l, z_l = unpack_ldr_symbols(model, ldr_syms, h, w)
    y_h = unpack_hdr_symbols(model, hdr_syms, h, w)
    return y_l, y_h, z_l


def decompress(
    bitstream: Bitstream,
    model: HdrCodec,
    l_max_override: float | None = None,
) -> tuple[LdrImage, HdrImage]:
    """Decode to the display LDR image and the reconstructed HDR image.

    The conditioning luminance defaults to the header value; overriding it
    re-renders the LDR output for a different assumed maximum luminance
    without touching the bitstream.
    """
    header = bitstream.header
    y_l, y_h, _ = decode_latents(bitstream, model)
    pad = (header.pad_h, header.pad_w)
    l_max = float(l_max_override) if l_max_override is not None else header.l_max
    with torch.no_grad():
        emb = model.embedding(torch.tensor([l_max]))
        ldr_pad = model.synthesis_ldr(y_l, emb)
        hdr_pad = model.reconstruction(ldr_pad, model.synthesis_hdr(y_h))
    ldr = crop_padding(ldr_pad, pad)[0].permute(1, 2, 0).numpy().astype(np.float64)
    hdr = crop_padding(hdr_pad, pad)[0].permute(1, 2, 0).numpy().astype(np.float64)
    return (
        LdrImage(np.clip(ldr, 0.0, 1.0)),
        HdrImage(hdr, calib_max_luminance=min(max(l_max, 1.0), 1e9)),
    )


def bpp(bitstream: Bitstream) -> tuple[float, float]:
    """(total bpp, side-information bpp) from payload byte lengths."""
    header = bitstream.header
    n = header.width * header.height
    total = 8.0 * (header.len_ldr + header.len_hdr) / n
    side = 8.0 * header.len_hdr / n
    return total, side
