import numpy as np
import pytest
import torch

from hdrcodec.bitstream import parse_bitstream
from hdrcodec.codec import (
    ModelMismatchError,
    bpp,
    compress,
    decode_latents,
    decompress,
)
from hdrcodec.entropy import quantize, rate_hdr, rate_ldr
from hdrcodec.hdr_io import HdrImage, preprocess
from hdrcodec.model import HdrCodec, hyper_dims
from hdrcodec.networks import NetworkConfig, pad_to_multiple
from tests.conftest import TINY_CFG, smooth_hdr


@pytest.fixture(scope="module")
def model():
    torch.manual_seed(0)
    return HdrCodec(TINY_CFG).eval()


@pytest.fixture(scope="module")
def image():
    return smooth_hdr(np.random.default_rng(5), 64, 64)


@pytest.fixture(scope="module")
def stream(model, image):
    return compress(image, model, 1e5)


class TestHyperDims:
    @pytest.mark.parametrize("h,expected", [(4, 1), (5, 2), (8, 2), (1, 1), (16, 4)])
    def test_matches_conv_arithmetic(self, h, expected):
        assert hyper_dims(h, h)[0] == expected


class TestCompress:
    def test_header_fields(self, stream, image, model):
        h = stream.header
        assert (h.width, h.height) == (64, 64)
        assert h.pad_h == 0 and h.pad_w == 0
        assert h.l_max == 1e5
        assert h.model_id == model.model_id
        assert h.len_ldr == len(stream.ldr_stream)
        assert h.len_hdr == len(stream.hdr_stream)

    def test_container_round_trip(self, stream):
        parsed = parse_bitstream(stream.to_bytes())
        assert parsed.header == stream.header
        assert parsed.ldr_stream == stream.ldr_stream
        assert parsed.hdr_stream == stream.hdr_stream

    def test_bpp_accounting_matches_byte_lengths(self, stream):
        total, side = bpp(stream)
        n = 64 * 64
        assert total == 8 * (len(stream.ldr_stream) + len(stream.hdr_stream)) / n
        assert side == 8 * len(stream.hdr_stream) / n

    def test_rejects_bad_lmax(self, model, image):
        with pytest.raises(ValueError):
            compress(image, model, -5.0)


class TestLatentRoundTrip:
    def test_decoded_latents_equal_encoder_side(self, model, image, stream):
        ref = preprocess(image)
        x = torch.from_numpy(ref.pixels).float().permute(2, 0, 1)[None]
        x_pad, _ = pad_to_multiple(x, model.cfg.down_factor)
        with torch.no_grad():
            y_l_cont = model.analysis_ldr(x_pad)
            y_l = quantize(y_l_cont)
            y_h = quantize(model.analysis_hdr(x_pad))
            z_l = quantize(model.ldr_entropy.hyper_analysis(y_l_cont))
        y_l_dec, y_h_dec, z_l_dec = decode_latents(stream, model)
        assert torch.equal(y_l, y_l_dec)
        assert torch.equal(y_h, y_h_dec)
        assert torch.equal(z_l, z_l_dec)

    def test_model_mismatch_rejected(self, stream):
        torch.manual_seed(9)
        other = HdrCodec(NetworkConfig(base_channels=8, ldr_latent_channels=10,
                                       hdr_latent_channels=6, hyper_channels=4,
                                       embed_dim=16)).eval()
        with pytest.raises(ModelMismatchError):
            decode_latents(stream, other)


class TestDecompress:
    def test_shapes_match_header(self, stream, model):
        ldr, hdr = decompress(stream, model)
        assert ldr.pixels.shape == (64, 64, 3)
        assert hdr.pixels.shape == (64, 64, 3)

    def test_deterministic(self, stream, model):
        a = decompress(stream, model)
        b = decompress(stream, model)
        assert np.array_equal(a[0].pixels, b[0].pixels)
        assert np.array_equal(a[1].pixels, b[1].pixels)

    def test_lmax_override_changes_ldr(self, stream, model):
        base_ldr, _ = decompress(stream, model)
        for l_max in (1e4, 1e6, 1e7):
            ldr, _ = decompress(stream, model, l_max_override=l_max)
            assert np.abs(ldr.pixels - base_ldr.pixels).mean() > 0

    def test_output_ranges(self, stream, model):
        ldr, hdr = decompress(stream, model)
        assert ldr.pixels.min() >= 0 and ldr.pixels.max() <= 1
        assert hdr.pixels.min() >= 0


class TestDegenerateSizes:
    def test_one_pixel_image(self, model):
        img = HdrImage(np.full((1, 1, 3), 2.0))
        bs = compress(img, model, 1e4)
        ldr, hdr = decompress(bs, model)
        assert ldr.pixels.shape == (1, 1, 3)
        assert hdr.pixels.shape == (1, 1, 3)

    def test_non_multiple_size(self, model, rng):
        img = smooth_hdr(rng, 37, 53)
        bs = compress(img, model, 1e5)
        assert bs.header.pad_h == (16 - 37 % 16) % 16
        ldr, hdr = decompress(bs, model)
        assert ldr.pixels.shape == (37, 53, 3)
        assert hdr.pixels.shape == (37, 53, 3)


class TestRateFidelity:
    def test_estimate_tracks_actual_bits(self, model, rng):
        """Across several images the encoded size stays within
        2% + 256 bits of the differentiable rate estimate."""
        for _ in range(5):
            img = smooth_hdr(rng, 64, 64)
            ref = preprocess(img)
            x = torch.from_numpy(ref.pixels).float().permute(2, 0, 1)[None]
            x_pad, _ = pad_to_multiple(x, model.cfg.down_factor)
            with torch.no_grad():
                y_l_cont = model.analysis_ldr(x_pad)
                y_l = quantize(y_l_cont)
                y_h = quantize(model.analysis_hdr(x_pad))
                z_l = quantize(model.ldr_entropy.hyper_analysis(y_l_cont))
                est = float(rate_ldr(y_l, z_l, model.ldr_entropy)) + float(
                    rate_hdr(y_h, model.hdr_entropy)
                )
            bs = compress(img, model, 1e5)
            actual = 8 * (len(bs.ldr_stream) + len(bs.hdr_stream))
            assert abs(actual - est) <= 0.02 * est + 256
