"""Learned two-stream HDR image codec.

An HDR image is compressed into two range-coded substreams: one decodes to
a display-ready LDR image (conditioned on the maximum scene luminance),
the other carries side information for reconstructing the HDR image from
that LDR output. Training optimizes both rates jointly with perceptual
distortions of both outputs.
"""

from .bitstream import Bitstream, BitstreamHeader, BitstreamError, parse_bitstream, serialize_bitstream
from .codec import ModelMismatchError, bpp, compress, decompress
from .display import (
    DisplayModel,
    ExposureStack,
    choose_exposures,
    decompose_exposures,
    display_render,
)
from .entropy import gaussian_pmf, noise_proxy, quantize, rate_hdr, rate_ldr
from .evaluate import RdCurve, RdPoint, bd_quality, evaluate
from .fusion import automated_decode, exposure_fusion, pseudo_exposure_stack
from .hdr_io import (
    HdrDataError,
    HdrFormatError,
    HdrImage,
    LdrImage,
    equirect_to_perspective,
    load_hdr,
    luminance,
    preprocess,
    read_radiance_hdr,
    save_hdr,
    write_radiance_hdr,
)
from .metrics import (
    BASE_METRICS,
    BaseMetric,
    NlpdConfig,
    base_psnr,
    base_ssim,
    d_h,
    d_h_star,
    nlp_transform,
    nlpd,
)
from .model import HdrCodec
from .networks import NetworkConfig
from .rangecoder import RangeCoderError, range_decode, range_encode
from .training import (
    CheckpointError,
    TrainConfig,
    TrainingFault,
    load_checkpoint,
    lr_for_epoch,
    rd_loss,
    save_checkpoint,
    train,
)

__version__ = "0.1.0"
