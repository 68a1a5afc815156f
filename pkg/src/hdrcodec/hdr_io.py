"""HDR image containers, Radiance RGBE I/O, and panorama-to-crop projection.

Images are plain numpy arrays wrapped in small dataclasses. Radiance files
are decoded/encoded in pure numpy (new-style RLE and flat scanlines), with
the shared-exponent rule value = c * 2^(e-136) for e > 0, else 0.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

# Rec. 709 luma weights
LUMA_R, LUMA_G, LUMA_B = 0.2126, 0.7152, 0.0722

_RADIANCE_MAGICS = (b"#?RADIANCE", b"#?RGBE")
_RESOLUTION_RE = re.compile(rb"-Y[ \t]+(\d+)[ \t]+\+X[ \t]+(\d+)[ \t]*\r?\n")

# RLE scanlines are only legal for widths in this range
_RLE_MIN_WIDTH = 8
_RLE_MAX_WIDTH = 0x7FFF


class HdrFormatError(ValueError):
    """Input is not a well-formed Radiance RGBE container."""


class HdrDataError(ValueError):
    """Pixel payload is truncated or internally inconsistent."""


@dataclass
class HdrImage:
    """Linear relative-radiance image (H, W, 3), all values finite and >= 0.

    ``calib_max_luminance`` is the assumed maximum scene luminance in cd/m^2
    (set by the caller when known); ``scale_applied`` records the factor used
    by :func:`preprocess`.
    """

    pixels: np.ndarray
    calib_max_luminance: float | None = None
    scale_applied: float | None = None

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ValueError(f"expected (H, W, 3) pixels, got shape {px.shape}")
        if not np.isfinite(px).all():
            raise ValueError("HDR pixels must be finite")
        if px.min() < 0:
            raise ValueError("HDR pixels must be non-negative")
        if self.calib_max_luminance is not None and not (
            1.0 <= self.calib_max_luminance <= 1e9
        ):
            raise ValueError("calib_max_luminance must be in [1, 1e9] cd/m^2")
        self.pixels = px

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass
class LdrImage:
    """Display-encoded image (H, W, 3) with values in [0, 1]."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ValueError(f"expected (H, W, 3) pixels, got shape {px.shape}")
        if not np.isfinite(px).all():
            raise ValueError("LDR pixels must be finite")
        if px.min() < -1e-9 or px.max() > 1 + 1e-9:
            raise ValueError("LDR pixels must lie in [0, 1]")
        self.pixels = np.clip(px, 0.0, 1.0)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


def luminance(image) -> np.ndarray:
    """Rec. 709 luminance map Y = 0.2126 R + 0.7152 G + 0.0722 B."""
    px = image.pixels if isinstance(image, (HdrImage, LdrImage)) else np.asarray(image)
    return LUMA_R * px[..., 0] + LUMA_G * px[..., 1] + LUMA_B * px[..., 2]


def preprocess(image: HdrImage) -> HdrImage:
    """Rescale so the maximum luminance is 1; records the factor applied.

    Exactly idempotent: inputs whose max luminance is already within 1e-9 of
    1 are returned unchanged (scale 1), so a second pass is the identity.
    """
    max_lum = float(luminance(image).max())
    if max_lum <= 0.0:
        raise ValueError("cannot preprocess an image with no positive luminance")
    if abs(max_lum - 1.0) <= 1e-9:
        return HdrImage(image.pixels.copy(), scale_applied=1.0)
    scale = 1.0 / max_lum
    return HdrImage(image.pixels * scale, scale_applied=scale)


# ---------------------------------------------------------------------------
# Radiance RGBE codec
# ---------------------------------------------------------------------------


def _rgbe_to_float(rgbe: np.ndarray) -> np.ndarray:
    """(H, W, 4) uint8 -> (H, W, 3) float64 using value = c * 2^(e-136)."""
    e = rgbe[..., 3].astype(np.int32)
    scale = np.where(e > 0, np.exp2(e - 136, dtype=np.float64), 0.0)
    return rgbe[..., :3].astype(np.float64) * scale[..., None]


def _float_to_rgbe(rgb: np.ndarray) -> np.ndarray:
    """(H, W, 3) float -> (H, W, 4) uint8, shared exponent per pixel."""
    rgb = np.maximum(rgb, 0.0)
    maxc = rgb.max(axis=-1)
    mant, expo = np.frexp(maxc)
    # bump exponent where the max channel would round to 256
    bump = np.round(np.ldexp(maxc, 8 - expo)) >= 256
    expo = expo + bump.astype(expo.dtype)
    quant = np.round(np.ldexp(rgb, (8 - expo)[..., None]))
    quant = np.clip(quant, 0, 255).astype(np.uint8)
    e = np.clip(expo + 128, 0, 255).astype(np.uint8)
    zero = maxc < 1e-38
    out = np.concatenate([quant, e[..., None]], axis=-1)
    out[zero] = 0
    return out


def _decode_rle_component(data: bytes, pos: int, width: int, out: np.ndarray) -> int:
    """Decode one RLE component stream into ``out`` (len width); new pos."""
    j = 0
    n = len(data)
    while j < width:
        if pos >= n:
            raise HdrDataError("truncated RLE scanline")
        code = data[pos]
        pos += 1
        if code > 128:  # run
            count = code & 127
            if pos >= n:
                raise HdrDataError("truncated RLE run")
            if j + count > width:
                raise HdrDataError("RLE run overflows scanline")
            out[j : j + count] = data[pos]
            pos += 1
            j += count
        else:  # literal dump
            count = code
            if count == 0 or j + count > width:
                raise HdrDataError("bad RLE literal count")
            if pos + count > n:
                raise HdrDataError("truncated RLE literal")
            out[j : j + count] = np.frombuffer(data, np.uint8, count, pos)
            pos += count
            j += count
    return pos


def read_radiance_hdr(data: bytes) -> HdrImage:
    """Decode a Radiance RGBE file (new-style RLE or flat scanlines)."""
    if not isinstance(data, (bytes, bytearray)):
        raise TypeError("expected bytes")
    data = bytes(data)
    if not data.startswith(_RADIANCE_MAGICS):
        raise HdrFormatError("missing #?RADIANCE / #?RGBE magic")
    m = _RESOLUTION_RE.search(data)
    if m is None:
        raise HdrFormatError("missing or malformed resolution line (-Y H +X W)")
    height, width = int(m.group(1)), int(m.group(2))
    if height <= 0 or width <= 0:
        raise HdrFormatError("non-positive image dimensions")
    pos = m.end()

    rgbe = np.zeros((height, width, 4), dtype=np.uint8)
    row = np.zeros((width, 4), dtype=np.uint8)
    for y in range(height):
        if pos + 4 > len(data):
            raise HdrDataError(f"truncated pixel data at scanline {y}")
        b0, b1, b2, b3 = data[pos : pos + 4]
        new_style = (
            b0 == 2
            and b1 == 2
            and (b2 << 8 | b3) == width
            and _RLE_MIN_WIDTH <= width <= _RLE_MAX_WIDTH
        )
        if new_style:
            pos += 4
            for c in range(4):
                pos = _decode_rle_component(data, pos, width, row[:, c])
            rgbe[y] = row
        else:
            end = pos + 4 * width
            if end > len(data):
                raise HdrDataError(f"truncated flat scanline {y}")
            rgbe[y] = np.frombuffer(data, np.uint8, 4 * width, pos).reshape(width, 4)
            pos = end
    return HdrImage(_rgbe_to_float(rgbe))


def _encode_rle_component(comp: np.ndarray) -> bytearray:
    """Run-length encode one component of a scanline (runs of >= 4 bytes)."""
    out = bytearray()
    n = len(comp)
    i = 0
    while i < n:
        run = 1
        while run < 127 and i + run < n and comp[i + run] == comp[i]:
            run += 1
        if run >= 4:
            out.append(128 + run)
            out.append(int(comp[i]))
            i += run
            continue
        # literal chunk: extend until a run of >= 4 starts or 128 bytes written
        j = i + 1
        while j < n and j - i < 128:
            r = 1
            while r < 4 and j + r < n and comp[j + r] == comp[j]:
                r += 1
            if r >= 4:
                break
            j += 1
        out.append(j - i)
        out.extend(comp[i:j].tobytes())
        i = j
    return out


def write_radiance_hdr(image: HdrImage) -> bytes:
    """Encode to Radiance RGBE bytes; inverse of read within RGBE precision."""
    px = image.pixels
    if not np.isfinite(px).all():
        raise ValueError("cannot encode non-finite pixels")
    height, width = px.shape[:2]
    rgbe = _float_to_rgbe(px)
    out = bytearray()
    out += b"#?RADIANCE\n"
    out += b"FORMAT=32-bit_rle_rgbe\n\n"
    out += f"-Y {height} +X {width}\n".encode("ascii")
    use_rle = _RLE_MIN_WIDTH <= width <= _RLE_MAX_WIDTH
    for y in range(height):
        if use_rle:
            out += bytes((2, 2, width >> 8, width & 0xFF))
            for c in range(4):
                out += _encode_rle_component(rgbe[y, :, c])
        else:
            out += rgbe[y].tobytes()
    return bytes(out)


def load_hdr(path: str | Path) -> HdrImage:
    return read_radiance_hdr(Path(path).read_bytes())


def save_hdr(path: str | Path, image: HdrImage) -> None:
    Path(path).write_bytes(write_radiance_hdr(image))


# ---------------------------------------------------------------------------
# Equirectangular panorama -> perspective crop
# ---------------------------------------------------------------------------


def equirect_to_perspective(
    panorama: HdrImage,
    yaw: float,
    pitch: float,
    fov: float,
    out_size: int,
) -> HdrImage:
    """Gnomonic projection of a 2:1 equirectangular panorama.

    Bilinear sampling with wrap-around in longitude and clamping in latitude.
    ``fov`` is the full horizontal (= vertical) viewing angle in radians.
    """
    pan = panorama.pixels
    h, w = pan.shape[:2]
    if w != 2 * h:
        raise ValueError(f"panorama must be 2:1 equirectangular, got {h}x{w}")
    if not 0.0 < fov < np.pi:
        raise ValueError("fov must be in (0, pi)")
    if out_size < 1:
        raise ValueError("out_size must be >= 1")

    half = np.tan(fov / 2.0)
    coords = np.linspace(-half, half, out_size) if out_size > 1 else np.array([0.0])
    xs, ys = np.meshgrid(coords, -coords)  # x right, y up, z forward
    zs = np.ones_like(xs)

    sp, cp = np.sin(pitch), np.cos(pitch)
    sy, cy = np.sin(yaw), np.cos(yaw)
    # pitch about the x-axis, then yaw about the y-axis
    x1, y1, z1 = xs, cp * ys - sp * zs, sp * ys + cp * zs
    x2, y2, z2 = cy * x1 + sy * z1, y1, -sy * x1 + cy * z1

    lon = np.arctan2(x2, z2)
    lat = np.arctan2(y2, np.hypot(x2, z2))
    col = (lon / (2 * np.pi) + 0.5) * w - 0.5
    row = (0.5 - lat / np.pi) * h - 0.5

    c0 = np.floor(col).astype(np.int64)
    r0 = np.floor(row).astype(np.int64)
    fc = col - c0
    fr = row - r0
    c1 = (c0 + 1) % w
    c0 = c0 % w
    r1 = np.clip(r0 + 1, 0, h - 1)
    r0 = np.clip(r0, 0, h - 1)

    top = pan[r0, c0] * (1 - fc)[..., None] + pan[r0, c1] * fc[..., None]
    bot = pan[r1, c0] * (1 - fc)[..., None] + pan[r1, c1] * fc[..., None]
    out = top * (1 - fr)[..., None] + bot * fr[..., None]
    return HdrImage(np.maximum(out, 0.0))


# ---------------------------------------------------------------------------
# Dataset manifest: one crop per line, "path yaw pitch"
# ---------------------------------------------------------------------------


def read_manifest(text: str) -> list[tuple[str, float, float]]:
    """Parse a crop manifest: whitespace-separated path, yaw, pitch per line."""
    entries = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ValueError(f"manifest line {lineno}: expected 'path yaw pitch'")
        try:
            entries.append((parts[0], float(parts[1]), float(parts[2])))
        except ValueError as exc:
            raise ValueError(f"manifest line {lineno}: bad number") from exc
    return entries
