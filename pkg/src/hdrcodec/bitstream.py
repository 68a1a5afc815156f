"""On-disk container: fixed 48-byte header + two range-coded substreams.

Little-endian layout: magic "EPIC" (4s), version (u8), width (u32),
height (u32), pad_h (u16), pad_w (u16), L_max in cd/m^2 (f32), model id
(u32), LDR stream length (u64), HDR stream length (u64), then reserved
zeros up to 48 bytes, then the LDR and HDR payloads.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

MAGIC = b"EPIC"
FORMAT_VERSION = 1
_FIELDS = "<4sBIIHHfIQQ"
_FIELDS_SIZE = struct.calcsize(_FIELDS)  # 41
HEADER_SIZE = 48


class BitstreamError(ValueError):
    """Container is malformed: bad magic/version, or truncated payload."""


@dataclass
class BitstreamHeader:
    width: int
    height: int
    pad_h: int
    pad_w: int
    l_max: float
    model_id: int
    len_ldr: int
    len_hdr: int
    version: int = FORMAT_VERSION


@dataclass
class Bitstream:
    header: BitstreamHeader
    ldr_stream: bytes
    hdr_stream: bytes

    def to_bytes(self) -> bytes:
        return serialize_bitstream(self.header, self.ldr_stream, self.hdr_stream)


def serialize_bitstream(header: BitstreamHeader, ldr_stream: bytes, hdr_stream: bytes) -> bytes:
    if header.len_ldr != len(ldr_stream) or header.len_hdr != len(hdr_stream):
        raise BitstreamError("header lengths do not match payload sizes")
    packed = struct.pack(
        _FIELDS,
        MAGIC,
        header.version,
        header.width,
        header.height,
        header.pad_h,
        header.pad_w,
        header.l_max,
        header.model_id,
        header.len_ldr,
        header.len_hdr,
    )
    return packed + b"\x00" * (HEADER_SIZE - _FIELDS_SIZE) + ldr_stream + hdr_stream


def parse_bitstream(data: bytes) -> Bitstream:
    if len(data) < HEADER_SIZE:
        raise BitstreamError("truncated header")
    if data[:4] != MAGIC:
        raise BitstreamError("bad magic")
    (
        _,
        version,
        width,
        height,
        pad_h,
        pad_w,
        l_max,
        model_id,
        len_ldr,
        len_hdr,
    ) = struct.unpack(_FIELDS, data[:_FIELDS_SIZE])
    if version != FORMAT_VERSION:
        raise BitstreamError(f"unsupported version {version}")
    if len(data) != HEADER_SIZE + len_ldr + len_hdr:
        raise BitstreamError("payload length mismatch")
    header = BitstreamHeader(
        width=width,
        height=height,
        pad_h=pad_h,
        pad_w=pad_w,
        l_max=l_max,
        model_id=model_id,
        len_ldr=len_ldr,
        len_hdr=len_hdr,
        version=version,
    )
    ldr = data[HEADER_SIZE : HEADER_SIZE + len_ldr]
    hdr = data[HEADER_SIZE + len_ldr :]
    return Bitstream(header=header, ldr_stream=ldr, hdr_stream=hdr)
