"""Image representation and codecs.

Images are planar rasters of 32-bit floats in ``[0, 1]``, one or three
channels.  PNG input (8- or 16-bit, grayscale or RGB, alpha discarded) and
8-bit PNG output are supported, plus a raw float tensor side-format used by
tests and scripts: a 16-byte header (magic ``IMGF``, then u32 height, width,
channels, little-endian) followed by the sample planes as little-endian
32-bit floats, one channel plane after another, each row-major.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "Image",
    "DecodeError",
    "decode_image",
    "encode_image",
    "decode_raw",
    "encode_raw",
    "load_image",
    "save_image",
    "to_luminance",
]

_PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"
_RAW_MAGIC = b"IMGF"

# ITU-R BT.601 luma weights.
_LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114], dtype=np.float64)


class DecodeError(ValueError):
    """Malformed image stream.  ``offset`` is the byte position of the fault."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


@dataclass(frozen=True)
class Image:
    """Immutable raster of float32 samples in [0, 1], shape (height, width, channels)."""

    pixels: np.ndarray

    def __post_init__(self):
        px = self.pixels
        if px.ndim != 3:
            raise ValueError(f"pixels must be 3-D (H, W, C), got shape {px.shape}")
        if px.shape[2] not in (1, 3):
            raise ValueError(f"channels must be 1 or 3, got {px.shape[2]}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError(f"empty image: shape {px.shape}")
        if px.dtype != np.float32:
            raise ValueError(f"pixels must be float32, got {px.dtype}")
        if not np.isfinite(px).all():
            raise ValueError("pixels contain non-finite samples")
        if px.min() < 0.0 or px.max() > 1.0:
            raise ValueError("pixels fall outside [0, 1]")
        px.setflags(write=False)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "Image":
        """Build an image from an (H, W) or (H, W, C) array, casting to float32."""
        arr = np.asarray(arr)
        if arr.ndim == 2:
            arr = arr[:, :, np.newaxis]
        return cls(np.ascontiguousarray(arr, dtype=np.float32))

    def same_shape(self, other: "Image") -> bool:
        return self.pixels.shape == other.pixels.shape


def to_luminance(img: Image) -> Image:
    """Collapse an RGB image to BT.601 luminance; 1-channel input is returned as is."""
    if img.channels == 1:
        return img
    y = img.pixels.astype(np.float64) @ _LUMA_WEIGHTS
    return Image.from_array(np.clip(y, 0.0, 1.0))


# ---------------------------------------------------------------------------
# PNG
#
# A deliberately small codec for the subset this package needs: bit depths 8
# and 16, color types grayscale / RGB / grayscale+alpha / RGBA, no interlace,
# no palette.  Writing a codec here (rather than wrapping an imaging library)
# buys two contract points: decode errors carry exact byte offsets, and 16-bit
# samples scale to [0, 1] without an 8-bit round trip.
# ---------------------------------------------------------------------------

_COLOR_TYPE_CHANNELS = {0: 1, 2: 3, 4: 2, 6: 4}


def _read_chunks(data: bytes):
    """Yield (offset, type, payload) for each chunk, validating structure and CRCs."""
    pos = len(_PNG_SIGNATURE)
    while pos < len(data):
        if pos + 8 > len(data):
            raise DecodeError("truncated chunk header", pos)
        (length,) = struct.unpack(">I", data[pos : pos + 4])
        ctype = data[pos + 4 : pos + 8]
        if pos + 12 + length > len(data):
            raise DecodeError(f"truncated {ctype!r} chunk", pos)
        payload = data[pos + 8 : pos + 8 + length]
        (crc,) = struct.unpack(">I", data[pos + 8 + length : pos + 12 + length])
        if zlib.crc32(ctype + payload) & 0xFFFFFFFF != crc:
            raise DecodeError(f"CRC mismatch in {ctype!r} chunk", pos)
        yield pos, ctype, payload
        pos += 12 + length


def _paeth(a: int, b: int, c: int) -> int:
    p = a + b - c
    pa, pb, pc = abs(p - a), abs(p - b), abs(p - c)
    if pa <= pb and pa <= pc:
        return a
    if pb <= pc:
        return b
    return c


def _unfilter(raw: bytes, height: int, stride: int, bpp: int, offset: int) -> np.ndarray:
    """Reverse PNG scanline filtering; returns (height, stride) uint8 array."""
    if len(raw) != height * (stride + 1):
        raise DecodeError(
            f"decompressed size {len(raw)} != expected {height * (stride + 1)}", offset
        )
    out = np.zeros((height, stride), dtype=np.uint8)
    prev = np.zeros(stride, dtype=np.uint8)
    for row in range(height):
        ftype = raw[row * (stride + 1)]
        line = np.frombuffer(
            raw, dtype=np.uint8, count=stride, offset=row * (stride + 1) + 1
        ).copy()
        if ftype == 0:
            pass
        elif ftype == 1:  # Sub
            for i in range(bpp, stride):
                line[i] = (int(line[i]) + int(line[i - bpp])) & 0xFF
        elif ftype == 2:  # Up
            line += prev  # uint8 wraparound is the required mod-256 add
        elif ftype == 3:  # Average
            for i in range(stride):
                left = int(line[i - bpp]) if i >= bpp else 0
                line[i] = (int(line[i]) + ((left + int(prev[i])) >> 1)) & 0xFF
        elif ftype == 4:  # Paeth
            for i in range(stride):
                left = int(line[i - bpp]) if i >= bpp else 0
                up_left = int(prev[i - bpp]) if i >= bpp else 0
                line[i] = (int(line[i]) + _paeth(left, int(prev[i]), up_left)) & 0xFF
        else:
            raise DecodeError(f"unknown scanline filter {ftype}", offset)
        out[row] = line
        prev = line
    return out


def decode_image(data: bytes) -> Image:
    """Decode a PNG byte stream to an Image.

    Accepts 8- and 16-bit grayscale or RGB streams (alpha channels are
    dropped).  Raises :class:`DecodeError` with the offending byte offset for
    malformed input.
    """
    if not data.startswith(_PNG_SIGNATURE):
        raise DecodeError("not a PNG stream (bad signature)", 0)

    header = None
    header_offset = 0
    idat = bytearray()
    first_idat_offset = None
    saw_iend = False
    for offset, ctype, payload in _read_chunks(data):
        if ctype == b"IHDR":
            if len(payload) != 13:
                raise DecodeError("IHDR payload must be 13 bytes", offset)
            header = struct.unpack(">IIBBBBB", payload)
            header_offset = offset
        elif ctype == b"IDAT":
            if header is None:
                raise DecodeError("IDAT before IHDR", offset)
            if first_idat_offset is None:
                first_idat_offset = offset
            idat.extend(payload)
        elif ctype == b"IEND":
            saw_iend = True
            break
    if header is None:
        raise DecodeError("missing IHDR chunk", len(data))
    if not idat:
        raise DecodeError("missing IDAT data", len(data))
    if not saw_iend:
        raise DecodeError("missing IEND chunk", len(data))

    width, height, bit_depth, color_type, compression, filter_method, interlace = header
    if width == 0 or height == 0:
        raise DecodeError("zero image dimension", header_offset)
    if bit_depth not in (8, 16):
        raise DecodeError(f"unsupported bit depth {bit_depth}", header_offset)
    if color_type not in _COLOR_TYPE_CHANNELS:
        raise DecodeError(f"unsupported color type {color_type}", header_offset)
    if compression != 0 or filter_method != 0:
        raise DecodeError("unsupported compression/filter method", header_offset)
    if interlace != 0:
        raise DecodeError("interlaced streams are not supported", header_offset)

    try:
        raw = zlib.decompress(bytes(idat))
    except zlib.error as exc:
        raise DecodeError(f"corrupt IDAT stream: {exc}", first_idat_offset) from None

    n_channels = _COLOR_TYPE_CHANNELS[color_type]
    bytes_per_sample = bit_depth // 8
    bpp = n_channels * bytes_per_sample
    stride = width * bpp
    grid = _unfilter(raw, height, stride, bpp, first_idat_offset)

    if bit_depth == 8:
        samples = grid.reshape(height, width, n_channels).astype(np.float64) / 255.0
    else:
        wide = grid.reshape(height, width, n_channels, 2).astype(np.uint16)
        samples = ((wide[..., 0] << 8) | wide[..., 1]).astype(np.float64) / 65535.0

    if color_type == 4:  # gray + alpha
        samples = samples[:, :, :1]
    elif color_type == 6:  # RGBA
        samples = samples[:, :, :3]
    return Image.from_array(samples)


def _chunk(ctype: bytes, payload: bytes) -> bytes:
    return (
        struct.pack(">I", len(payload))
        + ctype
        + payload
        + struct.pack(">I", zlib.crc32(ctype + payload) & 0xFFFFFFFF)
    )


def encode_image(img: Image) -> bytes:
    """Encode an Image as an 8-bit PNG (grayscale or RGB)."""
    quantized = np.rint(img.pixels.astype(np.float64) * 255.0).astype(np.uint8)
    color_type = 0 if img.channels == 1 else 2
    ihdr = struct.pack(">IIBBBBB", img.width, img.height, 8, color_type, 0, 0, 0)
    stride_rows = quantized.reshape(img.height, img.width * img.channels)
    scanlines = bytearray()
    for row in stride_rows:
        scanlines.append(0)  # filter type None
        scanlines.extend(row.tobytes())
    return (
        _PNG_SIGNATURE
        + _chunk(b"IHDR", ihdr)
        + _chunk(b"IDAT", zlib.compress(bytes(scanlines), 6))
        + _chunk(b"IEND", b"")
    )


# ---------------------------------------------------------------------------
# Raw float tensor side-format
# ---------------------------------------------------------------------------


def encode_raw(img: Image) -> bytes:
    """Serialize to the IMGF raw tensor format (header + planar float32)."""
    header = struct.pack("<4sIII", _RAW_MAGIC, img.height, img.width, img.channels)
    planes = np.ascontiguousarray(img.pixels.transpose(2, 0, 1), dtype="<f4")
    return header + planes.tobytes()


def decode_raw(data: bytes) -> Image:
    """Parse the IMGF raw tensor format back into an Image."""
    if len(data) < 16:
        raise DecodeError("raw tensor shorter than its 16-byte header", 0)
    magic, height, width, channels = struct.unpack("<4sIII", data[:16])
    if magic != _RAW_MAGIC:
        raise DecodeError("bad raw tensor magic", 0)
    expected = 16 + height * width * channels * 4
    if len(data) != expected:
        raise DecodeError(f"raw tensor payload is {len(data)} bytes, expected {expected}", 16)
    planes = np.frombuffer(data, dtype="<f4", offset=16).reshape(channels, height, width)
    return Image.from_array(planes.transpose(1, 2, 0))


def load_image(path: str | Path) -> Image:
    """Read a .png or .imgf file."""
    path = Path(path)
    data = path.read_bytes()
    if path.suffix.lower() == ".imgf":
        return decode_raw(data)
    return decode_image(data)


def save_image(path: str | Path, img: Image) -> None:
    """Write a .png (8-bit) or .imgf file, chosen by extension."""
    path = Path(path)
    if path.suffix.lower() == ".imgf":
        path.write_bytes(encode_raw(img))
    else:
        path.write_bytes(encode_image(img))
