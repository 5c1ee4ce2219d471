import struct
import zlib

import numpy as np
import pytest

from pqbench.imaging import (
    DecodeError,
    Image,
    decode_image,
    decode_raw,
    encode_image,
    encode_raw,
    to_luminance,
)


def png_bytes(array8, bit_depth=8, color_type=None):
    """Independent PNG writer for decoder tests (filter 0, big-endian samples)."""
    arr = np.asarray(array8)
    if arr.ndim == 2:
        arr = arr[:, :, np.newaxis]
    h, w, c = arr.shape
    if color_type is None:
        color_type = {1: 0, 2: 4, 3: 2, 4: 6}[c]
    ihdr = struct.pack(">IIBBBBB", w, h, bit_depth, color_type, 0, 0, 0)
    raw = bytearray()
    for row in range(h):
        raw.append(0)
        if bit_depth == 8:
            raw.extend(arr[row].astype(np.uint8).tobytes())
        else:
            raw.extend(arr[row].astype(">u2").tobytes())

    def chunk(ctype, payload):
        return (
            struct.pack(">I", len(payload))
            + ctype
            + payload
            + struct.pack(">I", zlib.crc32(ctype + payload) & 0xFFFFFFFF)
        )

    return (
        b"\x89PNG\r\n\x1a\n"
        + chunk(b"IHDR", ihdr)
        + chunk(b"IDAT", zlib.compress(bytes(raw)))
        + chunk(b"IEND", b"")
    )


class TestDecode:
    def test_single_white_pixel(self):
        img = decode_image(png_bytes(np.array([[255]], dtype=np.uint8)))
        assert img.pixels.shape == (1, 1, 1)
        assert img.pixels[0, 0, 0] == 1.0

    def test_single_black_pixel(self):
        img = decode_image(png_bytes(np.array([[0]], dtype=np.uint8)))
        assert img.pixels[0, 0, 0] == 0.0

    def test_rgb_values_scale(self):
        arr = np.array([[[51, 102, 255]]], dtype=np.uint8)
        img = decode_image(png_bytes(arr))
        np.testing.assert_allclose(img.pixels[0, 0], [51 / 255, 102 / 255, 1.0])

    def test_sixteen_bit_scaling(self):
        arr = np.array([[0, 32768, 65535]], dtype=np.uint16).reshape(1, 3)
        img = decode_image(png_bytes(arr, bit_depth=16))
        np.testing.assert_allclose(
            img.pixels[0, :, 0], [0.0, 32768 / 65535, 1.0], atol=1e-9
        )

    def test_alpha_discarded(self):
        arr = np.zeros((2, 2, 4), dtype=np.uint8)
        arr[..., 0] = 200
        arr[..., 3] = 7
        img = decode_image(png_bytes(arr))
        assert img.channels == 3
        np.testing.assert_allclose(img.pixels[..., 0], 200 / 255)

    def test_round_trip_random_8bit(self):
        rng = np.random.default_rng(99)
        for _ in range(20):
            h, w = rng.integers(1, 24, size=2)
            c = int(rng.choice([1, 3]))
            source = rng.integers(0, 256, size=(h, w, c), dtype=np.uint8)
            img = Image.from_array(source.astype(np.float32) / 255.0)
            again = decode_image(encode_image(img))
            assert np.array_equal(again.pixels, img.pixels)

    def test_decoder_reads_filtered_scanlines(self):
        # Sub/Up/Average/Paeth filters, written by an independent encoder path.
        rng = np.random.default_rng(3)
        arr = rng.integers(0, 256, size=(6, 5, 3), dtype=np.uint8)
        raw = bytearray()
        prev = np.zeros(15, dtype=np.int16)
        for row_idx, ftype in enumerate([0, 1, 2, 3, 4, 2]):
            line = arr[row_idx].reshape(-1).astype(np.int16)
            raw.append(ftype)
            enc = np.zeros_like(line)
            for i in range(15):
                left = line[i - 3] if i >= 3 else 0
                up = prev[i]
                up_left = prev[i - 3] if i >= 3 else 0
                if ftype == 0:
                    pred = 0
                elif ftype == 1:
                    pred = left
                elif ftype == 2:
                    pred = up
                elif ftype == 3:
                    pred = (left + up) >> 1
                else:
                    p = left + up - up_left
                    pa, pb, pc = abs(p - left), abs(p - up), abs(p - up_left)
                    pred = left if pa <= pb and pa <= pc else (up if pb <= pc else up_left)
                enc[i] = (line[i] - pred) % 256
            raw.extend(enc.astype(np.uint8).tobytes())
            prev = line

        def chunk(ctype, payload):
            return (
                struct.pack(">I", len(payload))
                + ctype
                + payload
                + struct.pack(">I", zlib.crc32(ctype + payload) & 0xFFFFFFFF)
            )

        data = (
            b"\x89PNG\r\n\x1a\n"
            + chunk(b"IHDR", struct.pack(">IIBBBBB", 5, 6, 8, 2, 0, 0, 0))
            + chunk(b"IDAT", zlib.compress(bytes(raw)))
            + chunk(b"IEND", b"")
        )
        img = decode_image(data)
        np.testing.assert_array_equal(
            np.rint(img.pixels * 255).astype(np.uint8), arr
        )

    def test_bad_signature_offset_zero(self):
        with pytest.raises(DecodeError) as err:
            decode_image(b"not a png at all")
        assert err.value.offset == 0

    def test_crc_error_carries_chunk_offset(self):
        data = bytearray(png_bytes(np.array([[7]], dtype=np.uint8)))
        # corrupt one payload byte of the IHDR chunk (starts right after signature)
        data[8 + 8] ^= 0xFF
        with pytest.raises(DecodeError) as err:
            decode_image(bytes(data))
        assert err.value.offset == 8

    def test_truncated_stream(self):
        data = png_bytes(np.array([[7]], dtype=np.uint8))
        with pytest.raises(DecodeError):
            decode_image(data[: len(data) - 6])


class TestRawFormat:
    def test_header_layout(self):
        img = Image.from_array(np.zeros((2, 3, 1), np.float32))
        blob = encode_raw(img)
        assert blob[:4] == b"IMGF"
        h, w, c = struct.unpack("<III", blob[4:16])
        assert (h, w, c) == (2, 3, 1)
        assert len(blob) == 16 + 2 * 3 * 4

    def test_round_trip(self):
        rng = np.random.default_rng(5)
        img = Image.from_array(rng.random((7, 9, 3)).astype(np.float32))
        again = decode_raw(encode_raw(img))
        assert np.array_equal(again.pixels, img.pixels)

    def test_bad_magic(self):
        with pytest.raises(DecodeError):
            decode_raw(b"XXXX" + b"\x00" * 12)


class TestImageType:
    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            Image.from_array(np.array([[1.5]], dtype=np.float32))

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            Image.from_array(np.array([[np.nan]], dtype=np.float32))

    def test_rejects_bad_channel_count(self):
        with pytest.raises(ValueError):
            Image.from_array(np.zeros((2, 2, 2), np.float32))

    def test_immutable(self):
        img = Image.from_array(np.zeros((2, 2), np.float32))
        with pytest.raises(ValueError):
            img.pixels[0, 0, 0] = 1.0


class TestLuminance:
    def test_gray_identity(self):
        img = Image.from_array(np.full((3, 3), 0.25, np.float32))
        assert to_luminance(img) is img

    def test_white_maps_to_one(self):
        img = Image.from_array(np.ones((2, 2, 3), np.float32))
        np.testing.assert_allclose(to_luminance(img).pixels, 1.0)

    def test_pure_red_weight(self):
        arr = np.zeros((1, 1, 3), np.float32)
        arr[0, 0, 0] = 1.0
        np.testing.assert_allclose(
            to_luminance(Image.from_array(arr)).pixels[0, 0, 0], 0.299, atol=1e-7
        )
