"""Image I/O: 8-bit PNG and binary PPM, plus unit-domain conversion.

The PNG codec is deliberately small: 8-bit depth only, grayscale / RGB /
gray+alpha / RGBA color types (alpha is dropped, everything is promoted to
RGB), no palette, no interlacing, no ancillary-chunk interpretation.
Decoding handles all five scanline filters; encoding always writes RGB with
filter 0. Compression itself comes from zlib.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .tensor import Tensor

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"
_COLOR_CHANNELS = {0: 1, 2: 3, 4: 2, 6: 4}
DEFAULT_EXTENSIONS = (".png", ".ppm")


@dataclass
class ImageBuffer:
    """Decoded 8-bit sRGB image, interleaved, shape height x width x 3."""

    width: int
    height: int
    data: np.ndarray

    def __post_init__(self) -> None:
        if self.data.dtype != np.uint8 or self.data.shape != (self.height, self.width, 3):
            raise ValueError(
                f"ImageBuffer: need uint8 {self.height}x{self.width}x3 data, "
                f"got {self.data.dtype} {self.data.shape}"
            )


class ImageFormatError(ValueError):
    """Unsupported or malformed image file."""


def _paeth(a: int, b: int, c: int) -> int:
    p = a + b - c
    pa, pb, pc = abs(p - a), abs(p - b), abs(p - c)
    if pa <= pb and pa <= pc:
        return a
    if pb <= pc:
        return b
    return c


def _unfilter(raw: bytes, width: int, height: int, channels: int) -> np.ndarray:
    stride = width * channels
    if len(raw) != (stride + 1) * height:
        raise ImageFormatError(
            f"PNG: decompressed size {len(raw)} does not match {height} rows of {stride + 1} bytes"
        )
    out = np.empty((height, stride), dtype=np.uint8)
    prev = [0] * stride
    for y in range(height):
        offset = y * (stride + 1)
        ftype = raw[offset]
        row = list(raw[offset + 1 : offset + 1 + stride])
        if ftype == 0:
            rec = row
        elif ftype == 1:  # Sub
            rec = row
            for i in range(channels, stride):
                rec[i] = (rec[i] + rec[i - channels]) & 0xFF
        elif ftype == 2:  # Up
            rec = [(row[i] + prev[i]) & 0xFF for i in range(stride)]
        elif ftype == 3:  # Average
            rec = row
            for i in range(stride):
                left = rec[i - channels] if i >= channels else 0
                rec[i] = (rec[i] + ((left + prev[i]) >> 1)) & 0xFF
        elif ftype == 4:  # Paeth
            rec = row
            for i in range(stride):
                left = rec[i - channels] if i >= channels else 0
                diag = prev[i - channels] if i >= channels else 0
                rec[i] = (rec[i] + _paeth(left, prev[i], diag)) & 0xFF
        else:
            raise ImageFormatError(f"PNG: unknown filter type {ftype} in row {y}")
        out[y] = rec
        prev = rec
    return out.reshape(height, width, channels)


def _to_rgb(pixels: np.ndarray) -> np.ndarray:
    channels = pixels.shape[2]
    if channels == 1:
        return np.repeat(pixels, 3, axis=2)
    if channels == 2:
        return np.repeat(pixels[:, :, :1], 3, axis=2)
    if channels == 3:
        return pixels
    return pixels[:, :, :3].copy()


def decode_png(blob: bytes) -> ImageBuffer:
    if blob[:8] != PNG_SIGNATURE:
        raise ImageFormatError("PNG: bad signature")
    pos = 8
    header = None
    idat = bytearray()
    saw_end = False
    while pos + 8 <= len(blob):
        length, ctype = struct.unpack(">I4s", blob[pos : pos + 8])
        pos += 8
        if pos + length + 4 > len(blob):
            raise ImageFormatError(f"PNG: truncated {ctype.decode('latin1')} chunk")
        body = blob[pos : pos + length]
        pos += length + 4  # body + CRC (not verified)
        if ctype == b"IHDR":
            header = struct.unpack(">IIBBBBB", body)
        elif ctype == b"PLTE":
            raise ImageFormatError("PNG: palette images are not supported")
        elif ctype == b"IDAT":
            idat.extend(body)
        elif ctype == b"IEND":
            saw_end = True
            break
    if header is None:
        raise ImageFormatError("PNG: missing IHDR chunk")
    if not saw_end:
        raise ImageFormatError("PNG: missing IEND chunk")
    width, height, depth, color, compression, filt, interlace = header
    if width < 1 or height < 1:
        raise ImageFormatError(f"PNG: bad dimensions {width}x{height}")
    if depth != 8:
        raise ImageFormatError(f"PNG: only 8-bit depth is supported, got {depth}")
    if color == 3:
        raise ImageFormatError("PNG: palette images are not supported")
    if color not in _COLOR_CHANNELS:
        raise ImageFormatError(f"PNG: unsupported color type {color}")
    if interlace != 0:
        raise ImageFormatError("PNG: interlaced images are not supported")
    if compression != 0 or filt != 0:
        raise ImageFormatError("PNG: unsupported compression or filter method")
    if not idat:
        raise ImageFormatError("PNG: no image data chunks")
    try:
        raw = zlib.decompress(bytes(idat))
    except zlib.error as exc:
        raise ImageFormatError(f"PNG: corrupt image data ({exc})") from None
    pixels = _unfilter(raw, width, height, _COLOR_CHANNELS[color])
    return ImageBuffer(width=width, height=height, data=_to_rgb(pixels))


def _chunk(ctype: bytes, body: bytes) -> bytes:
    crc = zlib.crc32(ctype + body) & 0xFFFFFFFF
    return struct.pack(">I", len(body)) + ctype + body + struct.pack(">I", crc)


def encode_png(image: ImageBuffer) -> bytes:
    ihdr = struct.pack(">IIBBBBB", image.width, image.height, 8, 2, 0, 0, 0)
    rows = bytearray()
    for y in range(image.height):
        rows.append(0)
        rows.extend(image.data[y].tobytes())
    return b"".join(
        [
            PNG_SIGNATURE,
            _chunk(b"IHDR", ihdr),
            _chunk(b"IDAT", zlib.compress(bytes(rows))),
            _chunk(b"IEND", b""),
        ]
    )


def _read_ppm_token(blob: bytes, pos: int) -> tuple[bytes, int]:
    n = len(blob)
    while pos < n:
        if blob[pos : pos + 1].isspace():
            pos += 1
        elif blob[pos : pos + 1] == b"#":
            while pos < n and blob[pos] not in (0x0A, 0x0D):
                pos += 1
        else:
            break
    start = pos
    while pos < n and not blob[pos : pos + 1].isspace() and blob[pos : pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise ImageFormatError("PPM: truncated header")
    return blob[start:pos], pos


def decode_ppm(blob: bytes) -> ImageBuffer:
    magic, pos = _read_ppm_token(blob, 0)
    if magic != b"P6":
        raise ImageFormatError(f"PPM: expected P6, got {magic.decode('latin1', 'replace')}")
    fields = []
    for _ in range(3):
        token, pos = _read_ppm_token(blob, pos)
        try:
            fields.append(int(token))
        except ValueError:
            raise ImageFormatError(f"PPM: non-numeric header field {token!r}") from None
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise ImageFormatError(f"PPM: bad dimensions {width}x{height}")
    if maxval != 255:
        raise ImageFormatError(f"PPM: only maxval 255 is supported, got {maxval}")
    pos += 1  # exactly one whitespace byte separates header and pixels
    need = width * height * 3
    pixels = blob[pos : pos + need]
    if len(pixels) != need:
        raise ImageFormatError(f"PPM: expected {need} pixel bytes, got {len(pixels)}")
    data = np.frombuffer(pixels, dtype=np.uint8).reshape(height, width, 3).copy()
    return ImageBuffer(width=width, height=height, data=data)


def encode_ppm(image: ImageBuffer) -> bytes:
    header = f"P6\n{image.width} {image.height}\n255\n".encode("ascii")
    return header + image.data.tobytes()


def load_image(path: Union[str, Path]) -> ImageBuffer:
    """Decode a PNG or PPM file, sniffing the format from its magic bytes."""
    blob = Path(path).read_bytes()
    if blob[:8] == PNG_SIGNATURE:
        return decode_png(blob)
    if blob[:2] == b"P6":
        return decode_ppm(blob)
    raise ImageFormatError(f"{path}: not a supported PNG or PPM file")


def save_image(path: Union[str, Path], image: ImageBuffer) -> None:
    """Encode by file extension: .png or .ppm."""
    p = Path(path)
    suffix = p.suffix.lower()
    if suffix == ".png":
        p.write_bytes(encode_png(image))
    elif suffix == ".ppm":
        p.write_bytes(encode_ppm(image))
    else:
        raise ValueError(f"save_image: unsupported extension {suffix!r} (use .png or .ppm)")


def to_unit(image: ImageBuffer) -> Tensor:
    """8-bit interleaved pixels -> float64 3xHxW tensor in [0, 1]."""
    chw = image.data.astype(np.float64).transpose(2, 0, 1) / 255.0
    return Tensor(chw)


def from_unit(t: Tensor, clamp: bool = True) -> ImageBuffer:
    """Float 3xHxW tensor in [0, 1] -> 8-bit pixels, rounding half up.

    With clamp=False, out-of-range values raise instead of saturating.
    """
    data = t.data if isinstance(t, Tensor) else np.asarray(t, dtype=np.float64)
    if data.ndim != 3 or data.shape[0] != 3:
        raise ValueError(f"from_unit: expected 3xHxW tensor, got shape {data.shape}")
    if clamp:
        data = np.clip(data, 0.0, 1.0)
    elif data.size and (data.min() < 0.0 or data.max() > 1.0):
        raise ValueError(
            f"from_unit: values outside [0, 1] (min {data.min():.6g}, max {data.max():.6g}) "
            "and clamping is disabled"
        )
    scaled = np.floor(data * 255.0 + 0.5)
    pixels = scaled.astype(np.uint8).transpose(1, 2, 0)
    return ImageBuffer(width=pixels.shape[1], height=pixels.shape[0], data=np.ascontiguousarray(pixels))


def scan_corpus(
    directory: Union[str, Path], extensions: Sequence[str] = DEFAULT_EXTENSIONS
) -> list[Path]:
    """Image files directly inside ``directory``, sorted by name."""
    d = Path(directory)
    if not d.is_dir():
        raise NotADirectoryError(f"scan_corpus: {d} is not a readable directory")
    wanted = {e.lower() for e in extensions}
    return sorted(
        (p for p in d.iterdir() if p.is_file() and p.suffix.lower() in wanted),
        key=lambda p: p.name,
    )
