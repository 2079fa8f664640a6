"""Binary netpbm images: P6 (8-bit RGB) and P5 (8-bit grey)."""

from __future__ import annotations

from pathlib import Path
from typing import Tuple, Union

import numpy as np

from ..errors import DataError

PathLike = Union[str, Path]


def to_uint8(image: np.ndarray) -> np.ndarray:
    """[0, 1] floats to bytes with round-half-even; uint8 input passes through."""
    if image.dtype == np.uint8:
        return image
    return np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def from_uint8(data: np.ndarray) -> np.ndarray:
    """Bytes to float32 in [0, 1], computed in float64 first like the generator does."""
    return (data.astype(np.float64) / 255.0).astype(np.float32)


def _encode(magic: bytes, pixels: np.ndarray) -> bytes:
    h, w = pixels.shape[:2]
    return magic + f"\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(pixels).tobytes()


def _parse_header(blob: bytes, path) -> Tuple[bytes, int, int, int]:
    """Returns (magic, width, height, offset of the pixel data)."""
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        if pos < len(blob) and blob[pos:pos + 1] == b"#":
            while pos < len(blob) and blob[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace() and blob[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise DataError(f"{path}: truncated netpbm header")
        tokens.append(blob[start:pos])
    if pos >= len(blob) or not blob[pos:pos + 1].isspace():
        raise DataError(f"{path}: malformed netpbm header")
    magic = tokens[0]
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise DataError(f"{path}: non-numeric netpbm header fields {tokens[1:]}") from None
    if w < 1 or h < 1:
        raise DataError(f"{path}: bad image dimensions {w}x{h}")
    if maxval != 255:
        raise DataError(f"{path}: only 8-bit images are supported, maxval is {maxval}")
    return magic, w, h, pos + 1


def _read(path: PathLike, magic: bytes, channels: int, shape=None) -> np.ndarray:
    blob = Path(path).read_bytes()
    found, w, h, off = _parse_header(blob, path)
    if found != magic:
        raise DataError(f"{path}: expected magic {magic.decode()}, found {found.decode(errors='replace')!r}")
    if shape is not None and (h, w) != tuple(shape):
        raise DataError(f"{path}: image is {h}x{w}, expected {shape[0]}x{shape[1]}")
    n = w * h * channels
    if len(blob) - off != n:
        raise DataError(f"{path}: {len(blob) - off} pixel bytes, expected {n}")
    data = np.frombuffer(blob, dtype=np.uint8, offset=off, count=n)
    return data.reshape((h, w, channels) if channels > 1 else (h, w))


def write_ppm(path: PathLike, image: np.ndarray) -> None:
    """Write a 3 x H x W image in [0, 1] (or uint8) as P6."""
    if image.ndim != 3 or image.shape[0] != 3:
        raise DataError(f"PPM needs a 3 x H x W image, got shape {image.shape}")
    Path(path).write_bytes(_encode(b"P6", to_uint8(image).transpose(1, 2, 0)))


def read_ppm(path: PathLike, shape=None) -> np.ndarray:
    """3 x H x W float32 in [0, 1]; ``shape`` optionally pins (H, W)."""
    return from_uint8(_read(path, b"P6", 3, shape)).transpose(2, 0, 1).copy()


def write_pgm(path: PathLike, image: np.ndarray) -> None:
    """Write an H x W array in [0, 1] (or uint8) as P5."""
    if image.ndim != 2:
        raise DataError(f"PGM needs an H x W array, got shape {image.shape}")
    Path(path).write_bytes(_encode(b"P5", to_uint8(image)))


def read_pgm(path: PathLike, shape=None) -> np.ndarray:
    """Raw H x W uint8 pixels."""
    return _read(path, b"P5", 1, shape).copy()


def write_mask(path: PathLike, mask: np.ndarray) -> None:
    if not np.isin(mask, (0, 1)).all():
        raise DataError(f"{path}: mask must be binary")
    write_pgm(path, (np.asarray(mask) * 255).astype(np.uint8))


def read_mask(path: PathLike, shape=None) -> np.ndarray:
    """Binary mask stored as 0/255; anything else is rejected."""
    raw = read_pgm(path, shape)
    if not np.isin(raw, (0, 255)).all():
        raise DataError(f"{path}: mask pixels must be 0 or 255")
    return (raw // 255).astype(np.uint8)
