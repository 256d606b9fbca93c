"""Binary PPM (P6) reading and writing plus nearest-neighbor resizing.

The engine consumes 8-bit RGB images. PPM keeps the reader dependency-free
and exact; callers needing other formats convert externally.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np


class ImageError(ValueError):
    """Malformed or unsupported image data."""


@dataclass(frozen=True)
class ImageRGB:
    """8-bit RGB image, pixels row-major as packed R,G,B triples."""

    width: int
    height: int
    pixels: bytes

    def __post_init__(self):
        if len(self.pixels) != 3 * self.width * self.height:
            raise ImageError(
                f"pixel buffer holds {len(self.pixels)} bytes, expected "
                f"{3 * self.width * self.height} for {self.width}x{self.height}"
            )

    def to_array(self) -> np.ndarray:
        """View as an (height, width, 3) uint8 array (copy)."""
        return (
            np.frombuffer(self.pixels, dtype=np.uint8)
            .reshape(self.height, self.width, 3)
            .copy()
        )


def from_array(arr: np.ndarray) -> ImageRGB:
    arr = np.asarray(arr, dtype=np.uint8)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ImageError("expected an (h, w, 3) array")
    return ImageRGB(width=arr.shape[1], height=arr.shape[0], pixels=arr.tobytes())


def _read_header_tokens(data: bytes, count: int, start: int) -> tuple[list[int], int]:
    """Read `count` whitespace-separated integers, honoring '#' comments."""
    tokens: list[int] = []
    i = start
    while len(tokens) < count:
        while i < len(data) and data[i : i + 1].isspace():
            i += 1
        if i < len(data) and data[i : i + 1] == b"#":
            while i < len(data) and data[i] != 0x0A:
                i += 1
            continue
        j = i
        while j < len(data) and not data[j : j + 1].isspace():
            j += 1
        if j == i:
            raise ImageError("truncated PPM header")
        try:
            tokens.append(int(data[i:j]))
        except ValueError:
            raise ImageError(f"bad PPM header token {data[i:j]!r}") from None
        i = j
    return tokens, i


def parse_ppm(data: bytes) -> ImageRGB:
    """Parse binary PPM (P6, maxval 255) bytes."""
    if not data.startswith(b"P6"):
        raise ImageError("not a binary PPM: magic 'P6' missing")
    (width, height, maxval), i = _read_header_tokens(data, 3, start=2)
    if width <= 0 or height <= 0:
        raise ImageError(f"bad PPM dimensions {width}x{height}")
    if maxval != 255:
        raise ImageError(f"only maxval 255 is supported, got {maxval}")
    i += 1  # single whitespace byte separates header and payload
    need = 3 * width * height
    payload = data[i : i + need]
    if len(payload) < need:
        raise ImageError(
            f"PPM payload truncated: {len(payload)} of {need} bytes present"
        )
    return ImageRGB(width=width, height=height, pixels=payload)


def read_ppm(path: str | os.PathLike) -> ImageRGB:
    with open(path, "rb") as f:
        return parse_ppm(f.read())


def write_ppm(path: str | os.PathLike, image: ImageRGB) -> None:
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (image.width, image.height))
        f.write(image.pixels)


def resize_nearest(image: ImageRGB, width: int, height: int) -> ImageRGB:
    """Nearest-neighbor resize; identity when the size already matches."""
    if (image.width, image.height) == (width, height):
        return image
    if width <= 0 or height <= 0:
        raise ImageError(f"bad target size {width}x{height}")
    src = image.to_array()
    ys = (np.arange(height) * image.height) // height
    xs = (np.arange(width) * image.width) // width
    return from_array(src[ys][:, xs])


def load_image(path: str | os.PathLike, target_size: int) -> ImageRGB:
    """Read a P6 PPM and nearest-neighbor resize it to a square target."""
    return resize_nearest(read_ppm(path), target_size, target_size)
