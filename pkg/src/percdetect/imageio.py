"""Portable graymap (PGM, P2/P5) input and output, and the pixel <-> intensity map."""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .lattice import Lattice
from .noise import DetectorDevice, ObservedImage, detector_truncate


class PGMError(ValueError):
    pass


@dataclass(frozen=True)
class GrayscaleImage:
    """``pixels[y, x]`` with ``0 <= pixel <= maxval``."""

    width: int
    height: int
    maxval: int
    pixels: np.ndarray

    def __post_init__(self):
        if self.width < 1 or self.height < 1 or not 0 < self.maxval < 65536:
            raise PGMError(f"invalid dimensions {self.width}x{self.height} or maxval {self.maxval}")
        px = np.asarray(self.pixels, dtype=np.int64)
        if px.shape != (self.height, self.width):
            raise PGMError(f"pixel array shape {px.shape} != ({self.height}, {self.width})")
        if px.min() < 0 or px.max() > self.maxval:
            raise PGMError(f"pixel values must lie in [0, {self.maxval}]")
        object.__setattr__(self, "pixels", px)


_WS = b" \t\n\r\v\f"


def _header_tokens(data: bytes, count: int):
    """First ``count`` whitespace-separated header tokens after the magic, skipping comments.

    Returns the tokens and the offset just past the last one.
    """
    tokens, pos, n = [], 2, len(data)
    while len(tokens) < count:
        while pos < n and (data[pos] in _WS or data[pos] == ord("#")):
            if data[pos] == ord("#"):
                while pos < n and data[pos] not in b"\r\n":
                    pos += 1
            else:
                pos += 1
        start = pos
        while pos < n and data[pos] not in _WS and data[pos] != ord("#"):
            pos += 1
        if start == pos:
            raise PGMError("malformed header: unexpected end of file before " + ("width", "height", "maxval")[len(tokens)])
        tokens.append(data[start:pos])
    return tokens, pos


def parse_pgm(data: bytes) -> GrayscaleImage:
    magic = data[:2]
    if magic not in (b"P2", b"P5"):
        raise PGMError(f"bad magic number {magic!r}: expected b'P2' or b'P5'")
    if len(data) > 2 and data[2] not in _WS:
        raise PGMError("malformed header: magic number must be followed by whitespace")
    tokens, pos = _header_tokens(data, 3)
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError:
        raise PGMError(f"malformed header: non-integer field in {[t.decode('latin-1') for t in tokens]}") from None
    if width < 1 or height < 1:
        raise PGMError(f"malformed header: dimensions {width}x{height} must be positive")
    if not 0 < maxval < 65536:
        raise PGMError(f"malformed header: maxval {maxval} outside 1..65535")
    count = width * height
    if magic == b"P5":
        if pos >= len(data) or data[pos] not in _WS:
            raise PGMError("malformed header: expected a single whitespace byte before the raster")
        raster = data[pos + 1 :]
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        need = count * dtype.itemsize
        if len(raster) < need:
            raise PGMError("unexpected end of pixel data")
        pixels = np.frombuffer(raster[:need], dtype=dtype).astype(np.int64)
    else:
        body = data[pos:]
        fields = body.split()
        if len(fields) < count:
            raise PGMError("unexpected end of pixel data")
        try:
            pixels = np.array([int(f) for f in fields[:count]], dtype=np.int64)
        except ValueError:
            raise PGMError("malformed pixel data: non-integer sample") from None
    if pixels.size and (pixels.min() < 0 or pixels.max() > maxval):
        raise PGMError(f"pixel value exceeds maxval {maxval}")
    return GrayscaleImage(width, height, maxval, pixels.reshape(height, width))


def load_pgm(path) -> GrayscaleImage:
    with open(path, "rb") as fh:
        return parse_pgm(fh.read())


def encode_pgm(img: GrayscaleImage, plain: bool = False) -> bytes:
    header = f"{'P2' if plain else 'P5'}\n{img.width} {img.height}\n{img.maxval}\n".encode("ascii")
    if plain:
        rows = [" ".join(str(int(v)) for v in row) for row in img.pixels]
        return header + ("\n".join(rows) + "\n").encode("ascii")
    dtype = ">u2" if img.maxval > 255 else "u1"
    return header + img.pixels.astype(dtype).tobytes()


def save_pgm(img: GrayscaleImage, path, plain: bool = False) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_pgm(img, plain))


def image_to_observed(
    img: GrayscaleImage,
    r: float,
    baseline: Optional[float] = None,
    N: Optional[int] = None,
    sigma: float = 1.0,
) -> ObservedImage:
    """``Y = r (pixel - baseline) / baseline`` on the centered ``N x N`` crop, clamped to ``[-r, r]``.

    The default baseline is mid-gray ``maxval / 2``, so black maps to ``-r``
    and white to ``r``.
    """
    if not r > 0:
        raise ValueError(f"detector range r must be positive, got {r}")
    b = img.maxval / 2.0 if baseline is None else float(baseline)
    if not b > 0:
        raise ValueError(f"baseline must be positive, got {b}")
    if N is None:
        N = min(img.width, img.height)
    if N > img.width or N > img.height:
        raise ValueError(f"N={N} exceeds the {img.width}x{img.height} image")
    top = (img.height - N) // 2
    left = (img.width - N) // 2
    crop = img.pixels[top : top + N, left : left + N].astype(float)
    raw = ObservedImage(Lattice(N), (crop - b) / b * r, sigma)
    return detector_truncate(raw, DetectorDevice(r))


def observed_to_image(values, r: float, maxval: int = 255, baseline: Optional[float] = None) -> GrayscaleImage:
    """Inverse of :func:`image_to_observed` up to rounding; quantization error is at most ``r / maxval``."""
    values = np.asarray(values, dtype=float)
    b = maxval / 2.0 if baseline is None else float(baseline)
    px = np.rint(b + np.clip(values, -r, r) / r * b).clip(0, maxval).astype(np.int64)
    return GrayscaleImage(values.shape[1], values.shape[0], maxval, px)
