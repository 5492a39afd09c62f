"""Portable pixmap IO, bilinear resize, and CLAHE preprocessing.

Images are 8-bit, row-major, interleaved, 1 (gray) or 3 (RGB) channels.
CLAHE operates on the luma channel of an integer BT.601 luma/chroma
transform so hue is preserved for color inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ImageFormatError(ValueError):
    """Malformed pixmap payload; message carries the byte offset."""


@dataclass
class Image:
    width: int
    height: int
    channels: int
    pixels: np.ndarray  # uint8, shape (height, width, channels)

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.uint8).reshape(
            self.height, self.width, self.channels)
        if self.channels not in (1, 3):
            raise ValueError(f"channels must be 1 or 3, got {self.channels}")


@dataclass
class ClaheConfig:
    tiles: int = 8
    clip_limit: float = 2.0
    bins: int = 256

    def __post_init__(self):
        if self.tiles < 1:
            raise ValueError("tiles must be >= 1")
        if self.clip_limit < 1.0:
            raise ValueError("clip_limit must be >= 1")


# ---------------------------------------------------------------------------
# PPM (P6) / PGM (P5) binary, maxval 255


def _next_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    n = len(buf)
    while pos < n:
        c = buf[pos:pos + 1]
        if c == b"#":  # comment runs to end of line
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    if pos >= n:
        raise ImageFormatError(f"truncated header at byte {pos}")
    start = pos
    while pos < n and not buf[pos:pos + 1].isspace():
        pos += 1
    return buf[start:pos], pos


def read_ppm(data: bytes) -> Image:
    """Parse binary P6 (RGB) or P5 (gray) with maxval 255."""
    magic, pos = _next_token(data, 0)
    if magic == b"P6":
        channels = 3
    elif magic == b"P5":
        channels = 1
    else:
        raise ImageFormatError(f"unsupported magic {magic!r} at byte 0")
    fields = []
    for _ in range(3):
        tok, pos = _next_token(data, pos)
        try:
            fields.append(int(tok))
        except ValueError:
            raise ImageFormatError(f"non-numeric header field {tok!r} at byte {pos - len(tok)}") from None
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise ImageFormatError(f"invalid dimensions {width}x{height} in header (byte {pos})")
    if maxval != 255:
        raise ImageFormatError(f"unsupported maxval {maxval} at byte {pos}")
    pos += 1  # exactly one whitespace byte separates header from payload
    need = width * height * channels
    payload = data[pos:pos + need]
    if len(payload) < need:
        raise ImageFormatError(f"truncated payload at byte {pos + len(payload)}: "
                               f"need {need} bytes, have {len(payload)}")
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, channels)
    return Image(width, height, channels, pixels.copy())


def write_ppm(img: Image) -> bytes:
    magic = b"P6" if img.channels == 3 else b"P5"
    header = b"%s\n%d %d\n255\n" % (magic, img.width, img.height)
    return header + img.pixels.tobytes()


# ---------------------------------------------------------------------------
# bilinear resize, half-pixel centers


def resize_bilinear(img: Image, target: int) -> Image:
    if target < 1:
        raise ValueError("target size must be >= 1")
    if img.width < 1 or img.height < 1:
        raise ValueError("cannot resize an empty image")
    src = img.pixels.astype(np.float64)
    ys = (np.arange(target) + 0.5) * (img.height / target) - 0.5
    xs = (np.arange(target) + 0.5) * (img.width / target) - 0.5
    y0 = np.clip(np.floor(ys).astype(int), 0, img.height - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, img.width - 1)
    y1 = np.minimum(y0 + 1, img.height - 1)
    x1 = np.minimum(x0 + 1, img.width - 1)
    wy = np.clip(ys - y0, 0.0, 1.0)[:, None, None]
    wx = np.clip(xs - x0, 0.0, 1.0)[None, :, None]
    top = src[y0][:, x0] * (1 - wx) + src[y0][:, x1] * wx
    bot = src[y1][:, x0] * (1 - wx) + src[y1][:, x1] * wx
    out = top * (1 - wy) + bot * wy
    pixels = np.clip(np.rint(out), 0, 255).astype(np.uint8)
    return Image(target, target, img.channels, pixels)


# ---------------------------------------------------------------------------
# luma/chroma transform (BT.601, /256 integer approximation)


def rgb_to_ycbcr(pixels: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    p = pixels.astype(np.int32)
    r, g, b = p[..., 0], p[..., 1], p[..., 2]
    y = (77 * r + 150 * g + 29 * b + 128) >> 8
    cb = ((-43 * r - 85 * g + 128 * b + 128) >> 8) + 128
    cr = ((128 * r - 107 * g - 21 * b + 128) >> 8) + 128
    return y, cb, cr


def ycbcr_to_rgb(y: np.ndarray, cb: np.ndarray, cr: np.ndarray) -> np.ndarray:
    y = y.astype(np.int32)
    db, dr = cb.astype(np.int32) - 128, cr.astype(np.int32) - 128
    r = y + ((359 * dr + 128) >> 8)
    g = y - ((88 * db + 183 * dr + 128) >> 8)
    b = y + ((454 * db + 128) >> 8)
    return np.clip(np.stack([r, g, b], axis=-1), 0, 255).astype(np.uint8)


# ---------------------------------------------------------------------------
# CLAHE


def _tile_lut(values: np.ndarray, config: ClaheConfig) -> np.ndarray:
    """Clipped-histogram equalization transfer function for one tile."""
    bins = config.bins
    hist = np.bincount(values.ravel(), minlength=bins).astype(np.float64)
    total = values.size
    clip = config.clip_limit * total / bins
    excess = np.maximum(hist - clip, 0.0).sum()
    hist = np.minimum(hist, clip) + excess / bins  # uniform redistribution
    cdf = np.cumsum(hist)
    midpoint = cdf - hist / 2.0  # bin-center CDF keeps constant inputs fixed
    return np.clip(np.rint(255.0 * midpoint / total), 0, 255).astype(np.uint8)


def _tile_edges(extent: int, tiles: int) -> np.ndarray:
    return np.rint(np.linspace(0, extent, tiles + 1)).astype(int)


def clahe(img: Image, config: ClaheConfig) -> Image:
    if img.width < config.tiles or img.height < config.tiles:
        raise ValueError(f"tile grid {config.tiles}x{config.tiles} larger than "
                         f"{img.width}x{img.height} image")
    if img.channels == 3:
        luma, cb, cr = rgb_to_ycbcr(img.pixels)
    else:
        luma = img.pixels[..., 0].astype(np.int32)
    luma = np.clip(luma, 0, 255)

    t = config.tiles
    ye = _tile_edges(img.height, t)
    xe = _tile_edges(img.width, t)
    luts = np.empty((t, t, config.bins), dtype=np.uint8)
    cy = np.empty(t)
    cx = np.empty(t)
    for i in range(t):
        cy[i] = (ye[i] + ye[i + 1] - 1) / 2.0
        for j in range(t):
            luts[i, j] = _tile_lut(luma[ye[i]:ye[i + 1], xe[j]:xe[j + 1]], config)
    for j in range(t):
        cx[j] = (xe[j] + xe[j + 1] - 1) / 2.0

    # bilinear blend of the four surrounding tile mappings, clamped at borders
    yy = np.arange(img.height, dtype=np.float64)
    xx = np.arange(img.width, dtype=np.float64)
    iy0 = np.clip(np.searchsorted(cy, yy, side="right") - 1, 0, t - 1)
    ix0 = np.clip(np.searchsorted(cx, xx, side="right") - 1, 0, t - 1)
    iy1 = np.minimum(iy0 + 1, t - 1)
    ix1 = np.minimum(ix0 + 1, t - 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        wy = np.where(iy1 > iy0, (yy - cy[iy0]) / (cy[iy1] - cy[iy0]), 0.0)
        wx = np.where(ix1 > ix0, (xx - cx[ix0]) / (cx[ix1] - cx[ix0]), 0.0)
    wy = np.clip(wy, 0.0, 1.0)[:, None]
    wx = np.clip(wx, 0.0, 1.0)[None, :]

    a = iy0[:, None]
    b = iy1[:, None]
    c = ix0[None, :]
    d = ix1[None, :]
    v = luma
    blended = ((1 - wy) * (1 - wx) * luts[a, c, v] + (1 - wy) * wx * luts[a, d, v]
               + wy * (1 - wx) * luts[b, c, v] + wy * wx * luts[b, d, v])
    eq = np.clip(np.rint(blended), 0, 255).astype(np.int32)

    if img.channels == 3:
        pixels = ycbcr_to_rgb(eq, cb, cr)
    else:
        pixels = eq.astype(np.uint8)[..., None]
    return Image(img.width, img.height, img.channels, pixels)
