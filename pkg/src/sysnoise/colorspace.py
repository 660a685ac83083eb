"""Studio-range BT.601 color conversion and 4:2:0 chroma (re)sampling.

Forward transform (RGB in [0,255] to Y in [16,235], U/V in [16,240]):

    Y = round( 0.256788 R + 0.504129 G + 0.097906 B) +  16
    U = round(-0.148223 R - 0.290993 G + 0.439216 B) + 128
    V = round( 0.439216 R - 0.367788 G - 0.071427 B) + 128

Two inverse routes are kept deliberately distinct because deployed
stacks disagree on them: a float route and the classic 8-bit fixed-point
route.  With C = Y - 16, D = U - 128, E = V - 128:

    float:  R = clip(round(1.164383 C               + 1.596027 E))
            G = clip(round(1.164383 C - 0.391762 D  - 0.812968 E))
            B = clip(round(1.164383 C + 2.017232 D))

    fixed:  R = clip((298 C           + 409 E + 128) >> 8)
            G = clip((298 C - 100 D   - 208 E + 128) >> 8)
            B = clip((298 C + 516 D           + 128) >> 8)

The shift is arithmetic.  Both routes are exposed as-is; nothing here
tries to reconcile them, the residue between them is the measurand.
"""

from dataclasses import dataclass

import numpy as np

from .tensorcore import (
    LAYOUT_RGB,
    LAYOUT_YUV420,
    LAYOUT_YUV444,
    ImageBuffer,
    ImageFormatError,
    round_half_away,
)

PATH_444_FLOAT = "yuv444_float"
PATH_444_FIXED = "yuv444_fixed"
PATH_420_FLOAT = "yuv420_float"
PATH_420_FIXED = "yuv420_fixed"
ROUNDTRIP_PATHS = (PATH_444_FLOAT, PATH_444_FIXED, PATH_420_FLOAT, PATH_420_FIXED)


@dataclass(frozen=True)
class YuvImage:
    """Planar YUV raster; 4:2:0 chroma planes are ceil-halved per axis."""

    layout: str
    y: np.ndarray
    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        if self.layout not in (LAYOUT_YUV444, LAYOUT_YUV420):
            raise ImageFormatError(f"bad YUV layout {self.layout!r}")
        for name in ("y", "u", "v"):
            plane = np.ascontiguousarray(getattr(self, name), dtype=np.uint8)
            if plane.ndim != 2:
                raise ImageFormatError(f"plane {name} must be 2-D")
            plane.setflags(write=False)
            object.__setattr__(self, name, plane)
        h, w = self.y.shape
        want = (h, w) if self.layout == LAYOUT_YUV444 else ((h + 1) // 2, (w + 1) // 2)
        if self.u.shape != want or self.v.shape != want:
            raise ImageFormatError(
                f"chroma shape {self.u.shape}/{self.v.shape} != {want} "
                f"for {self.layout}"
            )

    @property
    def width(self):
        return self.y.shape[1]

    @property
    def height(self):
        return self.y.shape[0]

    def to_buffer(self):
        flat = np.concatenate(
            [self.y.reshape(-1), self.u.reshape(-1), self.v.reshape(-1)]
        )
        return ImageBuffer(self.width, self.height, self.layout, flat)


def rgb_to_yuv444(img):
    """Forward BT.601 studio-range transform of an rgb raster."""
    if img.layout != LAYOUT_RGB:
        raise ImageFormatError(f"expected rgb input, got {img.layout}")
    rgb = img.rgb().astype(np.float64)
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    y = round_half_away(0.256788 * r + 0.504129 * g + 0.097906 * b) + 16
    u = round_half_away(-0.148223 * r - 0.290993 * g + 0.439216 * b) + 128
    v = round_half_away(0.439216 * r - 0.367788 * g - 0.071427 * b) + 128
    return YuvImage(
        LAYOUT_YUV444, y.astype(np.uint8), u.astype(np.uint8), v.astype(np.uint8)
    )


def _require_444(yuv, op):
    if yuv.layout != LAYOUT_YUV444:
        raise ImageFormatError(f"{op} expects yuv444 input, got {yuv.layout}")


def yuv_to_rgb_float(yuv):
    """Float inverse transform; rounds half away from zero, clips to [0,255]."""
    _require_444(yuv, "yuv_to_rgb_float")
    c = yuv.y.astype(np.float64) - 16.0
    d = yuv.u.astype(np.float64) - 128.0
    e = yuv.v.astype(np.float64) - 128.0
    r = round_half_away(1.164383 * c + 1.596027 * e)
    g = round_half_away(1.164383 * c - 0.391762 * d - 0.812968 * e)
    b = round_half_away(1.164383 * c + 2.017232 * d)
    rgb = np.stack([r, g, b], axis=-1)
    return ImageBuffer.from_rgb(np.clip(rgb, 0, 255).astype(np.uint8))


def yuv_to_rgb_fixed(yuv):
    """8-bit fixed-point inverse transform (arithmetic shift, clip)."""
    _require_444(yuv, "yuv_to_rgb_fixed")
    c = yuv.y.astype(np.int32) - 16
    d = yuv.u.astype(np.int32) - 128
    e = yuv.v.astype(np.int32) - 128
    r = (298 * c + 409 * e + 128) >> 8
    g = (298 * c - 100 * d - 208 * e + 128) >> 8
    b = (298 * c + 516 * d + 128) >> 8
    rgb = np.stack([r, g, b], axis=-1)
    return ImageBuffer.from_rgb(np.clip(rgb, 0, 255).astype(np.uint8))


def _fold_2x2(plane):
    """Mean over 2x2 blocks, edge blocks averaging whatever cells exist."""
    h, w = plane.shape
    rows = np.arange(0, h, 2)
    cols = np.arange(0, w, 2)
    sums = np.add.reduceat(
        np.add.reduceat(plane.astype(np.float64), rows, axis=0), cols, axis=1
    )
    rcount = np.minimum(rows + 2, h) - rows
    ccount = np.minimum(cols + 2, w) - cols
    counts = np.outer(rcount, ccount)
    return round_half_away(sums / counts).astype(np.uint8)


def subsample_420(yuv):
    """4:4:4 -> 4:2:0 by 2x2 block mean of each chroma plane."""
    _require_444(yuv, "subsample_420")
    return YuvImage(LAYOUT_YUV420, yuv.y, _fold_2x2(yuv.u), _fold_2x2(yuv.v))


def upsample_420(yuv):
    """4:2:0 -> 4:4:4 by sample replication of each chroma plane."""
    if yuv.layout != LAYOUT_YUV420:
        raise ImageFormatError(f"upsample_420 expects yuv420, got {yuv.layout}")
    h, w = yuv.y.shape
    up = [
        np.repeat(np.repeat(p, 2, axis=0), 2, axis=1)[:h, :w] for p in (yuv.u, yuv.v)
    ]
    return YuvImage(LAYOUT_YUV444, yuv.y, up[0], up[1])


def color_roundtrip(img, path):
    """RGB -> YUV -> RGB over one of the four named conversion routes."""
    if path not in ROUNDTRIP_PATHS:
        raise ImageFormatError(f"unknown color path {path!r}")
    yuv = rgb_to_yuv444(img)
    if path in (PATH_420_FLOAT, PATH_420_FIXED):
        yuv = upsample_420(subsample_420(yuv))
    if path in (PATH_444_FLOAT, PATH_420_FLOAT):
        return yuv_to_rgb_float(yuv)
    return yuv_to_rgb_fixed(yuv)
