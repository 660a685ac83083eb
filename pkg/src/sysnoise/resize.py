"""Separable image resampling with explicit kernel and support conventions.

Coordinate mapping is the half-pixel rule used by the major image
libraries: destination index i samples the source at

    map_coord(i, scale) = (i + 0.5) * scale - 0.5,   scale = n_src / n_dst

Deployed resizers disagree on how kernels react to downscaling, so both
behaviors are first-class here:

    fixed   evaluate the kernel at unit support regardless of scale
            (framework-style resize)
    scaled  widen the kernel support by the downscale factor and
            renormalize (antialiased, library-style resize)

On upscale the two coincide.  Resampling is a separable two-pass
weighted sum (horizontal, then vertical) in float64; taps past the edge
clamp to the border pixel and every tap row is renormalized to sum 1.
The single integer conversion at the end rounds half away from zero and
clips to [0, 255].

``area_resize`` is the coverage-average operator: each output pixel is
the exact mean of the source area it covers, with fractional pixels
weighted by coverage.  Area upscaling is not defined; such requests fall
back to fixed-support bilinear.
"""

import math
from dataclasses import dataclass

import numpy as np

from .tensorcore import ImageBuffer, ImageFormatError, round_half_away

CONV_FIXED = "fixed"
CONV_SCALED = "scaled"
CONVENTIONS = (CONV_FIXED, CONV_SCALED)

_BICUBIC_A = (-0.5, -0.75)
_LANCZOS_LOBES = 3


class ResizeError(ValueError):
    """Raised for unknown kernels/conventions or bad output geometry."""


@dataclass(frozen=True)
class ResizeKernel:
    """A named 1-D reconstruction kernel with its half-width support."""

    kind: str
    a: float = -0.5  # bicubic sharpness parameter
    lobes: int = _LANCZOS_LOBES  # lanczos window count

    def __post_init__(self):
        if self.kind not in _SUPPORT:
            raise ResizeError(f"unknown kernel {self.kind!r}")
        if self.kind == "bicubic" and self.a not in _BICUBIC_A:
            raise ResizeError(f"bicubic a must be one of {_BICUBIC_A}, got {self.a}")
        if self.kind == "lanczos" and self.lobes != _LANCZOS_LOBES:
            raise ResizeError(f"lanczos is fixed at {_LANCZOS_LOBES} lobes")

    @property
    def support(self):
        return _SUPPORT[self.kind]


_SUPPORT = {
    "nearest": 0.5,
    "bilinear": 1.0,
    "bicubic": 2.0,
    "box": 0.5,
    "hamming": 1.0,
    "lanczos": float(_LANCZOS_LOBES),
}

KERNEL_NAMES = tuple(_SUPPORT)


def map_coord(dst, scale):
    """Half-pixel source coordinate for destination index ``dst``."""
    return (dst + 0.5) * scale - 0.5


def _values(kernel, xs):
    """Vectorized kernel evaluation at signed offsets ``xs``."""
    xs = np.asarray(xs, dtype=np.float64)
    ax = np.abs(xs)
    if kernel.kind == "nearest":
        # Half-open on the low side so an exact tie picks the higher index.
        return ((xs > -0.5) & (xs <= 0.5)).astype(np.float64)
    if kernel.kind == "bilinear":
        return np.maximum(0.0, 1.0 - ax)
    if kernel.kind == "bicubic":
        a = kernel.a
        inner = (a + 2.0) * ax**3 - (a + 3.0) * ax**2 + 1.0
        outer = a * ax**3 - 5.0 * a * ax**2 + 8.0 * a * ax - 4.0 * a
        return np.where(ax <= 1.0, inner, np.where(ax <= 2.0, outer, 0.0))
    if kernel.kind == "box":
        return (ax <= 0.5).astype(np.float64)
    if kernel.kind == "hamming":
        w = np.sinc(xs) * (0.54 + 0.46 * np.cos(np.pi * xs))
        return np.where(ax >= 1.0, 0.0, w)
    # lanczos
    w = np.sinc(xs) * np.sinc(xs / kernel.lobes)
    return np.where(ax >= kernel.lobes, 0.0, w)


def kernel_weight(kernel, x):
    """Kernel value at a single signed offset."""
    return float(_values(kernel, np.float64(x)))


def tap_matrix(n_src, n_dst, kernel, convention):
    """Weight matrix (n_dst, n_src) for one axis.

    Rows are the effective per-output tap weights after edge clamping
    and renormalization, so each row sums to 1.
    """
    if convention not in CONVENTIONS:
        raise ResizeError(f"unknown convention {convention!r}")
    if n_dst < 1:
        raise ResizeError(f"non-positive output extent {n_dst}")
    scale = n_src / n_dst
    fscale = max(scale, 1.0) if convention == CONV_SCALED else 1.0
    support = kernel.support * fscale
    mat = np.zeros((n_dst, n_src), dtype=np.float64)
    for i in range(n_dst):
        center = map_coord(i, scale)
        lo = math.floor(center - support)
        hi = math.ceil(center + support)
        js = np.arange(lo, hi + 1)
        w = _values(kernel, (js - center) / fscale)
        total = w.sum()
        if total <= 0.0:
            raise ResizeError(f"empty tap set at output index {i}")
        np.add.at(mat[i], np.clip(js, 0, n_src - 1), w / total)
    return mat


def _apply(arr, wx, wy):
    # Horizontal pass contracts W, vertical pass contracts H; result lands
    # as (3, out_w, out_h) and is transposed back.
    arr = np.tensordot(arr, wx, axes=([1], [1]))
    arr = np.tensordot(arr, wy, axes=([0], [1]))
    return arr.transpose(2, 1, 0)


def _finish(arr):
    return np.clip(round_half_away(arr), 0, 255).astype(np.uint8)


def resize(img, out_w, out_h, kernel, convention=CONV_FIXED):
    """Resample an rgb raster to (out_w, out_h) with the given kernel."""
    if img.layout != "rgb":
        raise ImageFormatError(f"resize expects rgb input, got {img.layout}")
    if out_w < 1 or out_h < 1:
        raise ResizeError(f"non-positive output size {out_w}x{out_h}")
    wx = tap_matrix(img.width, out_w, kernel, convention)
    wy = tap_matrix(img.height, out_h, kernel, convention)
    out = _apply(img.rgb().astype(np.float64), wx, wy)
    return ImageBuffer.from_rgb(_finish(out))


def _area_matrix(n_src, n_dst):
    scale = n_src / n_dst
    mat = np.zeros((n_dst, n_src), dtype=np.float64)
    for i in range(n_dst):
        lo = i * scale
        hi = (i + 1) * scale
        js = np.arange(math.floor(lo), min(math.ceil(hi), n_src))
        w = np.minimum(hi, js + 1.0) - np.maximum(lo, js.astype(np.float64))
        w = np.maximum(w, 0.0)
        total = w.sum()
        if total <= 0.0:
            raise ResizeError(f"empty coverage at output index {i}")
        mat[i, js] = w / total
    return mat


def area_resize(img, out_w, out_h):
    """Coverage-average downscale; upscale requests use bilinear instead."""
    if img.layout != "rgb":
        raise ImageFormatError(f"area_resize expects rgb input, got {img.layout}")
    if out_w < 1 or out_h < 1:
        raise ResizeError(f"non-positive output size {out_w}x{out_h}")
    if out_w > img.width or out_h > img.height:
        return resize(img, out_w, out_h, ResizeKernel("bilinear"), CONV_FIXED)
    wx = _area_matrix(img.width, out_w)
    wy = _area_matrix(img.height, out_h)
    out = _apply(img.rgb().astype(np.float64), wx, wy)
    return ImageBuffer.from_rgb(_finish(out))
