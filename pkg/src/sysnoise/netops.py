"""Network-side spatial ops where frameworks disagree: ceil/floor pooling
and feature-map upsampling.

Max-pool output extent for input W, kernel K, stride S, padding P:

    floor mode:  O = floor((W - K + 2P) / S) + 1
    ceil mode:   O = ceil((W - K + 2P) / S) + 1

Ceil mode lets the last window run off-bounds, but a window that would
*start* at or beyond the image-plus-left-padding extent is dropped so no
window is empty.  Padded and off-bounds cells never win the max; they
are treated as minus infinity, which keeps padding out of the statistics
entirely.

Upsampling supports the two index conventions in the wild:

    nearest              src = floor(dst * n_src / n_dst)
    bilinear half_pixel  src = (dst + 0.5) * n_src / n_dst - 0.5
    bilinear corners     src = dst * (n_src - 1) / (n_dst - 1)

The corners mapping needs at least 2 samples on both sides of each axis.
"""

from dataclasses import dataclass

import numpy as np

from .tensorcore import Tensor

ALIGN_HALF_PIXEL = "half_pixel"
ALIGN_CORNERS = "corners"
UPSAMPLE_KINDS = ("nearest", "bilinear")


class NetOpsError(ValueError):
    """Raised for invalid pool/upsample geometry."""


@dataclass(frozen=True)
class PoolConfig:
    """Square max-pool configuration applied to both spatial axes."""

    k: int
    s: int
    p: int = 0
    ceil_mode: bool = False

    def __post_init__(self):
        if self.k < 1 or self.s < 1:
            raise NetOpsError(f"kernel/stride must be >= 1, got k={self.k} s={self.s}")
        if not 0 <= self.p < self.k:
            raise NetOpsError(f"padding {self.p} outside [0, k)")


def pool_output_shape(w, cfg):
    """Output extent along one axis of length ``w``."""
    span = w - cfg.k + 2 * cfg.p
    if span < 0:
        raise NetOpsError(f"extent {w} too small for k={cfg.k} p={cfg.p}")
    if cfg.ceil_mode:
        o = -(-span // cfg.s) + 1
        # Drop a final window that would start past the image plus left pad.
        if (o - 1) * cfg.s >= w + cfg.p:
            o -= 1
    else:
        o = span // cfg.s + 1
    return o


def _require_float_nchw(t, op):
    if t.dtype == "i8":
        raise NetOpsError(f"{op} expects a float tensor, got {t.dtype}")
    if len(t.shape) != 4:
        raise NetOpsError(f"{op} expects NCHW rank 4, got shape {t.shape}")


def maxpool2d(t, cfg):
    """Max-pool an NCHW float tensor; excluded cells never win."""
    _require_float_nchw(t, "maxpool2d")
    n, c, h, w = t.shape
    oh = pool_output_shape(h, cfg)
    ow = pool_output_shape(w, cfg)
    # Window o covers padded rows [o*s - p, o*s - p + k); gather through a
    # minus-infinity canvas wide enough for the last ceil-mode window.
    canvas_h = max(h + cfg.p, (oh - 1) * cfg.s - cfg.p + cfg.k)
    canvas_w = max(w + cfg.p, (ow - 1) * cfg.s - cfg.p + cfg.k)
    canvas = np.full((n, c, cfg.p + canvas_h, cfg.p + canvas_w), -np.inf)
    canvas[:, :, cfg.p : cfg.p + h, cfg.p : cfg.p + w] = t.data
    out = np.full((n, c, oh, ow), -np.inf)
    for ki in range(cfg.k):
        for kj in range(cfg.k):
            block = canvas[
                :,
                :,
                ki : ki + oh * cfg.s : cfg.s,
                kj : kj + ow * cfg.s : cfg.s,
            ]
            np.maximum(out, block, out=out)
    if np.isneginf(out).any():
        raise NetOpsError("empty pooling window (all cells excluded)")
    return Tensor("f32", (n, c, oh, ow), out.astype(np.float32))


def upsample_nearest(t, out_h, out_w):
    """Nearest-index upsample of an NCHW float tensor."""
    _require_float_nchw(t, "upsample_nearest")
    if out_h < 1 or out_w < 1:
        raise NetOpsError(f"non-positive output size {out_h}x{out_w}")
    n, c, h, w = t.shape
    rows = np.minimum((np.arange(out_h) * h) // out_h, h - 1)
    cols = np.minimum((np.arange(out_w) * w) // out_w, w - 1)
    out = t.data[:, :, rows[:, None], cols[None, :]]
    return Tensor("f32", (n, c, out_h, out_w), out.astype(np.float32))


def _source_grid(n_src, n_dst, align):
    if align == ALIGN_HALF_PIXEL:
        src = (np.arange(n_dst) + 0.5) * (n_src / n_dst) - 0.5
    elif align == ALIGN_CORNERS:
        if n_src < 2 or n_dst < 2:
            raise NetOpsError(
                f"corners mapping needs extents >= 2, got {n_src}->{n_dst}"
            )
        src = np.arange(n_dst) * ((n_src - 1) / (n_dst - 1))
    else:
        raise NetOpsError(f"unknown align mode {align!r}")
    i0 = np.floor(src).astype(np.int64)
    frac = src - i0
    i0c = np.clip(i0, 0, n_src - 1)
    i1c = np.clip(i0 + 1, 0, n_src - 1)
    return i0c, i1c, frac


def upsample_bilinear(t, out_h, out_w, align=ALIGN_HALF_PIXEL):
    """Bilinear upsample of an NCHW float tensor under the given mapping."""
    _require_float_nchw(t, "upsample_bilinear")
    if out_h < 1 or out_w < 1:
        raise NetOpsError(f"non-positive output size {out_h}x{out_w}")
    n, c, h, w = t.shape
    r0, r1, fy = _source_grid(h, out_h, align)
    c0, c1, fx = _source_grid(w, out_w, align)
    data = t.data.astype(np.float64)
    v00 = data[:, :, r0[:, None], c0[None, :]]
    v01 = data[:, :, r0[:, None], c1[None, :]]
    v10 = data[:, :, r1[:, None], c0[None, :]]
    v11 = data[:, :, r1[:, None], c1[None, :]]
    fy = fy[:, None]
    fx = fx[None, :]
    top = v00 * (1.0 - fx) + v01 * fx
    bot = v10 * (1.0 - fx) + v11 * fx
    out = top * (1.0 - fy) + bot * fy
    return Tensor("f32", (n, c, out_h, out_w), out.astype(np.float32))
