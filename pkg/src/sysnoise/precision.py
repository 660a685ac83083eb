"""Reduced-precision arithmetic simulation: binary16 casts and INT8
affine quantization.

Quantization follows the asymmetric min-max scheme.  For a tensor with
observed range [min, max] (after clamping min <= 0 <= max so that zero
is always exactly representable):

    s = (max - min) / (n_max - n_min)
    z = round(n_min - min / s)
    quantize:   q = clip(round(x / s) + z, n_min, n_max)
    dequantize: x' = s * (q - z)

Rounding is half away from zero.  The binary16 cast is the one place
that instead keeps IEEE ties-to-even, because that is what the hardware
does.
"""

from dataclasses import dataclass

import numpy as np

from .tensorcore import Tensor, round_half_away

FP16_MAX = 65504.0
INT8_MIN = -128
INT8_MAX = 127


class PrecisionError(ValueError):
    """Raised for non-finite inputs or out-of-range quantizer state."""


@dataclass(frozen=True)
class QuantParams:
    """Affine quantizer state for an integer target range."""

    s: float
    z: int
    n_min: int = INT8_MIN
    n_max: int = INT8_MAX

    def __post_init__(self):
        if not (self.s > 0.0 and np.isfinite(self.s)):
            raise PrecisionError(f"scale must be finite positive, got {self.s}")
        if self.n_min >= self.n_max:
            raise PrecisionError(f"empty range [{self.n_min}, {self.n_max}]")
        if not self.n_min <= self.z <= self.n_max:
            raise PrecisionError(
                f"zero point {self.z} outside [{self.n_min}, {self.n_max}]"
            )


def _float_payload(t, op):
    if t.dtype == "i8":
        raise PrecisionError(f"{op} expects a float tensor, got {t.dtype}")
    data = t.data.astype(np.float64)
    if not np.isfinite(data).all():
        raise PrecisionError(f"{op} requires finite values")
    return data


def cast_fp16(t):
    """Narrow a float tensor to binary16 values, kept in f32 storage.

    IEEE round-to-nearest-even, as performed by the conversion hardware.
    Magnitudes above the binary16 maximum (65504) are an error rather
    than an infinity so pipelines fail loudly.
    """
    data = _float_payload(t, "cast_fp16")
    over = np.abs(data) > FP16_MAX
    if over.any():
        worst = float(np.abs(data).max())
        raise OverflowError(f"|{worst}| exceeds binary16 range {FP16_MAX}")
    narrowed = t.data.astype(np.float16).astype(np.float32)
    return Tensor("f16", t.shape, narrowed)


def calibrate_minmax(t, n_min=INT8_MIN, n_max=INT8_MAX):
    """Min-max calibration over all elements of a float tensor.

    The observed range is widened to include zero.  A tensor whose
    widened range collapses (only possible when every value is zero)
    gets the declared degenerate parameters s = 1, z = 0.
    """
    data = _float_payload(t, "calibrate_minmax")
    lo = min(float(data.min()), 0.0)
    hi = max(float(data.max()), 0.0)
    if hi == lo:
        return QuantParams(1.0, 0, n_min, n_max)
    s = (hi - lo) / (n_max - n_min)
    z = int(round_half_away(n_min - lo / s))
    z = max(n_min, min(n_max, z))
    return QuantParams(s, z, n_min, n_max)


def quantize(t, q):
    """Affine-quantize a float tensor to i8 per the given parameters."""
    if not (INT8_MIN <= q.n_min and q.n_max <= INT8_MAX):
        raise PrecisionError(f"range [{q.n_min}, {q.n_max}] exceeds i8 storage")
    data = _float_payload(t, "quantize")
    codes = round_half_away(data / q.s) + q.z
    codes = np.clip(codes, q.n_min, q.n_max)
    return Tensor("i8", t.shape, codes.astype(np.int8))


def dequantize(t, q):
    """Map i8 codes back to floats: s * (code - z)."""
    if t.dtype != "i8":
        raise PrecisionError(f"dequantize expects i8, got {t.dtype}")
    data = q.s * (t.data.astype(np.float64) - q.z)
    return Tensor("f32", t.shape, data.astype(np.float32))
