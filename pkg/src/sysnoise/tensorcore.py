"""Core rasters, tensors and their byte-level formats.

Two payload kinds move between pipeline stages: 8-bit rasters
(:class:`ImageBuffer`) on the image side and small numeric arrays
(:class:`Tensor`) on the network side.  Both are frozen after
construction so stage outputs can be shared and memoized safely.

Tensors serialize to a minimal container so intermediate results can be
staged through files and diffed byte-for-byte without an ecosystem
serializer in the loop.  Layout, all little-endian:

    offset  size  field
    0       4     magic ``SNT1``
    4       1     dtype code (1 = f32, 2 = f16, 3 = i8)
    5       1     rank (1..4, rank 0 is rejected)
    6       4*r   extents, u32 each
    ...           payload, C order

f16 tensors are stored in float32 arrays in memory (every value exactly
representable in binary16) and hit disk as 2-byte IEEE halves, so the
round trip is bit-identical.

Rounding note: every integer conversion in this package rounds half away
from zero (:func:`round_half_away`), except inside the binary16 cast
which keeps IEEE ties-to-even.
"""

import numpy as np

LAYOUT_RGB = "rgb"
LAYOUT_YUV444 = "yuv444"
LAYOUT_YUV420 = "yuv420"
_LAYOUTS = (LAYOUT_RGB, LAYOUT_YUV444, LAYOUT_YUV420)

_MAGIC = b"SNT1"
_DTYPE_CODE = {"f32": 1, "f16": 2, "i8": 3}
_CODE_DTYPE = {v: k for k, v in _DTYPE_CODE.items()}
_MAX_RANK = 4


class TensorFormatError(ValueError):
    """Raised for malformed tensor containers or invalid construction."""


class ImageFormatError(ValueError):
    """Raised for malformed rasters or image files."""


def round_half_away(x):
    """Round to nearest integer, ties away from zero.

    Works on scalars and arrays; returns float values (callers cast).
    """
    x = np.asarray(x)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def _plane_counts(width, height, layout):
    if layout == LAYOUT_RGB:
        return 3 * width * height
    if layout == LAYOUT_YUV444:
        return 3 * width * height
    # 4:2:0 chroma planes are ceil-halved per axis
    cw = (width + 1) // 2
    ch = (height + 1) // 2
    return width * height + 2 * cw * ch


class ImageBuffer:
    """Immutable 8-bit raster.

    ``rgb`` is interleaved; the YUV layouts are planar (Y plane first,
    then U, then V).  ``samples`` is a flat uint8 array whose length is
    fixed by width, height and layout.
    """

    __slots__ = ("width", "height", "layout", "samples")

    def __init__(self, width, height, layout, samples):
        if width < 1 or height < 1:
            raise ImageFormatError(f"bad dimensions {width}x{height}")
        if layout not in _LAYOUTS:
            raise ImageFormatError(f"unknown layout {layout!r}")
        samples = np.ascontiguousarray(samples, dtype=np.uint8).reshape(-1)
        expected = _plane_counts(width, height, layout)
        if samples.size != expected:
            raise ImageFormatError(
                f"sample count {samples.size} != {expected} for "
                f"{width}x{height} {layout}"
            )
        samples = samples.copy()
        samples.setflags(write=False)
        object.__setattr__(self, "width", width)
        object.__setattr__(self, "height", height)
        object.__setattr__(self, "layout", layout)
        object.__setattr__(self, "samples", samples)

    def __setattr__(self, name, value):
        raise AttributeError("ImageBuffer is immutable")

    def __eq__(self, other):
        if not isinstance(other, ImageBuffer):
            return NotImplemented
        return (
            self.width == other.width
            and self.height == other.height
            and self.layout == other.layout
            and bool(np.array_equal(self.samples, other.samples))
        )

    def __repr__(self):
        return f"ImageBuffer({self.width}x{self.height}, {self.layout})"

    @classmethod
    def from_rgb(cls, arr):
        """Build from an (H, W, 3) uint8 array."""
        arr = np.asarray(arr)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ImageFormatError(f"expected (H, W, 3), got {arr.shape}")
        h, w = arr.shape[:2]
        return cls(w, h, LAYOUT_RGB, arr.astype(np.uint8).reshape(-1))

    def rgb(self):
        """Return the raster as an (H, W, 3) uint8 array (rgb layout only)."""
        if self.layout != LAYOUT_RGB:
            raise ImageFormatError(f"rgb() on {self.layout} buffer")
        return self.samples.reshape(self.height, self.width, 3)


class Tensor:
    """Immutable numeric array with an explicit wire dtype.

    dtype ``f32``/``f16`` carry float32 data (f16 values are exactly
    binary16-representable), ``i8`` carries int8.  Rank is 1..4.
    """

    __slots__ = ("dtype", "shape", "data")

    def __init__(self, dtype, shape, data):
        if dtype not in _DTYPE_CODE:
            raise TensorFormatError(f"unknown dtype {dtype!r}")
        shape = tuple(int(e) for e in shape)
        if not 1 <= len(shape) <= _MAX_RANK:
            raise TensorFormatError(f"rank {len(shape)} outside 1..{_MAX_RANK}")
        if any(e < 1 for e in shape):
            raise TensorFormatError(f"non-positive extent in {shape}")
        want = np.int8 if dtype == "i8" else np.float32
        data = np.ascontiguousarray(data, dtype=want).reshape(shape).copy()
        if dtype == "f16":
            narrowed = data.astype(np.float16).astype(np.float32)
            if not np.array_equal(narrowed, data):
                raise TensorFormatError("f16 tensor holds non-binary16 values")
        data.setflags(write=False)
        object.__setattr__(self, "dtype", dtype)
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "data", data)

    def __setattr__(self, name, value):
        raise AttributeError("Tensor is immutable")

    def __eq__(self, other):
        if not isinstance(other, Tensor):
            return NotImplemented
        return (
            self.dtype == other.dtype
            and self.shape == other.shape
            and bool(np.array_equal(self.data, other.data))
        )

    def __repr__(self):
        return f"Tensor({self.dtype}, shape={self.shape})"


def image_to_tensor(img):
    """RGB raster -> f32 NCHW tensor in [0, 255], no normalization."""
    arr = img.rgb().astype(np.float32)
    return Tensor("f32", (1, 3, img.height, img.width), arr.transpose(2, 0, 1)[None])


def save_tensor(tensor, sink):
    """Write the container format to a binary stream; returns byte count."""
    extents = b"".join(
        int(e).to_bytes(4, "little", signed=False) for e in tensor.shape
    )
    if tensor.dtype == "f32":
        payload = tensor.data.astype("<f4").tobytes()
    elif tensor.dtype == "f16":
        payload = tensor.data.astype("<f2").tobytes()
    else:
        payload = tensor.data.astype("b").tobytes()
    blob = (
        _MAGIC
        + bytes([_DTYPE_CODE[tensor.dtype], len(tensor.shape)])
        + extents
        + payload
    )
    sink.write(blob)
    return len(blob)


def _read_exact(source, n, what):
    buf = source.read(n)
    if buf is None or len(buf) != n:
        raise TensorFormatError(f"truncated container while reading {what}")
    return buf


def load_tensor(source):
    """Read one tensor from a binary stream."""
    magic = _read_exact(source, 4, "magic")
    if magic != _MAGIC:
        raise TensorFormatError(f"bad magic {magic!r}")
    code, rank = _read_exact(source, 2, "header")
    if code not in _CODE_DTYPE:
        raise TensorFormatError(f"unknown dtype code {code}")
    if not 1 <= rank <= _MAX_RANK:
        raise TensorFormatError(f"rank {rank} outside 1..{_MAX_RANK}")
    dtype = _CODE_DTYPE[code]
    raw = _read_exact(source, 4 * rank, "extents")
    shape = tuple(
        int.from_bytes(raw[4 * i : 4 * i + 4], "little") for i in range(rank)
    )
    if any(e < 1 for e in shape):
        raise TensorFormatError(f"non-positive extent in {shape}")
    count = int(np.prod(shape))
    width = {"f32": 4, "f16": 2, "i8": 1}[dtype]
    payload = _read_exact(source, count * width, "payload")
    if dtype == "f32":
        data = np.frombuffer(payload, dtype="<f4").astype(np.float32)
    elif dtype == "f16":
        data = np.frombuffer(payload, dtype="<f2").astype(np.float32)
    else:
        data = np.frombuffer(payload, dtype="b").astype(np.int8)
    return Tensor(dtype, shape, data.reshape(shape))


def write_ppm(img, sink):
    """Write an rgb raster as binary PPM (P6, maxval 255); returns byte count."""
    if img.layout != LAYOUT_RGB:
        raise ImageFormatError(f"PPM output requires rgb layout, got {img.layout}")
    header = f"P6\n{img.width} {img.height}\n255\n".encode("ascii")
    sink.write(header)
    sink.write(img.samples.tobytes())
    return len(header) + img.samples.size


def read_ppm(source):
    """Read a binary PPM (P6, maxval 255) into an rgb raster."""
    data = source.read()
    if not data.startswith(b"P6"):
        raise ImageFormatError("not a P6 PPM")
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ImageFormatError("truncated PPM header")
        fields.append(data[start:pos])
    pos += 1  # single whitespace byte after maxval
    try:
        width, height, maxval = (int(f) for f in fields)
    except ValueError as exc:
        raise ImageFormatError(f"bad PPM header field: {exc}") from None
    if maxval != 255:
        raise ImageFormatError(f"unsupported PPM maxval {maxval}")
    need = width * height * 3
    raster = data[pos : pos + need]
    if len(raster) != need:
        raise ImageFormatError("truncated PPM raster")
    return ImageBuffer(width, height, LAYOUT_RGB, np.frombuffer(raster, np.uint8))


class DiffImage:
    """Per-sample absolute difference of two equal-shape rasters.

    ``raw`` holds |a - b| per stored sample.  ``scaled`` is a per-pixel
    view for inspection: channel-max difference stretched linearly so the
    largest difference in this image maps to 255 (all zeros when the
    rasters are identical).  Scaling is per image, so two diff images are
    not comparable by pixel value; compare ``raw`` for that.
    """

    __slots__ = ("width", "height", "layout", "raw", "scaled")

    def __init__(self, width, height, layout, raw, scaled):
        object.__setattr__(self, "width", width)
        object.__setattr__(self, "height", height)
        object.__setattr__(self, "layout", layout)
        raw = np.asarray(raw, dtype=np.uint8)
        scaled = np.asarray(scaled, dtype=np.uint8)
        raw.setflags(write=False)
        scaled.setflags(write=False)
        object.__setattr__(self, "raw", raw)
        object.__setattr__(self, "scaled", scaled)

    def __setattr__(self, name, value):
        raise AttributeError("DiffImage is immutable")

    def to_image(self):
        """Scaled view as an rgb raster (gray, suitable for write_ppm)."""
        rgb = np.repeat(self.scaled.reshape(self.height, self.width, 1), 3, axis=2)
        return ImageBuffer.from_rgb(rgb)


def diff_image(a, b):
    """Absolute per-sample difference of two rasters of equal shape/layout."""
    if (a.width, a.height, a.layout) != (b.width, b.height, b.layout):
        raise ImageFormatError(
            f"diff requires equal rasters, got {a!r} vs {b!r}"
        )
    raw = np.abs(a.samples.astype(np.int16) - b.samples.astype(np.int16))
    if a.layout == LAYOUT_RGB:
        per_pixel = raw.reshape(a.height, a.width, 3).max(axis=2)
    elif a.layout == LAYOUT_YUV444:
        per_pixel = raw.reshape(3, a.height, a.width).max(axis=0)
    else:
        # 4:2:0: replicate each chroma diff over its 2x2 block, then take
        # the channel max on the luma grid.
        n = a.width * a.height
        cw, ch = (a.width + 1) // 2, (a.height + 1) // 2
        y = raw[:n].reshape(a.height, a.width)
        u = raw[n : n + cw * ch].reshape(ch, cw)
        v = raw[n + cw * ch :].reshape(ch, cw)
        up = [
            np.repeat(np.repeat(p, 2, axis=0), 2, axis=1)[: a.height, : a.width]
            for p in (u, v)
        ]
        per_pixel = np.maximum(y, np.maximum(*up))
    peak = int(per_pixel.max())
    if peak == 0:
        scaled = np.zeros_like(per_pixel, dtype=np.uint8)
    else:
        scaled = round_half_away(per_pixel * (255.0 / peak)).astype(np.uint8)
    return DiffImage(a.width, a.height, a.layout, raw.astype(np.uint8), scaled)
