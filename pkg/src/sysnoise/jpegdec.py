"""Baseline JPEG decoding from first principles, with the inverse DCT
kernel as an explicit degree of freedom.

Only baseline sequential 8-bit Huffman JPEG is in scope, with 4:4:4 or
4:2:0 sampling and a single interleaved scan.  Progressive and
arithmetic-coded streams are detected and rejected; everything else
malformed raises a format error.  4:2:0 chroma is brought back to full
resolution by sample replication.

Two iDCT kernels are provided because deployed decoders differ exactly
here:

``idct_exact``
    The float separable inverse transform,

        f[m,n] = sum_k sum_l a(k) a(l) F[k,l]
                 cos((2m+1) k pi / 16) cos((2n+1) l pi / 16)

    with a(0) = sqrt(1/8) and a(k) = sqrt(2/8) otherwise.

``idct_fast``
    The classic 11-bit fixed-point butterfly factorization used by
    production decoders.  Intermediate scaling keeps everything in
    integers; the result differs from the rounded exact transform by at
    most one count per sample on realistic coefficient blocks.

Neither kernel applies the +128 level shift; ``decode_to_rgb`` does that
once, after the transform, then clips to [0, 255].
"""

import math
from dataclasses import dataclass

import numpy as np

from . import colorspace
from .tensorcore import LAYOUT_YUV420, LAYOUT_YUV444, ImageBuffer, round_half_away

IDCT_KINDS = ("exact", "fast")


class JpegFormatError(ValueError):
    """Malformed or truncated stream."""


class UnsupportedJpegError(ValueError):
    """Well-formed stream using a coding mode outside baseline scope."""


# Zigzag scan position -> natural (row-major) coefficient index.
_ZIGZAG = (
    0, 1, 8, 16, 9, 2, 3, 10,
    17, 24, 32, 25, 18, 11, 4, 5,
    12, 19, 26, 33, 40, 48, 41, 34,
    27, 20, 13, 6, 7, 14, 21, 28,
    35, 42, 49, 56, 57, 50, 43, 36,
    29, 22, 15, 23, 30, 37, 44, 51,
    58, 59, 52, 45, 38, 31, 39, 46,
    53, 60, 61, 54, 47, 55, 62, 63,
)

# ---------------------------------------------------------------------------
# Inverse DCT kernels


def _basis():
    k = np.arange(8).reshape(8, 1)
    m = np.arange(8).reshape(1, 8)
    c = np.cos((2 * m + 1) * k * np.pi / 16.0)
    alpha = np.full((8, 1), math.sqrt(2.0 / 8.0))
    alpha[0, 0] = math.sqrt(1.0 / 8.0)
    return alpha * c


_BASIS = _basis()


def _idct_exact_batch(blocks):
    """(N, 8, 8) coefficient blocks -> (N, 8, 8) float64 samples."""
    return _BASIS.T @ (blocks.astype(np.float64) @ _BASIS)


def idct_exact(block):
    """Exact float inverse DCT of one 8x8 coefficient block (f32 out)."""
    block = np.asarray(block, dtype=np.float64)
    if block.shape != (8, 8):
        raise ValueError(f"expected an 8x8 block, got {block.shape}")
    return _idct_exact_batch(block[None])[0].astype(np.float32)


# 11-bit fixed-point cosine constants, 2048*sqrt(2)*cos(k*pi/16).
_W1 = 2841
_W2 = 2676
_W3 = 2408
_W5 = 1609
_W6 = 1108
_W7 = 565
_R2 = 181  # 256/sqrt(2)


def _idct_fast_batch(blocks):
    """(N, 8, 8) integer coefficient blocks -> (N, 8, 8) int64 samples.

    Row pass keeps 3 fractional bits, column pass consumes them; all
    right shifts are arithmetic (floor), matching the reference integer
    implementations bit for bit.
    """
    b = blocks.astype(np.int64)

    # Row pass over all rows of all blocks at once: operand shape (N, 8).
    x0 = (b[..., 0] << 11) + 128
    x1 = b[..., 4] << 11
    x2 = b[..., 6].copy()
    x3 = b[..., 2].copy()
    x4 = b[..., 1].copy()
    x5 = b[..., 7].copy()
    x6 = b[..., 5].copy()
    x7 = b[..., 3].copy()

    x8 = _W7 * (x4 + x5)
    x4 = x8 + (_W1 - _W7) * x4
    x5 = x8 - (_W1 + _W7) * x5
    x8 = _W3 * (x6 + x7)
    x6 = x8 - (_W3 - _W5) * x6
    x7 = x8 - (_W3 + _W5) * x7

    x8 = x0 + x1
    x0 = x0 - x1
    x1 = _W6 * (x3 + x2)
    x2 = x1 - (_W2 + _W6) * x2
    x3 = x1 + (_W2 - _W6) * x3
    x1 = x4 + x6
    x4 = x4 - x6
    x6 = x5 + x7
    x5 = x5 - x7

    x7 = x8 + x3
    x8 = x8 - x3
    x3 = x0 + x2
    x0 = x0 - x2
    x2 = (_R2 * (x4 + x5) + 128) >> 8
    x4 = (_R2 * (x4 - x5) + 128) >> 8

    rows = np.empty_like(b)
    rows[..., 0] = (x7 + x1) >> 8
    rows[..., 1] = (x3 + x2) >> 8
    rows[..., 2] = (x0 + x4) >> 8
    rows[..., 3] = (x8 + x6) >> 8
    rows[..., 4] = (x8 - x6) >> 8
    rows[..., 5] = (x0 - x4) >> 8
    rows[..., 6] = (x3 - x2) >> 8
    rows[..., 7] = (x7 - x1) >> 8

    # Column pass: operand shape (N, 8) again, indexing rows this time.
    y0 = (rows[:, 0, :] << 8) + 8192
    y1 = rows[:, 4, :] << 8
    y2 = rows[:, 6, :].copy()
    y3 = rows[:, 2, :].copy()
    y4 = rows[:, 1, :].copy()
    y5 = rows[:, 7, :].copy()
    y6 = rows[:, 5, :].copy()
    y7 = rows[:, 3, :].copy()

    y8 = _W7 * (y4 + y5) + 4
    y4 = (y8 + (_W1 - _W7) * y4) >> 3
    y5 = (y8 - (_W1 + _W7) * y5) >> 3
    y8 = _W3 * (y6 + y7) + 4
    y6 = (y8 - (_W3 - _W5) * y6) >> 3
    y7 = (y8 - (_W3 + _W5) * y7) >> 3

    y8 = y0 + y1
    y0 = y0 - y1
    y1 = _W6 * (y3 + y2) + 4
    y2 = (y1 - (_W2 + _W6) * y2) >> 3
    y3 = (y1 + (_W2 - _W6) * y3) >> 3
    y1 = y4 + y6
    y4 = y4 - y6
    y6 = y5 + y7
    y5 = y5 - y7

    y7 = y8 + y3
    y8 = y8 - y3
    y3 = y0 + y2
    y0 = y0 - y2
    y2 = (_R2 * (y4 + y5) + 128) >> 8
    y4 = (_R2 * (y4 - y5) + 128) >> 8

    out = np.empty_like(b)
    out[:, 0, :] = (y7 + y1) >> 14
    out[:, 1, :] = (y3 + y2) >> 14
    out[:, 2, :] = (y0 + y4) >> 14
    out[:, 3, :] = (y8 + y6) >> 14
    out[:, 4, :] = (y8 - y6) >> 14
    out[:, 5, :] = (y0 - y4) >> 14
    out[:, 6, :] = (y3 - y2) >> 14
    out[:, 7, :] = (y7 - y1) >> 14
    return out


def idct_fast(block):
    """Fixed-point inverse DCT of one 8x8 integer coefficient block."""
    block = np.asarray(block)
    if block.shape != (8, 8):
        raise ValueError(f"expected an 8x8 block, got {block.shape}")
    if not np.issubdtype(block.dtype, np.integer):
        raise ValueError("fixed-point kernel takes integer coefficients")
    return _idct_fast_batch(block[None])[0].astype(np.int32)


# ---------------------------------------------------------------------------
# Stream structure


@dataclass
class JpegComponent:
    cid: int
    h: int
    v: int
    tq: int  # quantization table id
    td: int = 0  # DC Huffman table id (from SOS)
    ta: int = 0  # AC Huffman table id (from SOS)


@dataclass
class JpegStructure:
    width: int
    height: int
    precision: int
    components: list
    quant: dict  # tq -> (8, 8) uint16, natural order
    huffman: dict  # ("dc"|"ac", table id) -> _HuffTable
    restart_interval: int
    entropy: bytes  # scan span, byte-stuffed as on the wire


class _HuffTable:
    """Canonical Huffman table in the mincode/maxcode/valptr form."""

    __slots__ = ("mincode", "maxcode", "valptr", "values")

    def __init__(self, counts, values):
        if len(counts) != 16:
            raise JpegFormatError("Huffman table needs 16 length counts")
        if sum(counts) != len(values):
            raise JpegFormatError("Huffman value count mismatch")
        self.values = values
        self.mincode = [0] * 17
        self.maxcode = [-1] * 17
        self.valptr = [0] * 17
        code = 0
        k = 0
        for length in range(1, 17):
            if counts[length - 1] == 0:
                self.maxcode[length] = -1
            else:
                self.valptr[length] = k
                self.mincode[length] = code
                code += counts[length - 1]
                k += counts[length - 1]
                self.maxcode[length] = code - 1
            code <<= 1
        if code > (1 << 17):
            raise JpegFormatError("overlong Huffman code assignment")


_SOF_PROGRESSIVE = (0xC2, 0xC6, 0xCA, 0xCE)
_SOF_ARITHMETIC = (0xC9, 0xCA, 0xCB, 0xCD, 0xCE, 0xCF)
_SOF_OTHER = (0xC1, 0xC3, 0xC5, 0xC7)


def _u16(data, pos, what):
    if pos + 2 > len(data):
        raise JpegFormatError(f"truncated stream reading {what}")
    return (data[pos] << 8) | data[pos + 1]


def _segment(data, pos, name):
    length = _u16(data, pos, f"{name} length")
    if length < 2 or pos + length > len(data):
        raise JpegFormatError(f"truncated {name} segment")
    return data[pos + 2 : pos + length], pos + length


def _scan_entropy_end(data, pos):
    """Find the end of the entropy span: the first marker that is neither
    a stuffed zero nor a restart marker."""
    i = pos
    n = len(data)
    while i < n - 1:
        if data[i] == 0xFF and data[i + 1] != 0x00:
            if 0xD0 <= data[i + 1] <= 0xD7:
                i += 2
                continue
            return i
        i += 1
    raise JpegFormatError("entropy data runs off the end of the stream")


def parse_jpeg(data):
    """Parse segment structure without entropy-decoding the scan."""
    if len(data) < 2 or data[0] != 0xFF or data[1] != 0xD8:
        raise JpegFormatError("missing SOI marker")
    pos = 2
    quant = {}
    huffman = {}
    frame = None
    restart_interval = 0
    entropy = None

    while True:
        if pos + 2 > len(data):
            raise JpegFormatError("stream ended before EOI")
        if data[pos] != 0xFF:
            raise JpegFormatError(f"expected marker at byte {pos}")
        while pos + 1 < len(data) and data[pos + 1] == 0xFF:
            pos += 1  # optional fill bytes before a marker
        marker = data[pos + 1]
        pos += 2
        if marker == 0x00:
            raise JpegFormatError(f"invalid marker FF00 at byte {pos - 2}")
        if marker == 0xD9:  # EOI
            break
        if marker == 0x01 or 0xD0 <= marker <= 0xD7:
            raise JpegFormatError(f"stray standalone marker FF{marker:02X}")
        if marker in _SOF_PROGRESSIVE:
            raise UnsupportedJpegError("progressive JPEG is not supported")
        if marker in _SOF_ARITHMETIC or marker == 0xCC:
            raise UnsupportedJpegError("arithmetic coding is not supported")
        if marker in _SOF_OTHER:
            raise UnsupportedJpegError(f"unsupported frame type FF{marker:02X}")

        if marker == 0xC0:  # SOF0, baseline
            body, pos = _segment(data, pos, "SOF0")
            frame = _parse_sof0(body)
        elif marker == 0xC4:  # DHT
            body, pos = _segment(data, pos, "DHT")
            _parse_dht(body, huffman)
        elif marker == 0xDB:  # DQT
            body, pos = _segment(data, pos, "DQT")
            _parse_dqt(body, quant)
        elif marker == 0xDD:  # DRI
            body, pos = _segment(data, pos, "DRI")
            if len(body) != 2:
                raise JpegFormatError("bad DRI length")
            restart_interval = (body[0] << 8) | body[1]
        elif marker == 0xDA:  # SOS
            if frame is None:
                raise JpegFormatError("SOS before SOF0")
            if entropy is not None:
                raise UnsupportedJpegError("multiple scans are not supported")
            body, pos = _segment(data, pos, "SOS")
            _parse_sos(body, frame)
            end = _scan_entropy_end(data, pos)
            entropy = bytes(data[pos:end])
            pos = end
        else:
            # APPn, COM and anything else with a length field: skip.
            _, pos = _segment(data, pos, f"FF{marker:02X}")

    if frame is None:
        raise JpegFormatError("no frame header")
    if entropy is None:
        raise JpegFormatError("no scan data")
    width, height, precision, components = frame
    for comp in components:
        if comp.tq not in quant:
            raise JpegFormatError(f"component references missing DQT {comp.tq}")
        if ("dc", comp.td) not in huffman or ("ac", comp.ta) not in huffman:
            raise JpegFormatError("component references missing DHT")
    return JpegStructure(
        width, height, precision, components, quant, huffman,
        restart_interval, entropy,
    )


def _parse_sof0(body):
    if len(body) < 6:
        raise JpegFormatError("truncated SOF0")
    precision = body[0]
    if precision != 8:
        raise UnsupportedJpegError(f"{precision}-bit precision is not supported")
    height = (body[1] << 8) | body[2]
    width = (body[3] << 8) | body[4]
    ncomp = body[5]
    if width < 1 or height < 1:
        raise JpegFormatError(f"bad frame dimensions {width}x{height}")
    if len(body) != 6 + 3 * ncomp:
        raise JpegFormatError("SOF0 length mismatch")
    if ncomp not in (1, 3):
        raise UnsupportedJpegError(f"{ncomp}-component frames are not supported")
    components = []
    for i in range(ncomp):
        cid, hv, tq = body[6 + 3 * i : 9 + 3 * i]
        components.append(JpegComponent(cid, hv >> 4, hv & 0x0F, tq))
    factors = [(c.h, c.v) for c in components]
    if ncomp == 1:
        ok = factors[0] == (1, 1)
    else:
        ok = factors == [(1, 1)] * 3 or factors == [(2, 2), (1, 1), (1, 1)]
    if not ok:
        raise UnsupportedJpegError(f"unsupported sampling factors {factors}")
    return width, height, precision, components


def _parse_dht(body, huffman):
    pos = 0
    while pos < len(body):
        if pos + 17 > len(body):
            raise JpegFormatError("truncated DHT")
        tc_th = body[pos]
        tc, th = tc_th >> 4, tc_th & 0x0F
        if tc > 1 or th > 3:
            raise JpegFormatError(f"bad DHT class/id {tc}/{th}")
        counts = list(body[pos + 1 : pos + 17])
        total = sum(counts)
        if pos + 17 + total > len(body):
            raise JpegFormatError("truncated DHT values")
        values = list(body[pos + 17 : pos + 17 + total])
        huffman[("dc" if tc == 0 else "ac", th)] = _HuffTable(counts, values)
        pos += 17 + total


def _parse_dqt(body, quant):
    pos = 0
    while pos < len(body):
        pq_tq = body[pos]
        pq, tq = pq_tq >> 4, pq_tq & 0x0F
        if pq > 1 or tq > 3:
            raise JpegFormatError(f"bad DQT precision/id {pq}/{tq}")
        n = 64 * (2 if pq else 1)
        if pos + 1 + n > len(body):
            raise JpegFormatError("truncated DQT")
        raw = body[pos + 1 : pos + 1 + n]
        if pq:
            vals = [(raw[2 * i] << 8) | raw[2 * i + 1] for i in range(64)]
        else:
            vals = list(raw)
        table = np.zeros(64, dtype=np.uint16)
        for k in range(64):
            table[_ZIGZAG[k]] = vals[k]
        quant[tq] = table.reshape(8, 8)
        pos += 1 + n


def _parse_sos(body, frame):
    width, height, precision, components = frame
    if len(body) < 1:
        raise JpegFormatError("truncated SOS")
    ns = body[0]
    if ns != len(components):
        raise UnsupportedJpegError(
            f"scan covers {ns} of {len(components)} components"
        )
    if len(body) != 1 + 2 * ns + 3:
        raise JpegFormatError("SOS length mismatch")
    by_id = {c.cid: c for c in components}
    for i in range(ns):
        cs, tables = body[1 + 2 * i], body[2 + 2 * i]
        if cs not in by_id:
            raise JpegFormatError(f"scan references unknown component {cs}")
        by_id[cs].td = tables >> 4
        by_id[cs].ta = tables & 0x0F


# ---------------------------------------------------------------------------
# Entropy decoding


class _BitReader:
    """MSB-first bit reader over byte-stuffed entropy data."""

    __slots__ = ("data", "pos", "buf", "nbits")

    def __init__(self, data):
        self.data = data
        self.pos = 0
        self.buf = 0
        self.nbits = 0

    def _fill(self):
        if self.pos >= len(self.data):
            raise JpegFormatError("entropy data exhausted mid-block")
        byte = self.data[self.pos]
        self.pos += 1
        if byte == 0xFF:
            if self.pos >= len(self.data):
                raise JpegFormatError("dangling FF in entropy data")
            follow = self.data[self.pos]
            if follow == 0x00:
                self.pos += 1  # stuffed zero
            else:
                raise JpegFormatError(
                    f"unexpected marker FF{follow:02X} inside entropy data"
                )
        self.buf = (self.buf << 8) | byte
        self.nbits += 8

    def read_bit(self):
        if self.nbits == 0:
            self._fill()
        self.nbits -= 1
        return (self.buf >> self.nbits) & 1

    def receive(self, n):
        v = 0
        for _ in range(n):
            v = (v << 1) | self.read_bit()
        return v

    def restart(self, index):
        """Byte-align and consume the expected RSTn marker."""
        self.buf = 0
        self.nbits = 0
        if self.pos + 2 > len(self.data):
            raise JpegFormatError("missing restart marker")
        if self.data[self.pos] != 0xFF or self.data[self.pos + 1] != 0xD0 + index:
            raise JpegFormatError(
                f"expected RST{index} at byte {self.pos} of entropy data"
            )
        self.pos += 2


def _decode_symbol(reader, table):
    code = reader.read_bit()
    length = 1
    while code > table.maxcode[length]:
        length += 1
        if length > 16:
            raise JpegFormatError("invalid Huffman code in entropy data")
        code = (code << 1) | reader.read_bit()
    return table.values[table.valptr[length] + code - table.mincode[length]]


def _extend(v, t):
    # Sign extension of a t-bit magnitude per the baseline coding model.
    if t == 0:
        return 0
    if v < (1 << (t - 1)):
        return v - (1 << t) + 1
    return v


def _decode_block(reader, comp, huffman, pred):
    """One 8x8 coefficient block, natural order, DC prediction applied."""
    coef = np.zeros(64, dtype=np.int64)
    t = _decode_symbol(reader, huffman[("dc", comp.td)])
    if t > 11:
        raise JpegFormatError(f"bad DC category {t}")
    diff = _extend(reader.receive(t), t)
    pred += diff
    coef[0] = pred
    ac = huffman[("ac", comp.ta)]
    k = 1
    while k <= 63:
        rs = _decode_symbol(reader, ac)
        r, s = rs >> 4, rs & 0x0F
        if s == 0:
            if r == 15:
                k += 16  # ZRL: sixteen zeros
                continue
            break  # EOB
        k += r
        if k > 63:
            raise JpegFormatError("AC run exceeds block")
        coef[_ZIGZAG[k]] = _extend(reader.receive(s), s)
        k += 1
    return coef.reshape(8, 8), pred


def decode_planes(structure, idct="exact"):
    """Entropy-decode to per-component sample planes at native resolution.

    Returns planes in frame component order (Y or Y, Cb, Cr), each a 2-D
    uint8 array cropped to the component's true sample dimensions.
    """
    if idct not in IDCT_KINDS:
        raise ValueError(f"unknown idct kind {idct!r}")
    s = structure
    hmax = max(c.h for c in s.components)
    vmax = max(c.v for c in s.components)
    mcus_x = -(-s.width // (8 * hmax))
    mcus_y = -(-s.height // (8 * vmax))

    reader = _BitReader(s.entropy)
    preds = {c.cid: 0 for c in s.components}
    blocks = {
        c.cid: np.zeros((mcus_y * c.v, mcus_x * c.h, 8, 8), dtype=np.int64)
        for c in s.components
    }
    mcu_index = 0
    restarts = 0
    for my in range(mcus_y):
        for mx in range(mcus_x):
            if s.restart_interval and mcu_index and mcu_index % s.restart_interval == 0:
                reader.restart(restarts % 8)
                restarts += 1
                preds = {c.cid: 0 for c in s.components}
            for comp in s.components:
                for v in range(comp.v):
                    for h in range(comp.h):
                        coef, preds[comp.cid] = _decode_block(
                            reader, comp, s.huffman, preds[comp.cid]
                        )
                        blocks[comp.cid][my * comp.v + v, mx * comp.h + h] = coef
            mcu_index += 1

    planes = {}
    for comp in s.components:
        grid = blocks[comp.cid]
        by, bx = grid.shape[:2]
        deq = grid.reshape(-1, 8, 8) * s.quant[comp.tq].astype(np.int64)
        if idct == "exact":
            spatial = round_half_away(_idct_exact_batch(deq) + 128.0)
        else:
            spatial = _idct_fast_batch(deq) + 128
        samples = np.clip(spatial, 0, 255).astype(np.uint8)
        plane = (
            samples.reshape(by, bx, 8, 8)
            .transpose(0, 2, 1, 3)
            .reshape(by * 8, bx * 8)
        )
        cw = -(-s.width * comp.h // hmax)
        ch = -(-s.height * comp.v // vmax)
        planes[comp.cid] = plane[:ch, :cw]

    return [planes[c.cid] for c in s.components]


def decode_to_rgb(structure, idct="exact"):
    """Entropy-decode and reconstruct the image as an rgb raster.

    ``idct`` picks the reconstruction kernel.  Grayscale output is the
    luma plane replicated; color output goes through the float BT.601
    route of :mod:`sysnoise.colorspace`, with 4:2:0 chroma replicated
    back to full resolution first.
    """
    s = structure
    planes = decode_planes(s, idct)
    if len(planes) == 1:
        return ImageBuffer.from_rgb(np.repeat(planes[0][..., None], 3, axis=2))
    y, cb, cr = planes
    if (s.components[0].h, s.components[0].v) == (2, 2):
        yuv = colorspace.YuvImage(LAYOUT_YUV420, y, cb, cr)
        yuv = colorspace.upsample_420(yuv)
    else:
        yuv = colorspace.YuvImage(LAYOUT_YUV444, y, cb, cr)
    return colorspace.yuv_to_rgb_float(yuv)


def decode_bytes(data, idct="exact"):
    """Convenience wrapper: parse and decode in one call."""
    return decode_to_rgb(parse_jpeg(data), idct=idct)
