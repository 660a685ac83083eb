"""Detection-box decode, IoU and NMS with the aligned-flag convention
made explicit.

Detection stacks disagree on whether a box of corners (x1, x2) has width
x2 - x1 or x2 - x1 + 1.  The ``offset`` (0 or 1) parameterizes that
choice everywhere it matters:

    width  = x2 - x1 + offset
    center = x1 + 0.5 * width
    corner reconstruction: x2 = center + 0.5 * width - offset

Anchor deltas follow the standard parameterization: deltas are
de-normalized by (means, stds), divided by the per-coordinate weights,
and the size deltas are clamped at log(1000 / 16) before exponentiation
so a stray regression output cannot explode a box.
"""

import math
from dataclasses import dataclass

import numpy as np

from .tensorcore import round_half_away

CLAMP_DEFAULT = math.log(1000.0 / 16.0)


class BoxError(ValueError):
    """Raised for malformed boxes, offsets or text records."""


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box, corner form, optional score."""

    x1: float
    y1: float
    x2: float
    y2: float
    score: float | None = None


@dataclass(frozen=True)
class BoxCoder:
    """Delta-decode configuration."""

    means: tuple = (0.0, 0.0, 0.0, 0.0)
    stds: tuple = (1.0, 1.0, 1.0, 1.0)
    weights: tuple = (1.0, 1.0, 1.0, 1.0)
    aligned_offset: int = 0
    clamp_max: float = CLAMP_DEFAULT

    def __post_init__(self):
        if self.aligned_offset not in (0, 1):
            raise BoxError(f"aligned offset must be 0 or 1, got {self.aligned_offset}")
        for name in ("means", "stds", "weights"):
            vals = tuple(float(v) for v in getattr(self, name))
            if len(vals) != 4:
                raise BoxError(f"{name} must have 4 entries, got {len(vals)}")
            object.__setattr__(self, name, vals)
        if any(v <= 0 for v in self.stds) or any(v <= 0 for v in self.weights):
            raise BoxError("stds and weights must be positive")


def _boxes_array(boxes):
    if isinstance(boxes, np.ndarray):
        arr = np.asarray(boxes, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != 4:
            raise BoxError(f"box array must be (N, 4), got {arr.shape}")
        return arr, False
    arr = np.array([[b.x1, b.y1, b.x2, b.y2] for b in boxes], dtype=np.float64)
    return arr.reshape(-1, 4), True


def xyxy2xywh(boxes, offset=0):
    """Corner boxes to (ctr_x, ctr_y, w, h) columns under ``offset``."""
    if offset not in (0, 1):
        raise BoxError(f"offset must be 0 or 1, got {offset}")
    arr, _ = _boxes_array(boxes)
    w = arr[:, 2] - arr[:, 0] + offset
    h = arr[:, 3] - arr[:, 1] + offset
    ctr_x = arr[:, 0] + 0.5 * w
    ctr_y = arr[:, 1] + 0.5 * h
    return np.stack([ctr_x, ctr_y, w, h], axis=1)


def xywh2xyxy(cwh, offset=0):
    """(ctr, size) columns back to corner boxes under ``offset``."""
    if offset not in (0, 1):
        raise BoxError(f"offset must be 0 or 1, got {offset}")
    cwh = np.asarray(cwh, dtype=np.float64)
    x1 = cwh[:, 0] - 0.5 * cwh[:, 2]
    y1 = cwh[:, 1] - 0.5 * cwh[:, 3]
    x2 = cwh[:, 0] + 0.5 * cwh[:, 2] - offset
    y2 = cwh[:, 1] + 0.5 * cwh[:, 3] - offset
    return np.stack([x1, y1, x2, y2], axis=1)


def decode_boxes(anchors, offsets, coder=BoxCoder()):
    """Apply regression deltas to anchors.

    ``offsets`` is (N, 4k) for k predictions per anchor.  Returns the
    same container kind as ``anchors``: an (N, 4k) array for array
    input, a list of BBox for BBox-list input (k must be 1 there).
    """
    arr, was_list = _boxes_array(anchors)
    deltas = np.asarray(offsets, dtype=np.float64)
    if deltas.ndim != 2 or deltas.shape[1] % 4 != 0 or deltas.shape[1] == 0:
        raise BoxError(f"offsets must be (N, 4k), got {deltas.shape}")
    if deltas.shape[0] != arr.shape[0]:
        raise BoxError(
            f"{deltas.shape[0]} offset rows for {arr.shape[0]} anchors"
        )
    if np.isnan(deltas).any():
        raise BoxError("NaN in offsets")
    cwh = xyxy2xywh(arr, coder.aligned_offset)
    ctr_x, ctr_y, w, h = cwh[:, 0], cwh[:, 1], cwh[:, 2], cwh[:, 3]

    means = np.tile(coder.means, deltas.shape[1] // 4)
    stds = np.tile(coder.stds, deltas.shape[1] // 4)
    deltas = deltas * stds + means
    wx, wy, ww, wh = coder.weights
    dx = deltas[:, 0::4] / wx
    dy = deltas[:, 1::4] / wy
    dw = np.minimum(deltas[:, 2::4] / ww, coder.clamp_max)
    dh = np.minimum(deltas[:, 3::4] / wh, coder.clamp_max)

    pred_ctr_x = dx * w[:, None] + ctr_x[:, None]
    pred_ctr_y = dy * h[:, None] + ctr_y[:, None]
    pred_w = np.exp(dw) * w[:, None]
    pred_h = np.exp(dh) * h[:, None]

    out = np.zeros_like(deltas)
    out[:, 0::4] = pred_ctr_x - 0.5 * pred_w
    out[:, 1::4] = pred_ctr_y - 0.5 * pred_h
    out[:, 2::4] = pred_ctr_x + 0.5 * pred_w - coder.aligned_offset
    out[:, 3::4] = pred_ctr_y + 0.5 * pred_h - coder.aligned_offset
    if was_list:
        if out.shape[1] != 4:
            raise BoxError("BBox-list decode supports one prediction per anchor")
        return [BBox(*row) for row in out]
    return out


def iou(a, b, offset=0):
    """Intersection over union of two boxes under ``offset``."""
    if offset not in (0, 1):
        raise BoxError(f"offset must be 0 or 1, got {offset}")
    ax1, ay1, ax2, ay2 = a.x1, a.y1, a.x2, a.y2
    bx1, by1, bx2, by2 = b.x1, b.y1, b.x2, b.y2
    area_a = (ax2 - ax1 + offset) * (ay2 - ay1 + offset)
    area_b = (bx2 - bx1 + offset) * (by2 - by1 + offset)
    iw = max(0.0, min(ax2, bx2) - max(ax1, bx1) + offset)
    ih = max(0.0, min(ay2, by2) - max(ay1, by1) + offset)
    inter = iw * ih
    union = area_a + area_b - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def nms(boxes, thresh, offset=0):
    """Greedy NMS; score ties break toward the earlier input index.

    Returns the kept boxes in descending score order.
    """
    for b in boxes:
        if b.score is None:
            raise BoxError("nms requires scored boxes")
    if not 0.0 <= thresh <= 1.0:
        raise BoxError(f"threshold {thresh} outside [0, 1]")
    # Stable sort on -score keeps input order among equal scores.
    order = sorted(range(len(boxes)), key=lambda i: -boxes[i].score)
    kept = []
    suppressed = [False] * len(boxes)
    for pos, i in enumerate(order):
        if suppressed[i]:
            continue
        kept.append(boxes[i])
        for j in order[pos + 1 :]:
            if not suppressed[j] and iou(boxes[i], boxes[j], offset) > thresh:
                suppressed[j] = True
    return kept


def round_boxes(boxes):
    """Round coordinates to integers (half away from zero); scores pass
    through untouched.  Explicit opt-in step, never applied implicitly."""
    out = []
    for b in boxes:
        vals = [float(round_half_away(v)) for v in (b.x1, b.y1, b.x2, b.y2)]
        out.append(BBox(*vals, score=b.score))
    return out


def read_boxes_text(text):
    """Parse ``x1 y1 x2 y2 [score]`` lines; blank lines are skipped."""
    boxes = []
    for lineno, line in enumerate(text.splitlines(), 1):
        parts = line.split()
        if not parts:
            continue
        if len(parts) not in (4, 5):
            raise BoxError(f"line {lineno}: expected 4 or 5 fields, got {len(parts)}")
        try:
            vals = [float(p) for p in parts]
        except ValueError:
            raise BoxError(f"line {lineno}: non-numeric field") from None
        score = vals[4] if len(vals) == 5 else None
        boxes.append(BBox(vals[0], vals[1], vals[2], vals[3], score=score))
    return boxes


def write_boxes_text(boxes):
    """Format boxes as ``x1 y1 x2 y2 [score]``, 6 fractional digits."""
    lines = []
    for b in boxes:
        fields = [f"{v:.6f}" for v in (b.x1, b.y1, b.x2, b.y2)]
        if b.score is not None:
            fields.append(f"{b.score:.6f}")
        lines.append(" ".join(fields))
    return "\n".join(lines) + ("\n" if lines else "")
