"""Pipeline declaration, execution and divergence measurement.

A pipeline is a JSON array of stage objects, each ``{"stage": name,
...params}``, executed left to right:

    decode     {idct: exact|fast}                     bytes -> image
    resize     {kernel, convention, out_w, out_h, a}  image -> image
    color      {path}                                 image -> image
    precision  {dtype: fp32|fp16|int8}                tensor -> tensor
    pool       {k, s, p, mode: floor|ceil}            tensor -> tensor
    upsample   {kind, align, out_w, out_h}            tensor -> tensor
    bbox       {aligned_offset, clamp}                tensor -> tensor

Image stages must precede tensor stages; the first tensor stage sees the
current rgb raster converted to an f32 NCHW tensor in [0, 255] with no
normalization, and a pipeline that ends on an image is converted the
same way.  A bbox stage stands alone: its input is a rank-2 tensor with
8 columns per row, ``x1 y1 x2 y2 dx dy dw dh``, and its output is the
(N, 4) decoded boxes.

``compare`` runs two pipelines over a corpus and reports per-input and
aggregate divergence.  A shape mismatch between outputs is not an error;
it is reported as a structural divergence record.  Reports are
deterministic and bit-identical regardless of worker count; the
``SYSNOISE_THREADS`` environment variable caps parallelism.  PSNR uses
peak 255 when both outputs came off the image side and the observed
absolute peak otherwise; an infinite PSNR (identical outputs) is
serialized as JSON null.
"""

import hashlib
import json
import math
import os
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import colorspace, detpost, jpegdec, netops, precision, resize
from .tensorcore import ImageBuffer, Tensor, diff_image, image_to_tensor

THREADS_ENV = "SYSNOISE_THREADS"

_IMAGE_STAGES = ("decode", "resize", "color")
_TENSOR_STAGES = ("precision", "pool", "upsample")

DECODER_VARIANTS = ("exact", "fast")

# The named (kernel, convention) grid used for sweeps and mix sampling.
RESIZE_VARIANTS = {
    "nearest-fixed": {"kernel": "nearest", "convention": "fixed"},
    "nearest-scaled": {"kernel": "nearest", "convention": "scaled"},
    "bilinear-fixed": {"kernel": "bilinear", "convention": "fixed"},
    "bilinear-scaled": {"kernel": "bilinear", "convention": "scaled"},
    "bicubic-fixed": {"kernel": "bicubic", "convention": "fixed", "a": -0.5},
    "bicubic-scaled": {"kernel": "bicubic", "convention": "scaled", "a": -0.5},
    "bicubic75-fixed": {"kernel": "bicubic", "convention": "fixed", "a": -0.75},
    "bicubic75-scaled": {"kernel": "bicubic", "convention": "scaled", "a": -0.75},
    "box-fixed": {"kernel": "box", "convention": "fixed"},
    "box-scaled": {"kernel": "box", "convention": "scaled"},
    "hamming-fixed": {"kernel": "hamming", "convention": "fixed"},
    "hamming-scaled": {"kernel": "hamming", "convention": "scaled"},
    "lanczos-fixed": {"kernel": "lanczos", "convention": "fixed"},
    "lanczos-scaled": {"kernel": "lanczos", "convention": "scaled"},
    "area": {"kernel": "area", "convention": "fixed"},
}


class SpecValidationError(ValueError):
    """Invalid pipeline declaration; ``problems`` lists every violation."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class StageExecutionError(RuntimeError):
    """A stage failed at run time; carries the stage index and kind."""

    def __init__(self, index, kind, cause):
        self.index = index
        self.kind = kind
        self.cause = cause
        super().__init__(f"stage {index} ({kind}): {cause}")


@dataclass(frozen=True)
class PipelineSpec:
    """Validated, normalized stage list."""

    stages: tuple

    def to_obj(self):
        return [dict(st) for st in self.stages]

    def to_json(self):
        return json.dumps(self.to_obj(), sort_keys=True)


def _norm_decode(st, where, problems):
    idct = st.get("idct", "exact")
    if idct not in jpegdec.IDCT_KINDS:
        problems.append(f"{where}: idct must be one of {jpegdec.IDCT_KINDS}")
    return {"stage": "decode", "idct": idct}


def _norm_resize(st, where, problems):
    kernel = st.get("kernel")
    convention = st.get("convention", "fixed")
    out = {"stage": "resize", "kernel": kernel, "convention": convention}
    if kernel == "area":
        if convention != "fixed":
            problems.append(f"{where}: area supports only the fixed convention")
    elif kernel in resize.KERNEL_NAMES:
        if convention not in resize.CONVENTIONS:
            problems.append(
                f"{where}: convention must be one of {resize.CONVENTIONS}"
            )
        if kernel == "bicubic":
            out["a"] = st.get("a", -0.5)
            if out["a"] not in (-0.5, -0.75):
                problems.append(f"{where}: bicubic a must be -0.5 or -0.75")
    else:
        problems.append(f"{where}: unknown kernel {kernel!r}")
    for dim in ("out_w", "out_h"):
        v = st.get(dim)
        if not isinstance(v, int) or isinstance(v, bool) or v < 1:
            problems.append(f"{where}: {dim} must be a positive integer")
            v = 1
        out[dim] = v
    return out


def _norm_color(st, where, problems):
    path = st.get("path")
    if path not in colorspace.ROUNDTRIP_PATHS:
        problems.append(
            f"{where}: path must be one of {colorspace.ROUNDTRIP_PATHS}"
        )
    return {"stage": "color", "path": path}


def _norm_precision(st, where, problems):
    dtype = st.get("dtype")
    if dtype not in ("fp32", "fp16", "int8"):
        problems.append(f"{where}: dtype must be fp32, fp16 or int8")
    return {"stage": "precision", "dtype": dtype}


def _norm_pool(st, where, problems):
    out = {"stage": "pool"}
    for key, default in (("k", None), ("s", None), ("p", 0)):
        v = st.get(key, default)
        if not isinstance(v, int) or isinstance(v, bool) or v < 0:
            problems.append(f"{where}: {key} must be a non-negative integer")
            v = 1
        out[key] = v
    mode = st.get("mode", "floor")
    if mode not in ("floor", "ceil"):
        problems.append(f"{where}: mode must be floor or ceil")
    out["mode"] = mode
    if isinstance(out["k"], int) and isinstance(out["p"], int):
        if out["k"] < 1 or out["s"] < 1:
            problems.append(f"{where}: k and s must be >= 1")
        elif not 0 <= out["p"] < out["k"]:
            problems.append(f"{where}: p must satisfy 0 <= p < k")
    return out


def _norm_upsample(st, where, problems):
    kind = st.get("kind")
    align = st.get("align", "half_pixel")
    if kind not in netops.UPSAMPLE_KINDS:
        problems.append(f"{where}: kind must be one of {netops.UPSAMPLE_KINDS}")
    if align not in (netops.ALIGN_HALF_PIXEL, netops.ALIGN_CORNERS):
        problems.append(f"{where}: align must be half_pixel or corners")
    out = {"stage": "upsample", "kind": kind, "align": align}
    for dim in ("out_w", "out_h"):
        v = st.get(dim)
        if not isinstance(v, int) or isinstance(v, bool) or v < 1:
            problems.append(f"{where}: {dim} must be a positive integer")
            v = 1
        out[dim] = v
    return out


def _norm_bbox(st, where, problems):
    offset = st.get("aligned_offset", 0)
    clamp = st.get("clamp", detpost.CLAMP_DEFAULT)
    if offset not in (0, 1):
        problems.append(f"{where}: aligned_offset must be 0 or 1")
    if not isinstance(clamp, (int, float)) or not math.isfinite(clamp):
        problems.append(f"{where}: clamp must be a finite number")
        clamp = detpost.CLAMP_DEFAULT
    return {"stage": "bbox", "aligned_offset": offset, "clamp": float(clamp)}


_NORMALIZERS = {
    "decode": (_norm_decode, {"idct"}),
    "resize": (_norm_resize, {"kernel", "convention", "out_w", "out_h", "a"}),
    "color": (_norm_color, {"path"}),
    "precision": (_norm_precision, {"dtype"}),
    "pool": (_norm_pool, {"k", "s", "p", "mode"}),
    "upsample": (_norm_upsample, {"kind", "align", "out_w", "out_h"}),
    "bbox": (_norm_bbox, {"aligned_offset", "clamp"}),
}


def make_spec(stages):
    """Validate a stage list (already-parsed JSON); collects every problem."""
    problems = []
    if not isinstance(stages, list):
        raise SpecValidationError(["top level must be a JSON array of stages"])
    normalized = []
    for i, st in enumerate(stages):
        where = f"stage {i}"
        if not isinstance(st, dict) or "stage" not in st:
            problems.append(f"{where}: not an object with a 'stage' field")
            continue
        kind = st["stage"]
        if kind not in _NORMALIZERS:
            problems.append(f"{where}: unknown stage kind {kind!r}")
            continue
        norm, allowed = _NORMALIZERS[kind]
        extra = set(st) - allowed - {"stage"}
        if extra:
            problems.append(f"{where}: unknown fields {sorted(extra)}")
        normalized.append(norm(st, where, problems))

    kinds = [st["stage"] for st in normalized]
    if "bbox" in kinds and len(kinds) > 1:
        problems.append("bbox stages stand alone and cannot be mixed")
    if kinds.count("decode") > 1:
        problems.append("at most one decode stage is allowed")
    if "decode" in kinds and kinds.index("decode") != 0:
        problems.append(
            f"decode stage at position {kinds.index('decode')} must come "
            f"first, but follows a {kinds[0]!r} stage"
        )
    seen_tensor = False
    for i, kind in enumerate(kinds):
        if kind in _TENSOR_STAGES:
            seen_tensor = True
        elif kind in _IMAGE_STAGES and seen_tensor:
            problems.append(f"stage {i}: image stage after a tensor stage")
    if problems:
        raise SpecValidationError(problems)
    return PipelineSpec(tuple(normalized))


def parse_spec(text):
    """Parse and validate the JSON pipeline declaration."""
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SpecValidationError([f"invalid JSON: {exc}"]) from None
    return make_spec(obj)


# ---------------------------------------------------------------------------
# Execution

# Decoded rasters keyed by (digest of the stream, idct kind).  Decode
# dominates corpus sweeps and is pure, so memoize a bounded number.
_DECODE_CACHE = {}
_DECODE_LOCK = threading.Lock()
_DECODE_CACHE_MAX = 64


def _decode_cached(data, idct):
    key = (hashlib.sha256(data).digest(), idct)
    with _DECODE_LOCK:
        hit = _DECODE_CACHE.get(key)
    if hit is not None:
        return hit
    img = jpegdec.decode_bytes(data, idct=idct)
    with _DECODE_LOCK:
        if len(_DECODE_CACHE) >= _DECODE_CACHE_MAX:
            _DECODE_CACHE.pop(next(iter(_DECODE_CACHE)))
        _DECODE_CACHE[key] = img
    return img


def _need_image(value, kind):
    if isinstance(value, (bytes, bytearray)):
        raise ValueError(f"{kind} needs a decoded image; add a decode stage first")
    if not isinstance(value, ImageBuffer):
        raise ValueError(f"{kind} applied to a tensor payload")
    return value


def _to_tensor(value):
    if isinstance(value, ImageBuffer):
        return image_to_tensor(value)
    if isinstance(value, Tensor):
        return value
    raise ValueError("pipeline input is a byte stream; add a decode stage first")


def _apply_stage(st, value):
    kind = st["stage"]
    if kind == "decode":
        if not isinstance(value, (bytes, bytearray)):
            raise ValueError("decode takes the raw input byte stream")
        return _decode_cached(bytes(value), st["idct"])
    if kind == "resize":
        img = _need_image(value, "resize")
        if st["kernel"] == "area":
            return resize.area_resize(img, st["out_w"], st["out_h"])
        kernel = resize.ResizeKernel(st["kernel"], a=st.get("a", -0.5))
        return resize.resize(img, st["out_w"], st["out_h"], kernel, st["convention"])
    if kind == "color":
        img = _need_image(value, "color")
        return colorspace.color_roundtrip(img, st["path"])
    t = _to_tensor(value)
    if kind == "precision":
        if st["dtype"] == "fp32":
            return t
        if st["dtype"] == "fp16":
            return precision.cast_fp16(t)
        params = precision.calibrate_minmax(t)
        return precision.dequantize(precision.quantize(t, params), params)
    if kind == "pool":
        cfg = netops.PoolConfig(st["k"], st["s"], st["p"], st["mode"] == "ceil")
        return netops.maxpool2d(t, cfg)
    if kind == "upsample":
        if st["kind"] == "nearest":
            return netops.upsample_nearest(t, st["out_h"], st["out_w"])
        return netops.upsample_bilinear(t, st["out_h"], st["out_w"], st["align"])
    # bbox
    if len(t.shape) != 2 or t.shape[1] != 8:
        raise ValueError(
            f"bbox input must be (N, 8) anchors+deltas, got {t.shape}"
        )
    rows = t.data.astype(np.float64)
    coder = detpost.BoxCoder(
        aligned_offset=st["aligned_offset"], clamp_max=st["clamp"]
    )
    decoded = detpost.decode_boxes(rows[:, :4], rows[:, 4:], coder)
    return Tensor("f32", decoded.shape, decoded.astype(np.float32))


def _run_stages(spec, payload):
    value = payload
    for i, st in enumerate(spec.stages):
        try:
            value = _apply_stage(st, value)
        except Exception as exc:
            raise StageExecutionError(i, st["stage"], exc) from exc
    return value


def run_pipeline(spec, payload):
    """Run every stage and return the result as a tensor."""
    return _to_tensor(_run_stages(spec, payload))


# ---------------------------------------------------------------------------
# Divergence measurement


def _metrics_record(entry_id, value_a, value_b):
    """Build one per-input record plus an optional diff image."""
    u8_derived = isinstance(value_a, ImageBuffer) and isinstance(value_b, ImageBuffer)
    ta = _to_tensor(value_a)
    tb = _to_tensor(value_b)
    if ta.shape != tb.shape:
        record = {
            "id": entry_id,
            "kind": "structural",
            "shape_a": list(ta.shape),
            "shape_b": list(tb.shape),
        }
        return record, None
    a = ta.data.astype(np.float64)
    b = tb.data.astype(np.float64)
    diff = a - b
    abs_diff = np.abs(diff)
    mse = float(np.mean(diff * diff))
    peak = 255.0 if u8_derived else float(max(np.abs(a).max(), np.abs(b).max()))
    if mse == 0.0:
        psnr = None  # no divergence; infinite ratio
    else:
        psnr = float(20.0 * math.log10(peak) - 10.0 * math.log10(mse))
    record = {
        "id": entry_id,
        "kind": "metrics",
        "mae": float(abs_diff.mean()),
        "max_abs": float(abs_diff.max()),
        "rmse": float(math.sqrt(mse)),
        "psnr": psnr,
        "psnr_peak": peak,
        "frac_diff": float(np.mean(a != b)),
    }
    dimg = None
    if (
        u8_derived
        and (value_a.width, value_a.height, value_a.layout)
        == (value_b.width, value_b.height, value_b.layout)
    ):
        dimg = diff_image(value_a, value_b)
    return record, dimg


def _aggregate(records):
    metric_rows = [r for r in records if r["kind"] == "metrics"]
    agg = {"structural_count": sum(1 for r in records if r["kind"] == "structural")}
    for reducer_name, reducer in (("mean", np.mean), ("max", np.max)):
        out = {}
        for key in ("mae", "max_abs", "rmse", "frac_diff"):
            vals = [r[key] for r in metric_rows]
            out[key] = float(reducer(vals)) if vals else None
        psnrs = [r["psnr"] for r in metric_rows]
        if not psnrs or any(p is None for p in psnrs):
            out["psnr"] = None
        else:
            out["psnr"] = float(reducer(psnrs))
        agg[reducer_name] = out
    return agg


@dataclass(frozen=True)
class DivergenceReport:
    pipeline_a: tuple
    pipeline_b: tuple
    records: tuple
    aggregate: dict

    def to_obj(self):
        from . import __version__

        return {
            "toolkit_version": __version__,
            "pipeline_a": [dict(s) for s in self.pipeline_a],
            "pipeline_b": [dict(s) for s in self.pipeline_b],
            "inputs": len(self.records),
            "per_input": [dict(r) for r in self.records],
            "aggregate": self.aggregate,
        }

    def to_json(self):
        return json.dumps(self.to_obj(), indent=2, sort_keys=True)


def thread_count(threads=None):
    """Requested worker count: explicit argument, else the environment
    cap, else the machine's CPU count."""
    if threads is not None:
        n = int(threads)
    else:
        env = os.environ.get(THREADS_ENV)
        if env is not None:
            try:
                n = int(env)
            except ValueError:
                raise ValueError(f"{THREADS_ENV} must be an integer, got {env!r}")
        else:
            n = os.cpu_count() or 1
    if n < 1:
        raise ValueError(f"thread count must be >= 1, got {n}")
    return n


def compare(spec_a, spec_b, corpus, diff_dir=None, threads=None):
    """Run both pipelines over ``corpus`` (pairs of id, payload) and
    collect per-input divergence records.

    Diff images are written for inputs where both outputs are rasters of
    equal shape; the record stores the file name relative to
    ``diff_dir`` so reports do not depend on where they were produced.
    """
    entries = list(corpus)
    if not entries:
        raise ValueError("empty corpus")
    workers = thread_count(threads)

    def job(entry):
        entry_id, payload = entry
        va = _run_stages(spec_a, payload)
        vb = _run_stages(spec_b, payload)
        record, dimg = _metrics_record(entry_id, va, vb)
        return record, dimg

    if workers == 1 or len(entries) == 1:
        results = [job(e) for e in entries]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(job, entries))

    records = []
    for (entry_id, _), (record, dimg) in zip(entries, results):
        if dimg is not None and diff_dir is not None:
            from .tensorcore import write_ppm

            name = f"diff_{entry_id}.ppm"
            os.makedirs(diff_dir, exist_ok=True)
            with open(os.path.join(diff_dir, name), "wb") as f:
                write_ppm(dimg.to_image(), f)
            record = dict(record, diff_image=name)
        records.append(record)
    return DivergenceReport(
        spec_a.stages, spec_b.stages, tuple(records), _aggregate(records)
    )


def stepwise_combined(base, additions, payload):
    """Divergence of each cumulative prefix of ``additions`` against the
    bare ``base`` pipeline, in the order the caller supplies."""
    base_value = _run_stages(base, payload)
    steps = []
    stages = list(base.to_obj())
    for i, add in enumerate(additions):
        stages.append(add)
        spec = make_spec([dict(s) for s in stages])
        value = _run_stages(spec, payload)
        record, _ = _metrics_record(f"step_{i}", base_value, value)
        record["step"] = i
        record["stage"] = spec.stages[-1]["stage"]
        steps.append(record)
    return steps


# ---------------------------------------------------------------------------
# Mix-training sampler


@dataclass(frozen=True)
class MixPolicy:
    """Which implementation sets to draw from during mixed training."""

    decoders: tuple = DECODER_VARIANTS
    resizes: tuple = tuple(RESIZE_VARIANTS)
    default_decoder: str = "exact"
    default_resize: str = "bilinear-scaled"
    mix_decoder: bool = True
    mix_resize: bool = True
    seed: int = 0

    def __post_init__(self):
        if not self.decoders or not self.resizes:
            raise ValueError("variant sets must be non-empty")
        if self.default_decoder not in self.decoders:
            raise ValueError(f"default decoder {self.default_decoder!r} not in set")
        if self.default_resize not in self.resizes:
            raise ValueError(f"default resize {self.default_resize!r} not in set")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


def mix_sample(policy, iteration):
    """Implementation pair for one training iteration.

    Counter-based: the stream is keyed by (seed, iteration), so any
    iteration can be re-derived independently and out of order.
    """
    if iteration < 0:
        raise ValueError("iteration must be non-negative")
    rng = np.random.Generator(np.random.Philox(key=policy.seed, counter=iteration))
    if policy.mix_decoder:
        decoder = policy.decoders[int(rng.integers(len(policy.decoders)))]
    else:
        decoder = policy.default_decoder
    if policy.mix_resize:
        rsz = policy.resizes[int(rng.integers(len(policy.resizes)))]
    else:
        rsz = policy.default_resize
    return decoder, rsz
