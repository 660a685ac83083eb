"""End-to-end checks of the toolkit's measurable guarantees, one test per
numbered check; ``pytest -v`` shows one pass/fail line for each.

Expected values are produced by independent references inside each test
(scipy transforms, direct equation arithmetic, frozen counted statistics),
never by the code under test.
"""

import json
import math
import subprocess
import sys
import time

import numpy as np
import pytest
import scipy.fft
import scipy.stats

from sysnoise import colorspace
from sysnoise.colorspace import color_roundtrip, rgb_to_yuv444
from sysnoise.detpost import BBox, iou, nms, xywh2xyxy, xyxy2xywh
from sysnoise.jpegdec import idct_exact, idct_fast
from sysnoise.netops import PoolConfig, maxpool2d, pool_output_shape
from sysnoise.pipeline import (
    DECODER_VARIANTS,
    RESIZE_VARIANTS,
    MixPolicy,
    compare,
    make_spec,
    mix_sample,
)
from sysnoise.precision import calibrate_minmax, dequantize, quantize
from sysnoise.resize import CONVENTIONS, KERNEL_NAMES, ResizeKernel, area_resize, resize, tap_matrix
from sysnoise.tensorcore import ImageBuffer, Tensor, read_ppm, round_half_away

# Standard baseline luminance quantization table (quality 50).
_LUMA_QT = np.array(
    [
        [16, 11, 10, 16, 24, 40, 51, 61],
        [12, 12, 14, 19, 26, 58, 60, 55],
        [14, 13, 16, 24, 40, 57, 69, 56],
        [14, 17, 22, 29, 51, 87, 80, 62],
        [18, 22, 37, 56, 68, 109, 103, 77],
        [24, 35, 55, 64, 81, 104, 113, 92],
        [49, 64, 78, 87, 103, 121, 120, 101],
        [72, 92, 95, 98, 112, 100, 103, 99],
    ],
    dtype=np.float64,
)


def test_c01_exact_idct_inverts_the_forward_transform():
    r = np.random.default_rng(7)
    blocks = r.uniform(-64.0, 64.0, size=(1000, 8, 8))
    t0 = time.perf_counter()
    worst = 0.0
    for x in blocks:
        coeffs = scipy.fft.dctn(x, norm="ortho")
        worst = max(worst, float(np.abs(idct_exact(coeffs) - x).max()))
    elapsed = time.perf_counter() - t0
    assert worst < 1e-4
    assert elapsed < 1.0
    print(f"\nround-trip max abs error {worst:.3g} over 1000 blocks, {elapsed:.2f}s")


def test_c02_fast_idct_stays_within_one_of_the_rounded_exact_kernel():
    r = np.random.default_rng(2)
    t0 = time.perf_counter()
    worst = 0
    differing = 0
    for _ in range(10000):
        x = r.uniform(-128.0, 127.0, (8, 8))
        coeffs = (
            np.rint(scipy.fft.dctn(x, norm="ortho") / _LUMA_QT) * _LUMA_QT
        ).astype(np.int64)
        fast = idct_fast(coeffs).astype(np.int64)
        rounded = round_half_away(idct_exact(coeffs).astype(np.float64))
        d = int(np.abs(fast - rounded).max())
        worst = max(worst, d)
        differing += d > 0
    elapsed = time.perf_counter() - t0
    assert worst <= 1
    assert differing >= 100  # at least 1% of 10,000
    assert elapsed < 5.0
    print(f"\nmax deviation {worst}, {differing} of 10000 blocks differ, {elapsed:.2f}s")


def test_c03_color_lattice_round_trip_bounds():
    vals = np.array(list(range(0, 256, 16)) + [255], dtype=np.uint8)
    grid = np.stack(
        np.meshgrid(vals, vals, vals, indexing="ij"), axis=-1
    ).reshape(17, 17 * 17, 3)
    img = ImageBuffer.from_rgb(grid)
    t0 = time.perf_counter()
    rt_float = color_roundtrip(img, "yuv444_float").rgb().astype(np.int64)
    rt_fixed = color_roundtrip(img, "yuv444_fixed").rgb().astype(np.int64)
    float_err = int(np.abs(rt_float - grid.astype(np.int64)).max())
    cross = int(np.abs(rt_float - rt_fixed).max())
    grays = np.repeat(np.arange(256, dtype=np.uint8)[None, :, None], 3, axis=2)
    yuv = rgb_to_yuv444(ImageBuffer.from_rgb(grays))
    elapsed = time.perf_counter() - t0
    assert float_err <= 3
    assert cross <= 2
    assert (yuv.u == 128).all() and (yuv.v == 128).all()
    assert elapsed < 5.0
    print(f"\nfloat round-trip err {float_err}, fixed-vs-float {cross}, {elapsed:.2f}s")


def test_c04_hand_computed_color_vectors():
    def reference(r, g, b):
        # direct evaluation of the studio-range forward equations
        def rnd(x):
            return math.floor(x + 0.5) if x >= 0 else -math.floor(-x + 0.5)

        y = rnd(0.256788 * r + 0.504129 * g + 0.097906 * b) + 16
        u = rnd(-0.148223 * r - 0.290993 * g + 0.439216 * b) + 128
        v = rnd(0.439216 * r - 0.367788 * g - 0.071427 * b) + 128
        return y, u, v

    cases = {
        (0, 0, 0): (16, 128, 128),
        (255, 255, 255): (235, 128, 128),
        (255, 0, 0): (81, 90, 240),
    }
    for rgb, expected in cases.items():
        assert reference(*rgb) == expected
        img = ImageBuffer.from_rgb(np.array([[rgb]], dtype=np.uint8))
        yuv = rgb_to_yuv444(img)
        got = (int(yuv.y[0, 0]), int(yuv.u[0, 0]), int(yuv.v[0, 0]))
        assert got == expected, rgb
    print(f"\n{len(cases)} hand vectors match the direct equation values")


def test_c05_quantization_round_trip_bound_zero_and_monotonicity():
    r = np.random.default_rng(5)
    vals = r.uniform(-4.0, 10.0, 100_000).astype(np.float32)
    vals[0] = 0.0
    vals = np.sort(vals)
    t = Tensor("f32", vals.shape, vals)
    t0 = time.perf_counter()
    params = calibrate_minmax(t)
    q = quantize(t, params)
    dq = dequantize(q, params)
    err = float(np.abs(t.data.astype(np.float64) - dq.data).max())
    elapsed = time.perf_counter() - t0
    assert err <= params.s / 2 + 1e-6
    zero_idx = int(np.where(vals == 0.0)[0][0])
    assert dq.data[zero_idx] == 0.0
    assert (np.diff(q.data.astype(np.int64)) >= 0).all()
    assert elapsed < 1.0
    print(f"\nmax |x - dq(q(x))| = {err:.3g} <= s/2 = {params.s / 2:.3g}, {elapsed:.2f}s")


def test_c06_ceil_mode_divergence_is_the_appended_band():
    r = np.random.default_rng(6)
    t0 = time.perf_counter()
    checked = 0
    attempts = 0
    while checked < 100:
        attempts += 1
        assert attempts < 10_000
        k = int(r.integers(2, 6))
        s = int(r.integers(2, 5))
        p = int(r.integers(0, k))
        h, w = (int(v) for v in r.integers(5, 33, 2))
        floor_cfg = PoolConfig(k, s, p, False)
        ceil_cfg = PoolConfig(k, s, p, True)
        oh_f, ow_f = pool_output_shape(h, floor_cfg), pool_output_shape(w, floor_cfg)
        oh_c, ow_c = pool_output_shape(h, ceil_cfg), pool_output_shape(w, ceil_cfg)
        if (oh_f, ow_f) == (oh_c, ow_c):
            continue
        n, c = int(r.integers(1, 3)), int(r.integers(1, 4))
        data = r.normal(0.0, 1.0, (n, c, h, w)).astype(np.float32)
        t = Tensor("f32", data.shape, data)
        fl = maxpool2d(t, floor_cfg)
        ce = maxpool2d(t, ceil_cfg)
        # ceil appends at most one output row/column per axis and agrees
        # with floor everywhere else
        assert oh_c - oh_f in (0, 1) and ow_c - ow_f in (0, 1)
        assert np.array_equal(ce.data[:, :, :oh_f, :ow_f], fl.data)
        checked += 1
    elapsed = time.perf_counter() - t0
    assert elapsed < 5.0
    print(f"\n{checked} mismatched-shape configs localized, {elapsed:.2f}s")


def test_c07_resize_identity_constancy_and_weight_normalization():
    r = np.random.default_rng(17)
    arr = r.integers(0, 256, (40, 56, 3)).astype(np.uint8)
    img = ImageBuffer.from_rgb(arr)
    for kind in ("nearest", "bilinear"):
        out = resize(img, 56, 40, ResizeKernel(kind), "fixed")
        assert np.array_equal(out.samples, img.samples), kind

    const = ImageBuffer.from_rgb(np.full((40, 56, 3), 77, np.uint8))
    for name, params in RESIZE_VARIANTS.items():
        for out_w, out_h in ((36, 64), (128, 144)):
            if params["kernel"] == "area":
                out = area_resize(const, out_w, out_h)
            else:
                kernel = ResizeKernel(params["kernel"], a=params.get("a", -0.5))
                out = resize(const, out_w, out_h, kernel, params["convention"])
            assert (out.samples == 77).all(), (name, out_w, out_h)

    worst = 0.0
    for kind in KERNEL_NAMES:
        for conv in CONVENTIONS:
            for n_src, n_dst in ((96, 36), (96, 64), (36, 96), (50, 50)):
                rows = tap_matrix(n_src, n_dst, ResizeKernel(kind), conv).sum(axis=1)
                worst = max(worst, float(np.abs(rows - 1.0).max()))
    assert worst < 1e-6
    print(f"\nidentity + constancy hold; worst row-sum deviation {worst:.2e}")


def _agg_max(report):
    return report.aggregate["max"]["max_abs"]

def _assert_self_pair_silent(report):
    assert report.aggregate["structural_count"] == 0
    assert _agg_max(report) == 0.0
    assert all(rec["psnr"] is None for rec in report.records)


def test_c08_every_variant_pair_diverges_on_the_corpus(corpus_entries, box_entries):
    t0 = time.perf_counter()
    pairs = 0

    dec = {
        k: make_spec([{"stage": "decode", "idct": k}]) for k in DECODER_VARIANTS
    }
    rep = compare(dec["exact"], dec["fast"], corpus_entries, threads=1)
    assert 0.0 < _agg_max(rep) <= 2.0
    pairs += 1
    for k in DECODER_VARIANTS:
        _assert_self_pair_silent(compare(dec[k], dec[k], corpus_entries, threads=1))

    # 36x64 sweep target: 96->36 produces fixed-convention ties and
    # 96->64 produces scaled-convention window-edge ties, so every
    # kernel/convention pair separates on textured inputs.
    names = list(RESIZE_VARIANTS)
    rsz = {
        n: make_spec(
            [
                {"stage": "decode"},
                dict(RESIZE_VARIANTS[n], stage="resize", out_w=36, out_h=64),
            ]
        )
        for n in names
    }
    for i, a in enumerate(names):
        _assert_self_pair_silent(compare(rsz[a], rsz[a], corpus_entries, threads=1))
        for b in names[i + 1 :]:
            rep = compare(rsz[a], rsz[b], corpus_entries, threads=1)
            assert _agg_max(rep) > 0.0, (a, b)
            pairs += 1

    ident = make_spec([{"stage": "decode"}])
    for path in colorspace.ROUNDTRIP_PATHS:
        spec = make_spec([{"stage": "decode"}, {"stage": "color", "path": path}])
        rep = compare(ident, spec, corpus_entries, threads=1)
        assert _agg_max(rep) > 0.0, path
        pairs += 1
        _assert_self_pair_silent(compare(spec, spec, corpus_entries, threads=1))

    prec = {
        d: make_spec([{"stage": "decode"}, {"stage": "precision", "dtype": d}])
        for d in ("fp32", "int8")
    }
    rep = compare(prec["fp32"], prec["int8"], corpus_entries, threads=1)
    assert _agg_max(rep) > 0.0
    pairs += 1
    for d in prec:
        _assert_self_pair_silent(compare(prec[d], prec[d], corpus_entries, threads=1))

    pool = {
        m: make_spec(
            [{"stage": "decode"}, {"stage": "pool", "k": 3, "s": 2, "mode": m}]
        )
        for m in ("floor", "ceil")
    }
    rep = compare(pool["floor"], pool["ceil"], corpus_entries, threads=1)
    # ceil mode diverges structurally: every input reports a shape mismatch
    assert rep.aggregate["structural_count"] == len(corpus_entries)
    pairs += 1
    for m in pool:
        _assert_self_pair_silent(compare(pool[m], pool[m], corpus_entries, threads=1))

    ups = {
        k: make_spec(
            [
                {"stage": "decode"},
                {"stage": "upsample", "kind": k, "out_w": 128, "out_h": 128},
            ]
        )
        for k in ("nearest", "bilinear")
    }
    rep = compare(ups["nearest"], ups["bilinear"], corpus_entries, threads=1)
    assert _agg_max(rep) > 0.0
    pairs += 1
    for k in ups:
        _assert_self_pair_silent(compare(ups[k], ups[k], corpus_entries, threads=1))

    bbox = {
        o: make_spec([{"stage": "bbox", "aligned_offset": o}]) for o in (0, 1)
    }
    rep = compare(bbox[0], bbox[1], box_entries, threads=1)
    assert _agg_max(rep) > 0.0
    pairs += 1
    for o in bbox:
        _assert_self_pair_silent(compare(bbox[o], bbox[o], box_entries, threads=1))

    elapsed = time.perf_counter() - t0
    assert pairs == 114
    assert elapsed < 60.0
    print(f"\n{pairs} variant pairs all diverge, self-pairs silent, {elapsed:.1f}s")


def test_c09_aligned_offset_shift_and_nms_flip():
    r = np.random.default_rng(9)
    x1 = r.integers(0, 100, 200).astype(np.float64)
    y1 = r.integers(0, 100, 200).astype(np.float64)
    w = r.integers(1, 60, 200).astype(np.float64)
    h = r.integers(1, 60, 200).astype(np.float64)
    anchors = np.stack([x1, y1, x1 + w, y1 + h], axis=1)
    shifted = xywh2xyxy(xyxy2xywh(anchors, offset=1), offset=0)
    assert np.array_equal(shifted[:, :2], anchors[:, :2])
    assert np.array_equal(shifted[:, 2:], anchors[:, 2:] + 1.0)

    a = BBox(0, 0, 2, 2, score=0.9)
    b = BBox(1, 1, 3, 3, score=0.8)
    assert iou(a, b, 0) == pytest.approx(1.0 / 7.0)
    assert iou(a, b, 1) == pytest.approx(4.0 / 14.0)
    assert iou(a, b, 0) < 0.2 < iou(a, b, 1)
    assert len(nms([a, b], 0.2, offset=0)) == 2
    assert nms([a, b], 0.2, offset=1) == [a]
    print("\nfar corner shifts by exactly +1; NMS kept set flips at 0.2")


def test_c10_mix_sampler_reproducibility_and_uniformity():
    decoders = ("libjpeg", "turbo", "opencv", "wand")

    def draws():
        policy = MixPolicy(decoders=decoders, default_decoder="libjpeg", seed=0)
        return [mix_sample(policy, i) for i in range(10_000)]

    seq = draws()
    as_bytes = "\n".join(f"{d} {r}" for d, r in seq).encode()
    assert as_bytes == "\n".join(f"{d} {r}" for d, r in draws()).encode()

    counts = [sum(1 for d, _ in seq if d == name) for name in decoders]
    assert counts == [2492, 2496, 2509, 2503]
    result = scipy.stats.chisquare(counts)
    assert result.pvalue > 0.01
    print(f"\ncounts {counts}, chi-square p = {result.pvalue:.4f}")


def test_c11_reports_identical_across_worker_counts(
    corpus_entries, tmp_path, monkeypatch
):
    a = make_spec(
        [
            {"stage": "decode", "idct": "exact"},
            dict(RESIZE_VARIANTS["bilinear-fixed"], stage="resize", out_w=48, out_h=48),
        ]
    )
    b = make_spec(
        [
            {"stage": "decode", "idct": "fast"},
            dict(RESIZE_VARIANTS["bicubic-fixed"], stage="resize", out_w=48, out_h=48),
        ]
    )
    outputs = {}
    for n in ("1", "4"):
        monkeypatch.setenv("SYSNOISE_THREADS", n)
        diff_dir = tmp_path / f"diffs_{n}"
        report = compare(a, b, corpus_entries, diff_dir=str(diff_dir))
        ppms = {p.name: p.read_bytes() for p in sorted(diff_dir.iterdir())}
        outputs[n] = (report.to_json(), ppms)
    assert outputs["1"] == outputs["4"]
    assert len(outputs["1"][1]) == len(corpus_entries)
    print("\nreport JSON and diff PPMs bit-identical for 1 and 4 workers")


def test_c12_cli_compare_end_to_end(tmp_path, corpus_dir):
    spec_a = [
        {"stage": "decode", "idct": "exact"},
        {"stage": "color", "path": "yuv444_float"},
        {"stage": "resize", "kernel": "bilinear", "convention": "fixed",
         "out_w": 48, "out_h": 48},
        {"stage": "resize", "kernel": "nearest", "convention": "fixed",
         "out_w": 24, "out_h": 24},
    ]
    spec_b = [
        {"stage": "decode", "idct": "fast"},
        {"stage": "color", "path": "yuv420_fixed"},
        {"stage": "resize", "kernel": "bicubic", "convention": "fixed",
         "out_w": 48, "out_h": 48},
        {"stage": "resize", "kernel": "bilinear", "convention": "scaled",
         "out_w": 24, "out_h": 24},
    ]
    a_path = tmp_path / "a.json"
    b_path = tmp_path / "b.json"
    a_path.write_text(json.dumps(spec_a))
    b_path.write_text(json.dumps(spec_b))
    report_path = tmp_path / "report.json"
    diff_dir = tmp_path / "diffs"

    cmd = [
        sys.executable, "-m", "sysnoise", "compare",
        "--a", str(a_path), "--b", str(b_path),
        "--corpus", str(corpus_dir),
        "--report", str(report_path), "--diff-dir", str(diff_dir),
    ]
    t0 = time.perf_counter()
    proc = subprocess.run(cmd, capture_output=True, text=True)
    elapsed = time.perf_counter() - t0
    assert proc.returncode == 0, proc.stderr
    assert elapsed < 10.0

    obj = json.loads(report_path.read_text())
    assert set(obj) == {
        "aggregate", "inputs", "per_input", "pipeline_a", "pipeline_b",
        "toolkit_version",
    }
    assert obj["inputs"] == 10
    assert len(obj["pipeline_a"]) == 4 and len(obj["pipeline_b"]) == 4
    assert obj["aggregate"]["max"]["max_abs"] > 0.0
    for rec in obj["per_input"]:
        assert rec["kind"] == "metrics"
        assert {"id", "mae", "max_abs", "rmse", "psnr", "psnr_peak",
                "frac_diff", "diff_image"} <= set(rec)
        with open(diff_dir / rec["diff_image"], "rb") as f:
            img = read_ppm(f)
        assert (img.width, img.height) == (24, 24)
    print(f"\nCLI compare over 10 inputs in {elapsed:.2f}s, report + diffs valid")
