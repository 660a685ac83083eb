"""Command-line front end.

One subcommand per stage family plus ``run``/``compare`` for composed
pipelines.  stdout carries one machine-parseable JSON object per
invocation (``mixtrain-sample`` emits one space-delimited choice pair
per line instead).  Exit codes: 0 success, 1 usage error, 2 data error.
"""

import argparse
import io
import json
import os
import sys

import numpy as np

from . import __version__, colorspace, detpost, jpegdec, netops, pipeline, precision
from . import resize as _resize
from . import tensorcore


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage problems; this toolkit reserves 2 for
    # data errors, so remap.
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _size(text):
    try:
        w, h = text.lower().split("x")
        w, h = int(w), int(h)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WxH, got {text!r}") from None
    if w < 1 or h < 1:
        raise argparse.ArgumentTypeError(f"size must be positive, got {text!r}")
    return w, h


def _nonneg(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be non-negative, got {v}")
    return v


def _read_bytes(path):
    with open(path, "rb") as f:
        return f.read()


def _read_image(path):
    with open(path, "rb") as f:
        return tensorcore.read_ppm(f)


def _write_image(img, path):
    with open(path, "wb") as f:
        tensorcore.write_ppm(img, f)


def _read_tensor(path):
    with open(path, "rb") as f:
        return tensorcore.load_tensor(f)


def _write_tensor(t, path):
    with open(path, "wb") as f:
        tensorcore.save_tensor(t, f)


def _emit(obj):
    print(json.dumps(obj, sort_keys=True))


def _cmd_decode(args):
    img = jpegdec.decode_bytes(_read_bytes(args.input), idct=args.idct)
    _write_image(img, args.output)
    _emit({"width": img.width, "height": img.height, "out": args.output})
    return 0


def _cmd_resize(args):
    img = _read_image(args.input)
    w, h = args.size
    if args.kernel == "area":
        out = _resize.area_resize(img, w, h)
    else:
        kernel = _resize.ResizeKernel(args.kernel, a=args.a)
        out = _resize.resize(img, w, h, kernel, args.convention)
    _write_image(out, args.output)
    _emit({"width": out.width, "height": out.height, "out": args.output})
    return 0


def _cmd_convert_color(args):
    img = _read_image(args.input)
    out = colorspace.color_roundtrip(img, args.path)
    _write_image(out, args.output)
    _emit({"width": out.width, "height": out.height, "path": args.path,
           "out": args.output})
    return 0


def _cmd_quantize(args):
    t = _read_tensor(args.input)
    summary = {"dtype": args.dtype, "shape": list(t.shape), "out": args.output}
    if args.dtype == "fp16":
        out = precision.cast_fp16(t)
    else:
        params = precision.calibrate_minmax(t)
        out = precision.dequantize(precision.quantize(t, params), params)
        summary["s"] = params.s
        summary["z"] = params.z
    _write_tensor(out, args.output)
    _emit(summary)
    return 0


def _cmd_pool(args):
    t = _read_tensor(args.input)
    cfg = netops.PoolConfig(args.k, args.s, args.p, args.mode == "ceil")
    out = netops.maxpool2d(t, cfg)
    _write_tensor(out, args.output)
    _emit({"shape": list(out.shape), "out": args.output})
    return 0


def _cmd_upsample(args):
    t = _read_tensor(args.input)
    w, h = args.size
    if args.kind == "nearest":
        out = netops.upsample_nearest(t, h, w)
    else:
        out = netops.upsample_bilinear(t, h, w, args.align)
    _write_tensor(out, args.output)
    _emit({"shape": list(out.shape), "out": args.output})
    return 0


def _cmd_bbox_decode(args):
    anchors = detpost.read_boxes_text(_read_bytes(args.anchors).decode("ascii"))
    if args.offsets:
        rows = []
        for line in _read_bytes(args.offsets).decode("ascii").splitlines():
            if line.split():
                rows.append([float(v) for v in line.split()])
        offsets = np.asarray(rows, dtype=float)
    else:
        offsets = np.zeros((len(anchors), 4))
    coder = detpost.BoxCoder(aligned_offset=args.aligned, clamp_max=args.clamp)
    boxes = detpost.decode_boxes(anchors, offsets, coder)
    if args.round:
        boxes = detpost.round_boxes(boxes)
    with open(args.output, "w") as f:
        f.write(detpost.write_boxes_text(boxes))
    _emit({"boxes": len(boxes), "out": args.output})
    return 0


def _cmd_diff(args):
    a = _read_image(args.a)
    b = _read_image(args.b)
    dimg = tensorcore.diff_image(a, b)
    record, _ = pipeline._metrics_record("diff", a, b)
    del record["id"], record["kind"]
    if args.out:
        _write_image(dimg.to_image(), args.out)
        record["out"] = args.out
    _emit(record)
    return 0


def _load_payload(path):
    data = _read_bytes(path)
    if data[:2] == b"\xff\xd8":
        return data
    if data[:4] == b"SNT1":
        return tensorcore.load_tensor(io.BytesIO(data))
    raise ValueError(f"{path}: neither a JPEG stream nor a tensor container")


def _cmd_run(args):
    spec = pipeline.parse_spec(_read_bytes(args.spec).decode("utf-8"))
    out = pipeline.run_pipeline(spec, _load_payload(args.input))
    _write_tensor(out, args.output)
    _emit({"dtype": out.dtype, "shape": list(out.shape), "out": args.output})
    return 0


def _corpus_entries(directory):
    names = sorted(
        n
        for n in os.listdir(directory)
        if n.lower().endswith((".jpg", ".jpeg", ".snt"))
    )
    entries = []
    for name in names:
        entries.append((os.path.splitext(name)[0], _load_payload(os.path.join(directory, name))))
    if not entries:
        raise ValueError(f"no corpus files (*.jpg, *.jpeg, *.snt) in {directory}")
    return entries


def _cmd_compare(args):
    spec_a = pipeline.parse_spec(_read_bytes(args.a).decode("utf-8"))
    spec_b = pipeline.parse_spec(_read_bytes(args.b).decode("utf-8"))
    entries = _corpus_entries(args.corpus)
    diff_dir = args.diff_dir or (os.path.dirname(os.path.abspath(args.report)) or ".")
    report = pipeline.compare(spec_a, spec_b, entries, diff_dir=diff_dir)
    with open(args.report, "w") as f:
        f.write(report.to_json())
        f.write("\n")
    _emit({
        "report": args.report,
        "inputs": len(report.records),
        "aggregate": report.aggregate,
    })
    return 0


def _cmd_mixtrain_sample(args):
    policy = pipeline.MixPolicy(
        mix_decoder=not args.no_mix_decoder,
        mix_resize=not args.no_mix_resize,
        seed=args.seed,
    )
    for i in range(args.iters):
        decoder, rsz = pipeline.mix_sample(policy, i)
        print(f"{decoder} {rsz}")
    return 0


def build_parser():
    parser = _Parser(prog="sysnoise", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("decode", help="baseline JPEG to PPM")
    p.add_argument("--idct", choices=jpegdec.IDCT_KINDS, default="exact")
    p.add_argument("input")
    p.add_argument("output")
    p.set_defaults(func=_cmd_decode)

    p = sub.add_parser("resize", help="resample a PPM")
    p.add_argument("--kernel", required=True,
                   choices=tuple(_resize.KERNEL_NAMES) + ("area",))
    p.add_argument("--convention", choices=_resize.CONVENTIONS, default="fixed")
    p.add_argument("--a", type=float, default=-0.5,
                   help="bicubic sharpness (-0.5 or -0.75)")
    p.add_argument("--size", type=_size, required=True, metavar="WxH")
    p.add_argument("input")
    p.add_argument("output")
    p.set_defaults(func=_cmd_resize)

    p = sub.add_parser("convert-color", help="RGB->YUV->RGB round trip")
    p.add_argument("--path", choices=colorspace.ROUNDTRIP_PATHS, required=True)
    p.add_argument("input")
    p.add_argument("output")
    p.set_defaults(func=_cmd_convert_color)

    p = sub.add_parser("quantize", help="precision round trip on a tensor")
    p.add_argument("--dtype", choices=("fp16", "int8"), required=True)
    p.add_argument("input")
    p.add_argument("output")
    p.set_defaults(func=_cmd_quantize)

    p = sub.add_parser("pool", help="max-pool an NCHW tensor")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--s", type=int, required=True)
    p.add_argument("--p", type=int, default=0)
    p.add_argument("--mode", choices=("floor", "ceil"), default="floor")
    p.add_argument("input")
    p.add_argument("output")
    p.set_defaults(func=_cmd_pool)

    p = sub.add_parser("upsample", help="upsample an NCHW tensor")
    p.add_argument("--kind", choices=netops.UPSAMPLE_KINDS, required=True)
    p.add_argument("--align",
                   choices=(netops.ALIGN_HALF_PIXEL, netops.ALIGN_CORNERS),
                   default=netops.ALIGN_HALF_PIXEL)
    p.add_argument("--size", type=_size, required=True, metavar="WxH")
    p.add_argument("input")
    p.add_argument("output")
    p.set_defaults(func=_cmd_upsample)

    p = sub.add_parser("bbox-decode", help="apply deltas to anchor boxes")
    p.add_argument("--aligned", type=int, choices=(0, 1), required=True)
    p.add_argument("--offsets", help="delta rows, 4k floats per line")
    p.add_argument("--clamp", type=float, default=detpost.CLAMP_DEFAULT)
    p.add_argument("--round", action="store_true",
                   help="round coordinates to integers")
    p.add_argument("anchors")
    p.add_argument("output")
    p.set_defaults(func=_cmd_bbox_decode)

    p = sub.add_parser("diff", help="pixel difference of two PPMs")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--out", help="write the scaled diff image here")
    p.set_defaults(func=_cmd_diff)

    p = sub.add_parser("run", help="run a pipeline spec on one input")
    p.add_argument("--spec", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", dest="output", required=True)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("compare", help="divergence of two pipelines over a corpus")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--diff-dir", help="defaults to the report's directory")
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("mixtrain-sample",
                       help="per-iteration implementation choices")
    p.add_argument("--seed", type=_nonneg, required=True)
    p.add_argument("--iters", type=_nonneg, required=True)
    p.add_argument("--no-mix-decoder", action="store_true")
    p.add_argument("--no-mix-resize", action="store_true")
    p.set_defaults(func=_cmd_mixtrain_sample)

    return parser


_DATA_ERRORS = (ValueError, OverflowError, OSError, pipeline.StageExecutionError)


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else 0
    try:
        return args.func(args)
    except _DATA_ERRORS as exc:
        print(f"sysnoise: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
