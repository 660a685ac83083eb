"""Shared fixtures: a small frozen synthetic corpus.

The image corpus is ten 96x96 JPEGs encoded with Pillow (an independent
reference encoder): textured luma, chroma held constant on 16x16 tiles.
Tile-constant chroma keeps the encoder's chroma AC at exactly zero, so
both iDCT kernels reproduce the chroma planes bit-identically and the
full-decode exact-vs-fast difference stays within the luma-path bound
of 2.  Two of the ten images are grayscale; quality and subsampling
alternate so both 4:4:4 and 4:2:0 code paths are exercised.

Everything is seeded; the corpus is byte-identical across runs.
"""

import io

import numpy as np
import pytest
from PIL import Image

from sysnoise.tensorcore import Tensor

CORPUS_SIZE = 10


def corpus_array(i):
    """Source pixels for corpus image ``i``: (array, is_gray)."""
    r = np.random.default_rng(100 + i)
    h = w = 96
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    f1, f2, f3 = r.uniform(6, 20, 3)
    base = (
        128
        + 40 * np.sin(xx / f1 + r.uniform(0, 6))
        + 30 * np.cos(yy / f2 + r.uniform(0, 6))
        + 18 * np.sin((xx + yy) / f3)
    )
    lum = np.clip(base + r.normal(0, 10, size=(h, w)), 40, 215)
    if i % 5 == 4:
        return lum.astype(np.uint8), True
    # Per-channel offsets constant on 16x16 tiles; the offsets cancel in
    # the encoder's chroma rows, leaving chroma blocks DC-only.
    ti, tj = np.mgrid[0 : h // 16, 0 : w // 16].astype(np.float64)
    chan = []
    for _ in range(3):
        p1, p2 = r.uniform(0, 6, 2)
        tile = 14 * np.sin(ti / 1.3 + p1) + 13 * np.cos(tj / 1.7 + p2)
        offs = np.repeat(np.repeat(tile, 16, axis=0), 16, axis=1)
        chan.append(np.clip(lum + offs, 0, 255))
    return np.stack(chan, axis=-1).astype(np.uint8), False


def encode_corpus_jpeg(i):
    """Corpus image ``i`` as baseline JPEG bytes."""
    arr, gray = corpus_array(i)
    buf = io.BytesIO()
    Image.fromarray(arr, "L" if gray else "RGB").save(
        buf,
        format="JPEG",
        quality=(85, 90, 92, 95)[i % 4],
        subsampling=0 if (gray or i % 2 == 0) else 2,
    )
    return buf.getvalue()


def box_rows(i, n=12):
    """Synthetic (n, 8) anchor+delta rows for the detection pipelines."""
    r = np.random.default_rng(500 + i)
    x1 = r.uniform(0, 80, n)
    y1 = r.uniform(0, 80, n)
    w = r.uniform(4, 40, n)
    h = r.uniform(4, 40, n)
    deltas = r.normal(0, 0.3, (n, 4))
    rows = np.column_stack([x1, y1, x1 + w, y1 + h, deltas])
    return rows.astype(np.float32)


@pytest.fixture(scope="session")
def corpus_entries():
    """(id, jpeg bytes) pairs, the pipeline-level corpus."""
    return [(f"img{i:02d}", encode_corpus_jpeg(i)) for i in range(CORPUS_SIZE)]


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory, corpus_entries):
    """The same corpus laid out as a directory of .jpg files."""
    d = tmp_path_factory.mktemp("corpus")
    for name, data in corpus_entries:
        (d / f"{name}.jpg").write_bytes(data)
    return d


@pytest.fixture(scope="session")
def box_entries():
    """(id, (N, 8) tensor) pairs for bbox-stage pipelines."""
    return [
        (f"boxes{i:02d}", Tensor("f32", (12, 8), box_rows(i)))
        for i in range(CORPUS_SIZE)
    ]
