"""Deterministic toy datasets in the KAIST directory layout.

Thermal frames are smooth random heat fields (warm blobs over a vertical
gradient); the matching visible frame is a fixed pointwise color mapping of
the heat field, so a translator can learn it exactly. Used by the test suite
and for desk-scale runs of the CLI.
"""
from pathlib import Path

import numpy as np
from PIL import Image

from .data import TIR_DIR, VI_DIR


def heat_field(rng, height, width, blobs=4):
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    field = 0.25 + 0.35 * yy / max(height - 1, 1)
    for _ in range(blobs):
        cy, cx = rng.uniform(0, height), rng.uniform(0, width)
        sy, sx = rng.uniform(0.08, 0.25) * height, rng.uniform(0.08, 0.25) * width
        amp = rng.uniform(-0.3, 0.5)
        field += amp * np.exp(-((yy - cy) ** 2 / (2 * sy ** 2) + (xx - cx) ** 2 / (2 * sx ** 2)))
    return np.clip(field, 0.0, 1.0)


def colorize(t):
    r = 0.15 + 0.8 * t ** 1.5
    g = 0.35 + 0.4 * np.sin(np.pi * t)
    b = 0.9 - 0.7 * t
    return np.clip(np.stack([r, g, b], axis=-1), 0.0, 1.0)


def synthetic_pair(rng, height=64, width=80):
    t = heat_field(rng, height, width)
    tir = np.round(t * 255).astype(np.uint8)
    vi = np.round(colorize(tir / 255.0) * 255).astype(np.uint8)
    return tir, vi


def make_synthetic_kaist(root, layout=None, size=(64, 80), seed=0, suffix=".png"):
    """Write a toy dataset; ``layout`` maps set -> {sequence: frame count}.

    Returns the number of pairs written.
    """
    layout = layout or {"set01": {"V000": 8}}
    rng = np.random.default_rng(seed)
    root = Path(root)
    n = 0
    for set_id in sorted(layout):
        for seq in sorted(layout[set_id]):
            tir_dir = root / set_id / seq / TIR_DIR
            vi_dir = root / set_id / seq / VI_DIR
            tir_dir.mkdir(parents=True, exist_ok=True)
            vi_dir.mkdir(parents=True, exist_ok=True)
            for i in range(layout[set_id][seq]):
                tir, vi = synthetic_pair(rng, *size)
                Image.fromarray(tir, mode="L").save(tir_dir / f"I{i:05d}{suffix}")
                Image.fromarray(vi, mode="RGB").save(vi_dir / f"I{i:05d}{suffix}")
                n += 1
    return n
