"""KAIST-style color/thermal pair ingestion, splitting and preprocessing.

Expected layout::

    root/
      set01/
        V000/
          lwir/I00000.jpg
          visible/I00000.jpg
        V001/...
      set07/...

A pair is a thermal frame and a visible frame sharing the same file stem in
the same sequence directory.
"""
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
import torch
from PIL import Image, UnidentifiedImageError
from torchvision.transforms import InterpolationMode
from torchvision.transforms import functional as TF

from .errors import ConfigError, DataError

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".jpg", ".jpeg", ".png", ".bmp", ".tif", ".tiff")
TIR_DIR = "lwir"
VI_DIR = "visible"
SPLITS = ("train", "test")


@dataclass(frozen=True)
class ImagePair:
    tir_path: str
    vi_path: str
    set_id: str
    sequence: str
    frame_id: str

    @property
    def key(self):
        return f"{self.set_id}/{self.sequence}/{self.frame_id}"


@dataclass(frozen=True)
class PreprocessSpec:
    resize_to: tuple = (300, 400)
    crop_to: tuple = (192, 256)

    def validate(self):
        (rh, rw), (ch, cw) = self.resize_to, self.crop_to
        if min(rh, rw, ch, cw) < 1:
            raise ConfigError("resize and crop sizes must be positive")
        if ch > rh or cw > rw:
            raise ConfigError(f"crop {self.crop_to} does not fit inside resize {self.resize_to}")
        return self

    @property
    def offsets(self):
        (rh, rw), (ch, cw) = self.resize_to, self.crop_to
        return (rh - ch) // 2, (rw - cw) // 2


@dataclass
class DatasetManifest:
    pairs: list
    split: list | None = None
    seed: int | None = None
    unmatched: list = field(default_factory=list)

    def __len__(self):
        return len(self.pairs)

    def subset(self, split=None):
        """Pairs assigned to ``split`` (all pairs when ``split`` is None)."""
        if split is None:
            return list(self.pairs)
        if split not in SPLITS:
            raise DataError(f"unknown split {split!r}")
        if self.split is None:
            raise DataError("manifest has not been split")
        return [p for p, s in zip(self.pairs, self.split) if s == split]

    def find(self, key):
        for p in self.pairs:
            if p.key == key or p.frame_id == key:
                return p
        raise DataError(f"pair {key!r} not in manifest")

    def check_partition(self):
        if self.split is None:
            return
        if len(self.split) != len(self.pairs) or any(s not in SPLITS for s in self.split):
            raise DataError("split labels must assign every pair to train or test")

    def to_dict(self):
        return {
            "seed": self.seed,
            "pairs": [{**asdict(p), "split": s} for p, s in
                      zip(self.pairs, self.split or [None] * len(self.pairs))],
            "unmatched": list(self.unmatched),
        }

    def save(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=1))
        return path

    @classmethod
    def load(cls, path):
        try:
            raw = json.loads(Path(path).read_text())
            pairs = [ImagePair(**{k: v for k, v in p.items() if k != "split"}) for p in raw["pairs"]]
            labels = [p.get("split") for p in raw["pairs"]]
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise DataError(f"cannot read manifest {path}: {exc}") from exc
        split = labels if labels and all(s is not None for s in labels) else None
        m = cls(pairs, split, raw.get("seed"), raw.get("unmatched", []))
        m.check_partition()
        return m


def _frames(directory):
    if not directory.is_dir():
        return {}
    return {p.stem: p for p in sorted(directory.iterdir()) if p.suffix.lower() in IMAGE_SUFFIXES}


def scan_dataset(root, sets=None, sequences=None) -> DatasetManifest:
    """List every thermal/visible pair under ``root``.

    ``sets`` restricts the set directories (default: all ``set*``);
    ``sequences`` is an optional allow-list of ``"setNN/VNNN"`` entries, which
    is how a daytime-only subset is selected. Frames without a partner are
    logged and recorded in ``manifest.unmatched``.
    """
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset root not found: {root}")
    if sets is None:
        set_dirs = sorted(p for p in root.iterdir() if p.is_dir() and p.name.startswith("set"))
    else:
        set_dirs = [root / s for s in sorted(sets)]
        missing = [str(d) for d in set_dirs if not d.is_dir()]
        if missing:
            raise DataError(f"set directories not found: {', '.join(missing)}")
    allow = set(sequences) if sequences else None

    pairs, unmatched = [], []
    for set_dir in set_dirs:
        for seq_dir in sorted(p for p in set_dir.iterdir() if p.is_dir()):
            if allow is not None and f"{set_dir.name}/{seq_dir.name}" not in allow:
                continue
            tir, vi = _frames(seq_dir / TIR_DIR), _frames(seq_dir / VI_DIR)
            for stem in sorted(tir.keys() | vi.keys()):
                if stem in tir and stem in vi:
                    pairs.append(ImagePair(str(tir[stem]), str(vi[stem]), set_dir.name, seq_dir.name, stem))
                else:
                    orphan = tir.get(stem) or vi.get(stem)
                    unmatched.append(str(orphan))
                    logger.warning("unpaired frame skipped: %s", orphan)
    if not pairs:
        raise DataError(f"no thermal/visible pairs found under {root}")
    return DatasetManifest(pairs, unmatched=unmatched)


def split_manifest(m: DatasetManifest, ratio=0.8, seed=0) -> DatasetManifest:
    """Seeded uniform shuffle, then the first ``floor(ratio * N)`` pairs train."""
    if not 0.0 < ratio < 1.0:
        raise ConfigError(f"split ratio must lie in (0, 1), got {ratio}")
    n = len(m.pairs)
    n_train = math.floor(Fraction(repr(float(ratio))) * n)
    order = np.random.default_rng(seed).permutation(n)
    labels = ["test"] * n
    for i in order[:n_train]:
        labels[i] = "train"
    return DatasetManifest(list(m.pairs), labels, seed, list(m.unmatched))


def decode_image(path) -> torch.Tensor:
    """Decode to a (3, H, W) float tensor in [0, 1]; gray sources are replicated."""
    try:
        with Image.open(path) as img:
            img.load()
            if img.mode in ("I;16", "I;16B", "I;16L", "I"):
                arr = np.asarray(img, dtype=np.float64)
                arr = arr / (65535.0 if img.mode.startswith("I;16") else max(arr.max(), 1.0))
                arr = np.repeat(arr[..., None], 3, axis=2)
            else:
                arr = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
    except (OSError, UnidentifiedImageError, ValueError) as exc:
        raise DataError(f"cannot decode image {path}: {exc}") from exc
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DataError(f"empty image {path}")
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(2, 0, 1))).float()


def prepare(img: torch.Tensor, spec: PreprocessSpec = PreprocessSpec()) -> torch.Tensor:
    out = TF.resize(img, list(spec.resize_to), interpolation=InterpolationMode.BILINEAR, antialias=True)
    top, left = spec.offsets
    ch, cw = spec.crop_to
    return out[:, top:top + ch, left:left + cw].clamp(0.0, 1.0).contiguous()


def load_image(path, spec: PreprocessSpec = PreprocessSpec()) -> torch.Tensor:
    return prepare(decode_image(path), spec)


def preprocess(pair: ImagePair, spec: PreprocessSpec = PreprocessSpec()):
    return load_image(pair.tir_path, spec), load_image(pair.vi_path, spec)


def epoch_order(manifest, split, seed, epoch=0):
    pairs = manifest.subset(split)
    order = np.random.default_rng([int(seed), int(epoch)]).permutation(len(pairs))
    return [pairs[i] for i in order]


def batches(manifest, split, batch_size, seed, epoch=0, spec=PreprocessSpec(), cache=None):
    """Yield ``(tir, vi)`` batches covering ``split`` once, in a seeded order.

    The final partial batch is kept. ``cache`` (a dict) memoizes decoded
    pairs across epochs for small datasets.
    """
    if batch_size < 1:
        raise ConfigError(f"batch size must be >= 1, got {batch_size}")
    order = epoch_order(manifest, split, seed, epoch)
    for start in range(0, len(order), batch_size):
        tirs, vis = [], []
        for pair in order[start:start + batch_size]:
            if cache is not None and pair.key in cache:
                t, v = cache[pair.key]
            else:
                t, v = preprocess(pair, spec)
                if cache is not None:
                    cache[pair.key] = (t, v)
            tirs.append(t)
            vis.append(v)
        yield torch.stack(tirs), torch.stack(vis)
