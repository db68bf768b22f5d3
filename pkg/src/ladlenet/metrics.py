"""Evaluation metrics and the per-pair report.

Every metric takes the translated image first and the ground truth second.
Images may be numpy arrays or tensors shaped (C, H, W), (1, C, H, W) or
(H, W), with values in [0, 1]. SSIM and MS-SSIM reuse the training-loss
kernels in float64 so that reported and optimized values agree.
"""
import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from scipy.signal import convolve2d

from . import losses
from .data import PreprocessSpec, preprocess
from .errors import DataError, ShapeError

METRIC_NAMES = ("SSIM", "MS-SSIM", "L1", "PSNR", "AG", "MSE", "VIF", "CC")
# Direction used to flag the best entry in comparison tables.
HIGHER_IS_BETTER = {"SSIM": True, "MS-SSIM": True, "L1": False, "PSNR": True,
                    "AG": True, "MSE": False, "VIF": True, "CC": True}


def _as_chw(img):
    if isinstance(img, torch.Tensor):
        img = img.detach().cpu().numpy()
    a = np.asarray(img, dtype=np.float64)
    if a.ndim == 4:
        if a.shape[0] != 1:
            raise ShapeError(f"expected a single image, got batch of {a.shape[0]}")
        a = a[0]
    elif a.ndim == 2:
        a = a[None]
    if a.ndim != 3:
        raise ShapeError(f"expected an image array, got shape {a.shape}")
    return a


def _pair(fvi, vi):
    a, b = _as_chw(fvi), _as_chw(vi)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def _torch_pair(fvi, vi):
    a, b = _pair(fvi, vi)
    return torch.from_numpy(a)[None], torch.from_numpy(b)[None]


def mse(fvi, vi):
    a, b = _pair(fvi, vi)
    return float(np.mean((a - b) ** 2))


def l1(fvi, vi):
    a, b = _pair(fvi, vi)
    return float(np.mean(np.abs(a - b)))


def psnr(fvi, vi):
    """PSNR in dB for unit-range images; ``math.inf`` when identical."""
    err = mse(fvi, vi)
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / err)


def ssim(fvi, vi, p: losses.SsimParams = losses.SsimParams()):
    with torch.no_grad():
        return float(losses.ssim(*_torch_pair(fvi, vi), p))


def ms_ssim(fvi, vi, p: losses.MsSsimParams = losses.MsSsimParams(),
            ssim_params: losses.SsimParams = losses.SsimParams()):
    with torch.no_grad():
        return float(losses.ms_ssim(*_torch_pair(fvi, vi), p, ssim_params))


def avg_gradient(img):
    """Average gradient: mean of sqrt((dx^2 + dy^2) / 2) over forward differences."""
    a = _as_chw(img)
    if a.shape[1] < 2 or a.shape[2] < 2:
        raise ShapeError(f"average gradient needs H, W >= 2, got {a.shape[1:]}")
    base = a[:, :-1, :-1]
    dx = a[:, :-1, 1:] - base
    dy = a[:, 1:, :-1] - base
    return float(np.mean(np.sqrt((dx ** 2 + dy ** 2) / 2.0)))


def cc(fvi, vi, per_channel=False):
    """Pearson correlation over all samples (or averaged per channel)."""
    a, b = _pair(fvi, vi)
    if per_channel:
        return float(np.mean([cc(x, y) for x, y in zip(a, b)]))
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        raise ValueError("correlation undefined for a constant image")
    a, b = a.ravel() - a.mean(), b.ravel() - b.mean()
    return float(a @ b) / math.sqrt(float(a @ a) * float(b @ b))


VIF_SCALES = 4
VIF_NOISE_VAR = 2.0
_EPS = 1e-10


def _vif_window(scale):
    n = 2 ** (VIF_SCALES - scale + 1) + 1
    sd = n / 5.0
    x = np.arange(n) - (n - 1) / 2.0
    g = np.exp(-(x[:, None] ** 2 + x[None, :] ** 2) / (2 * sd * sd))
    return g / g.sum()


def _vif_channel(ref, dist):
    num = den = 0.0
    for scale in range(1, VIF_SCALES + 1):
        win = _vif_window(scale)
        if scale > 1:
            ref = convolve2d(ref, win, mode="valid")[::2, ::2]
            dist = convolve2d(dist, win, mode="valid")[::2, ::2]
        if min(ref.shape) < win.shape[0]:
            raise ShapeError("image too small for 4-scale VIF")
        mu1 = convolve2d(ref, win, mode="valid")
        mu2 = convolve2d(dist, win, mode="valid")
        s1 = np.maximum(convolve2d(ref * ref, win, mode="valid") - mu1 * mu1, 0.0)
        s2 = np.maximum(convolve2d(dist * dist, win, mode="valid") - mu2 * mu2, 0.0)
        s12 = convolve2d(ref * dist, win, mode="valid") - mu1 * mu2

        g = s12 / (s1 + _EPS)
        sv = s2 - g * s12
        flat1 = s1 < _EPS
        g[flat1] = 0.0
        sv[flat1] = s2[flat1]
        s1[flat1] = 0.0
        flat2 = s2 < _EPS
        g[flat2] = 0.0
        sv[flat2] = 0.0
        neg = g < 0
        sv[neg] = s2[neg]
        g[neg] = 0.0
        sv = np.maximum(sv, _EPS)

        num += np.sum(np.log10(1.0 + g * g * s1 / (sv + VIF_NOISE_VAR)))
        den += np.sum(np.log10(1.0 + s1 / VIF_NOISE_VAR))
    return num, den


def vif(fvi, vi):
    """Pixel-domain VIF of ``fvi`` against reference ``vi``.

    Four scales with Gaussian windows, noise variance 2 on the 8-bit scale
    (images are multiplied by 255 first); information is pooled over the
    color channels before taking the ratio.
    """
    a, b = _pair(fvi, vi)
    num = den = 0.0
    for dist, ref in zip(a * 255.0, b * 255.0):
        n, d = _vif_channel(ref, dist)
        num += n
        den += d
    if den <= 0.0:
        raise ValueError("VIF undefined for a reference without variance")
    return float(num / den)


def compute_all(fvi, vi, ssim_params=losses.SsimParams(), msssim_params=losses.MsSsimParams()):
    return {
        "SSIM": ssim(fvi, vi, ssim_params),
        "MS-SSIM": ms_ssim(fvi, vi, msssim_params, ssim_params),
        "L1": l1(fvi, vi),
        "PSNR": psnr(fvi, vi),
        "AG": avg_gradient(fvi),
        "MSE": mse(fvi, vi),
        "VIF": vif(fvi, vi),
        "CC": cc(fvi, vi),
    }


@dataclass
class MetricReport:
    pair_ids: list = field(default_factory=list)
    rows: list = field(default_factory=list)

    @property
    def pair_count(self):
        return len(self.rows)

    @property
    def means(self):
        if not self.rows:
            raise DataError("empty metric report")
        return {k: float(np.mean([r[k] for r in self.rows])) for k in METRIC_NAMES}

    def write_csv(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["pair", *METRIC_NAMES])
            for pid, row in zip(self.pair_ids, self.rows):
                w.writerow([pid, *(repr(row[k]) for k in METRIC_NAMES)])
        return path

    def write_json(self, path, **extra):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        means = {k: (v if math.isfinite(v) else str(v)) for k, v in self.means.items()}
        path.write_text(json.dumps({"pair_count": self.pair_count, "means": means, **extra}, indent=2))
        return path

    @classmethod
    def read_csv(cls, path):
        rep = cls()
        with Path(path).open(newline="") as fh:
            for rec in csv.DictReader(fh):
                rep.pair_ids.append(rec["pair"])
                rep.rows.append({k: float(rec[k]) for k in METRIC_NAMES})
        return rep


def _translate(model, x):
    out = model(x)
    return out[0] if isinstance(out, tuple) else out


def evaluate_pairs(manifest, model, split="test", spec=PreprocessSpec(), limit=None, seed=0,
                   batch_size=8, ssim_params=losses.SsimParams(),
                   msssim_params=losses.MsSsimParams()) -> MetricReport:
    """Translate every pair of ``split`` and score it with all eight metrics.

    ``model`` is a LadleNet or any callable mapping a (B, 3, H, W) thermal
    batch to a translated batch. ``limit`` draws a seeded random subset.
    Rows follow manifest order regardless of batching.
    """
    if manifest.split is None:
        split = None
    pairs = manifest.subset(split)
    if limit is not None and limit < len(pairs):
        keep = np.sort(np.random.default_rng(seed).choice(len(pairs), size=limit, replace=False))
        pairs = [pairs[i] for i in keep]
    if not pairs:
        raise DataError("no pairs to evaluate")

    if isinstance(model, torch.nn.Module):
        model.eval()
    report = MetricReport()
    with torch.no_grad():
        for start in range(0, len(pairs), batch_size):
            chunk = pairs[start:start + batch_size]
            loaded = [preprocess(p, spec) for p in chunk]
            fvi = _translate(model, torch.stack([t for t, _ in loaded]))
            for pair, out, (_, vi) in zip(chunk, fvi, loaded):
                if out.shape != vi.shape:
                    raise ShapeError(f"translated {tuple(out.shape)} vs target {tuple(vi.shape)} for {pair.key}")
                report.pair_ids.append(pair.key)
                report.rows.append(compute_all(out, vi, ssim_params, msssim_params))
    return report
