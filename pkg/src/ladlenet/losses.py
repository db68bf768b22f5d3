"""Training objective: L1, SSIM, multi-scale SSIM and their mix.

All functions take ``(batch, channel, height, width)`` tensors, work per
channel with a separable Gaussian window (valid positions only) and average
the resulting maps over every position, channel and batch entry.

Two readings of the per-scale parameters ``omega`` are supported:

``sigma`` (default)
    each entry is the standard deviation of a Gaussian window applied at
    full resolution; the scales are combined with uniform weights ``1/S``.
``weight-normalized``
    each entry is a combination weight (normalized to sum to 1) over a
    dyadic 2x2 average-pooling pyramid evaluated with the base SSIM window.
"""
import math
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

from .errors import ConfigError, ShapeError

OMEGA_MODES = ("sigma", "weight-normalized")


@dataclass(frozen=True)
class SsimParams:
    c1: float = (0.01 * 1.0) ** 2
    c2: float = (0.03 * 1.0) ** 2
    window_size: int = 11
    sigma: float = 1.5

    def validate(self):
        if self.c1 <= 0 or self.c2 <= 0:
            raise ConfigError("SSIM stabilizers c1 and c2 must be positive")
        if self.window_size < 1 or self.window_size % 2 == 0 or self.sigma <= 0:
            raise ConfigError("SSIM window must have odd positive size and positive sigma")
        return self


@dataclass(frozen=True)
class MsSsimParams:
    omega: tuple = (0.5, 1.0, 2.0, 4.0, 8.0)
    omega_mode: str = "sigma"

    @property
    def scales(self):
        return len(self.omega)

    def weights(self):
        if self.omega_mode == "sigma":
            return [1.0 / self.scales] * self.scales
        total = float(sum(self.omega))
        return [w / total for w in self.omega]

    def validate(self):
        if self.omega_mode not in OMEGA_MODES:
            raise ConfigError(f"omega_mode must be one of {OMEGA_MODES}, got {self.omega_mode!r}")
        if not self.omega or any(w <= 0 for w in self.omega):
            raise ConfigError("omega must be a non-empty list of positive values")
        return self


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 0.84
    ssim: SsimParams = field(default_factory=SsimParams)
    msssim: MsSsimParams = field(default_factory=MsSsimParams)

    def validate(self):
        if not 0.0 <= self.alpha <= 1.0 or not math.isfinite(self.alpha):
            raise ConfigError(f"loss.alpha must lie in [0, 1], got {self.alpha}")
        self.ssim.validate()
        self.msssim.validate()
        return self


def window_size_for(sigma):
    """Gaussian support covering +-3 sigma (sigma 1.5 gives the usual 11)."""
    return 2 * math.ceil(3 * sigma) + 1


def gaussian_kernel(size, sigma, dtype=torch.float32, device=None):
    coords = torch.arange(size, dtype=torch.float64) - (size - 1) / 2.0
    g = torch.exp(-(coords ** 2) / (2.0 * sigma ** 2))
    return (g / g.sum()).to(dtype=dtype, device=device)


def _check_pair(x, y):
    if x.shape != y.shape:
        raise ShapeError(f"shape mismatch: {tuple(x.shape)} vs {tuple(y.shape)}")
    if x.dim() != 4:
        raise ShapeError(f"expected rank-4 image tensors, got shape {tuple(x.shape)}")


def _blur(x, g):
    c = x.shape[1]
    k = g.numel()
    x = F.conv2d(x, g.view(1, 1, 1, k).expand(c, 1, 1, k), groups=c)
    return F.conv2d(x, g.view(1, 1, k, 1).expand(c, 1, k, 1), groups=c)


def ssim_map(x, y, size, sigma, c1, c2):
    if min(x.shape[-2:]) < size:
        raise ShapeError(f"image {tuple(x.shape[-2:])} smaller than the {size}x{size} SSIM window")
    g = gaussian_kernel(size, sigma, x.dtype, x.device)
    mu_x, mu_y = _blur(x, g), _blur(y, g)
    var_x = _blur(x * x, g) - mu_x ** 2
    var_y = _blur(y * y, g) - mu_y ** 2
    cov = _blur(x * y, g) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
    den = (mu_x ** 2 + mu_y ** 2 + c1) * (var_x + var_y + c2)
    return num / den


def l1_loss(fvi, vi):
    _check_pair(fvi, vi)
    return (fvi - vi).abs().mean()


def ssim(fvi, vi, p: SsimParams = SsimParams()):
    _check_pair(fvi, vi)
    return ssim_map(fvi, vi, p.window_size, p.sigma, p.c1, p.c2).mean()


def ms_ssim(fvi, vi, p: MsSsimParams = MsSsimParams(), ssim_params: SsimParams = SsimParams()):
    _check_pair(fvi, vi)
    weights = p.weights()
    c1, c2 = ssim_params.c1, ssim_params.c2
    if p.omega_mode == "sigma":
        need = window_size_for(max(p.omega))
        if min(fvi.shape[-2:]) < need:
            raise ShapeError(f"image {tuple(fvi.shape[-2:])} too small for sigma {max(p.omega)} (needs {need})")
        terms = [
            w * ssim_map(fvi, vi, window_size_for(s), s, c1, c2).mean()
            for w, s in zip(weights, p.omega)
        ]
        return torch.stack(terms).sum()

    need = ssim_params.window_size * 2 ** (p.scales - 1)
    if min(fvi.shape[-2:]) < need:
        raise ShapeError(f"image {tuple(fvi.shape[-2:])} too small for {p.scales} dyadic scales (needs {need})")
    x, y = fvi, vi
    terms = []
    for s, w in enumerate(weights):
        if s:
            x, y = F.avg_pool2d(x, 2), F.avg_pool2d(y, 2)
        terms.append(w * ssim_map(x, y, ssim_params.window_size, ssim_params.sigma, c1, c2).mean())
    return torch.stack(terms).sum()


def ms_ssim_loss(fvi, vi, p: MsSsimParams = MsSsimParams(), ssim_params: SsimParams = SsimParams()):
    return 1.0 - ms_ssim(fvi, vi, p, ssim_params)


def total_loss(fvi, vi, cfg: LossConfig = LossConfig()):
    a = cfg.alpha
    return a * ms_ssim_loss(fvi, vi, cfg.msssim, cfg.ssim) + (1.0 - a) * l1_loss(fvi, vi)
