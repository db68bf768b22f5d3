import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from ladlenet.errors import ConfigError, ShapeError
from ladlenet.losses import (LossConfig, MsSsimParams, SsimParams, gaussian_kernel, l1_loss, ms_ssim,
                             ms_ssim_loss, ssim, total_loss, window_size_for)

import oracles


def rand_pair(seed, shape=(1, 3, 64, 64), dtype=torch.float64):
    g = torch.Generator().manual_seed(seed)
    return torch.rand(shape, generator=g, dtype=dtype), torch.rand(shape, generator=g, dtype=dtype)


def test_l1_examples():
    x, _ = rand_pair(0)
    assert l1_loss(x, x).item() == 0.0
    a = torch.full((1, 3, 16, 16), 0.2, dtype=torch.float64)
    b = torch.full((1, 3, 16, 16), 0.7, dtype=torch.float64)
    assert l1_loss(a, b).item() == pytest.approx(0.5, abs=1e-12)


def test_l1_matches_loop_oracle():
    x, y = rand_pair(1, (2, 3, 16, 20))
    assert l1_loss(x, y).item() == pytest.approx(oracles.l1_oracle(x.numpy(), y.numpy()), abs=1e-6)


def test_gaussian_window_sums_to_one():
    g = gaussian_kernel(11, 1.5, torch.float64)
    assert g.sum().item() == pytest.approx(1.0, abs=1e-15)
    assert window_size_for(1.5) == 11
    assert window_size_for(8) == 49


def test_ssim_identity_and_constants():
    x, _ = rand_pair(2)
    assert ssim(x, x).item() == pytest.approx(1.0, abs=1e-12)
    zeros = torch.zeros(1, 3, 32, 32, dtype=torch.float64)
    ones = torch.ones(1, 3, 32, 32, dtype=torch.float64)
    c1 = SsimParams().c1
    assert ssim(zeros, ones).item() == pytest.approx(c1 / (1 + c1), abs=1e-12)
    assert c1 / (1 + c1) == pytest.approx(1.0e-4, rel=1e-3)


@pytest.mark.parametrize("seed", [3, 4])
def test_ssim_matches_sliding_window_oracle(seed):
    x, y = rand_pair(seed, (1, 3, 40, 48))
    expect = oracles.ssim_oracle(x[0].numpy(), y[0].numpy())
    assert ssim(x, y).item() == pytest.approx(expect, abs=1e-5)


def test_ssim_rejects_bad_shapes():
    x, y = rand_pair(5, (1, 3, 16, 16))
    with pytest.raises(ShapeError):
        ssim(x, y[..., :15])
    with pytest.raises(ShapeError):
        ssim(x[..., :10, :10], y[..., :10, :10])


def test_ms_ssim_identity_at_training_crop_size():
    x, y = rand_pair(6, (1, 3, 192, 256), torch.float32)
    assert ms_ssim(x, x).item() == pytest.approx(1.0, abs=1e-6)
    v = ms_ssim(x, y).item()
    assert -1.0 <= v <= 1.0
    pyramid = MsSsimParams(omega_mode="weight-normalized")
    assert ms_ssim(x, x, pyramid).item() == pytest.approx(1.0, abs=1e-6)
    assert math.isfinite(ms_ssim(x, y, pyramid).item())


def test_ms_ssim_sigma_mode_matches_oracle():
    x, y = rand_pair(7, (1, 3, 64, 64))
    expect = oracles.ms_ssim_sigma_oracle(x[0].numpy(), y[0].numpy())
    assert ms_ssim(x, y).item() == pytest.approx(expect, abs=1e-5)


def test_ms_ssim_pyramid_mode_matches_oracle():
    x, y = rand_pair(8, (1, 3, 176, 180))
    # correlated pair so the coarse scales are not all ~0
    y = 0.6 * x + 0.4 * y
    p = MsSsimParams(omega_mode="weight-normalized")
    expect = oracles.ms_ssim_pyramid_oracle(x[0].numpy(), y[0].numpy())
    assert ms_ssim(x, y, p).item() == pytest.approx(expect, abs=1e-5)


def test_ms_ssim_single_scale_reduces_to_ssim():
    x, y = rand_pair(9, (1, 3, 48, 48))
    one = MsSsimParams(omega=(1.5,))
    assert ms_ssim(x, y, one).item() == pytest.approx(ssim(x, y).item(), abs=1e-6)


def test_ms_ssim_too_small():
    x, y = rand_pair(10, (1, 3, 32, 32))
    with pytest.raises(ShapeError):
        ms_ssim(x, y)
    with pytest.raises(ShapeError):
        ms_ssim(x, y, MsSsimParams(omega_mode="weight-normalized"))


def test_ms_ssim_loss_examples():
    x, _ = rand_pair(11)
    assert ms_ssim_loss(x, x).item() == pytest.approx(0.0, abs=1e-12)
    # arithmetic anchor: index 0.6292 -> loss 0.3708
    assert 1.0 - 0.6292 == pytest.approx(0.3708, abs=1e-12)


def test_total_loss_mixing():
    x, y = rand_pair(12)
    assert total_loss(x, y, LossConfig(alpha=0.0)).item() == l1_loss(x, y).item()
    assert total_loss(x, y, LossConfig(alpha=1.0)).item() == ms_ssim_loss(x, y).item()
    a = 0.84
    assert a * 0.5 + (1 - a) * 0.1 == pytest.approx(0.436, abs=1e-12)
    mixed = 0.84 * ms_ssim_loss(x, y) + 0.16 * l1_loss(x, y)
    assert total_loss(x, y).item() == pytest.approx(mixed.item(), abs=1e-12)
    assert total_loss(x, x).item() == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("alpha", [-0.1, 1.5, float("nan")])
def test_alpha_out_of_range(alpha):
    with pytest.raises(ConfigError):
        LossConfig(alpha=alpha).validate()


def test_omega_mode_validated():
    with pytest.raises(ConfigError):
        MsSsimParams(omega_mode="geometric").validate()
    assert MsSsimParams(omega_mode="weight-normalized").weights() == pytest.approx(
        [w / 15.5 for w in (0.5, 1, 2, 4, 8)])
    assert sum(MsSsimParams().weights()) == pytest.approx(1.0)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_symmetry_and_nonnegativity(seed):
    x, y = rand_pair(seed, (1, 3, 52, 52))
    assert l1_loss(x, y).item() == pytest.approx(l1_loss(y, x).item(), abs=1e-15)
    assert ssim(x, y).item() == pytest.approx(ssim(y, x).item(), abs=1e-12)
    assert ms_ssim(x, y).item() == pytest.approx(ms_ssim(y, x).item(), abs=1e-12)
    for loss in (l1_loss(x, y), ms_ssim_loss(x, y), total_loss(x, y)):
        assert loss.item() > 0


@pytest.mark.parametrize("fn", [l1_loss, ms_ssim_loss, total_loss,
                                lambda a, b: 1 - ssim(a, b),
                                lambda a, b: ms_ssim_loss(a, b[..., :, :], MsSsimParams(omega=(1.0, 2.0)))],
                         ids=["l1", "ms_ssim", "total", "ssim", "ms_ssim_2scale"])
def test_gradients_match_finite_differences(fn):
    x, y = rand_pair(13)
    assert oracles.fd_relative_error(fn, 0.1 + 0.8 * x, 0.1 + 0.8 * y, n_coords=20, seed=13) < 1e-3
