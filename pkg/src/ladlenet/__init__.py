"""LadleNet: thermal-infrared to visible image translation with chained U-nets."""
from .errors import (CheckpointError, ConfigError, DataError, FingerprintError, LadleNetError,
                     NumericError, ShapeError)
from .losses import LossConfig, MsSsimParams, SsimParams, l1_loss, ms_ssim, ms_ssim_loss, ssim, total_loss
from .model import VARIANTS, LadleNet, ModelConfig, VariantFlags, build_bridged_unet, build_ladlenet, count_parameters

__version__ = "0.1.0"
