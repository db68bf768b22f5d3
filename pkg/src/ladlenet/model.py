"""LadleNet: two chained U-nets (Handle -> Bowl) and its variants.

The Handle U-net maps the thermal input to a 3-channel intermediate image;
the Bowl U-net decodes that image into the visible-light estimate. Two
optional cross-module paths connect them:

* cross-concat: the Handle decoder feature at each resolution level is
  concatenated onto the Bowl encoder input at the same level;
* cross-skip: the Handle encoder feature at each level is concatenated into
  the Bowl decoder aggregation next to the Bowl's own encoder skip.

``build_bridged_unet`` gives the older two-U-net bridge used as a reference,
and the ``deeplabv3plus-cityscapes`` backbone swaps the Handle for a
semantic-segmentation network (LadleNet+).
"""
from dataclasses import asdict, dataclass, field

import torch
import torch.nn as nn

from .backbone import DeepLabV3Plus, class_palette, load_backbone_weights, render_scores
from .errors import ConfigError, ShapeError

BACKBONES = ("builtin-unet", "bridged-unet", "deeplabv3plus-cityscapes")
DOWNSAMPLE = 16


@dataclass(frozen=True)
class VariantFlags:
    cross_concat: bool = True
    cross_skip: bool = True
    backbone: str = "builtin-unet"

    def validate(self):
        if self.backbone not in BACKBONES:
            raise ConfigError(f"unknown backbone {self.backbone!r}; expected one of {BACKBONES}")
        if self.backbone != "builtin-unet" and (self.cross_concat or self.cross_skip):
            raise ConfigError(
                f"backbone {self.backbone!r} has no cross-module paths; "
                "cross_concat and cross_skip must both be false"
            )


# Named variants used by the ablation runner.
VARIANTS = {
    "baseline": VariantFlags(False, False),
    "+skip": VariantFlags(False, True),
    "+concat": VariantFlags(True, False),
    "full": VariantFlags(True, True),
    "bridged-unet": VariantFlags(False, False, "bridged-unet"),
    "ladlenet+_no_pre": VariantFlags(False, False, "deeplabv3plus-cityscapes"),
    "ladlenet+": VariantFlags(False, False, "deeplabv3plus-cityscapes"),
}


@dataclass(frozen=True)
class ModelConfig:
    variant: VariantFlags = field(default_factory=VariantFlags)
    encoder_channels: tuple = (64, 128, 256, 512)
    code_channels: int = 1024
    handle_out_channels: int = 3
    bowl_out_channels: int = 3
    backbone_num_classes: int = 19
    backbone_arch: str = "resnet101"
    pretrained_weights: str | None = None
    freeze_backbone: bool = False

    def validate(self):
        self.variant.validate()
        if len(self.encoder_channels) != 4:
            raise ConfigError(
                f"encoder_channels must list 4 widths, got {len(self.encoder_channels)}"
            )
        if any(int(c) < 1 for c in self.encoder_channels) or self.code_channels < 1:
            raise ConfigError("channel widths must be positive")
        if self.handle_out_channels != 3 or self.bowl_out_channels != 3:
            raise ConfigError("Handle and Bowl outputs are 3-channel images")
        if self.backbone_num_classes < 1:
            raise ConfigError("backbone_num_classes must be positive")
        return self

    def architecture_dict(self):
        """Fields that determine parameter shapes (used for fingerprints)."""
        d = asdict(self)
        d["encoder_channels"] = [int(c) for c in self.encoder_channels]
        d.pop("pretrained_weights")
        d.pop("freeze_backbone")
        if self.variant.backbone != "deeplabv3plus-cityscapes":
            d.pop("backbone_num_classes")
            d.pop("backbone_arch")
        return d


def _bn_conv(cin, cout, k):
    return nn.Sequential(
        nn.Conv2d(cin, cout, k, padding=k // 2, bias=False),
        nn.BatchNorm2d(cout),
        nn.ReLU(inplace=True),
    )


class ResidualBlock(nn.Module):
    """Two 3x3 convolutions bridged by a residual add, then a 1x1 channel map."""

    def __init__(self, cin, mid, cout):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, mid, 3, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(mid)
        self.conv2 = nn.Conv2d(mid, mid, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(mid)
        self.shortcut = nn.Identity() if cin == mid else nn.Conv2d(cin, mid, 1, bias=False)
        self.transform = _bn_conv(mid, cout, 1)
        self.relu = nn.ReLU(inplace=True)

    def forward(self, x):
        y = self.relu(self.bn1(self.conv1(x)))
        y = self.bn2(self.conv2(y))
        y = self.relu(y + self.shortcut(x))
        return self.transform(y)


class PlainBlock(nn.Sequential):
    def __init__(self, cin, cout):
        super().__init__(_bn_conv(cin, cout, 3), _bn_conv(cout, cout, 3))


class UNet(nn.Module):
    """Five-level U-net (four poolings plus a 1x1 code segment).

    ``enc_extra``/``dec_extra`` give per-level widths of externally supplied
    features concatenated onto the encoder input / decoder aggregation.
    ``forward`` returns the squashed output with the per-level encoder and
    decoder features, finest level first.
    """

    def __init__(self, in_channels, channels, code_channels, out_channels=3,
                 residual=True, enc_extra=(0, 0, 0, 0), dec_extra=(0, 0, 0, 0)):
        super().__init__()
        channels = [int(c) for c in channels]
        self.pool = nn.MaxPool2d(2)
        self.encoders = nn.ModuleList()
        prev = in_channels
        for c, extra in zip(channels, enc_extra):
            cin = prev + extra
            self.encoders.append(ResidualBlock(cin, c, c) if residual else PlainBlock(cin, c))
            prev = c
        self.code = nn.Sequential(
            _bn_conv(channels[-1], code_channels, 1),
            _bn_conv(code_channels, code_channels, 1),
        )
        self.ups = nn.ModuleList()
        self.decoders = nn.ModuleList()
        prev = code_channels
        for c, extra in reversed(list(zip(channels, dec_extra))):
            self.ups.append(nn.ConvTranspose2d(prev, c, 2, stride=2))
            cin = 2 * c + extra
            self.decoders.append(ResidualBlock(cin, 2 * c, c) if residual else PlainBlock(cin, c))
            prev = c
        self.head = nn.Conv2d(channels[0], out_channels, 1)

    def forward(self, x, enc_extra=None, dec_extra=None):
        skips = []
        h = x
        for level, block in enumerate(self.encoders):
            if level:
                h = self.pool(h)
            if enc_extra is not None:
                h = torch.cat([h, enc_extra[level]], dim=1)
            h = block(h)
            skips.append(h)
        h = self.code(self.pool(h))
        dec = [None] * len(skips)
        for i, (up, block) in enumerate(zip(self.ups, self.decoders)):
            level = len(skips) - 1 - i
            parts = [up(h), skips[level]]
            if dec_extra is not None:
                parts.append(dec_extra[level])
            h = block(torch.cat(parts, dim=1))
            dec[level] = h
        return torch.sigmoid(self.head(h)), skips, dec


def _projections(channels):
    return nn.ModuleList(nn.Conv2d(c, c, 1, bias=False) for c in channels)


class LadleNet(nn.Module):
    """Handle + Bowl network. ``forward`` returns ``(fvi, handle_out)``."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        config.validate()
        self.config = config
        self.variant = config.variant
        ch = [int(c) for c in config.encoder_channels]
        backbone = config.variant.backbone
        self.semantic = backbone == "deeplabv3plus-cityscapes"
        self.bridged = backbone == "bridged-unet"

        if self.semantic:
            self.handle = DeepLabV3Plus(config.backbone_num_classes, config.backbone_arch)
            if config.pretrained_weights:
                load_backbone_weights(self.handle, config.pretrained_weights)
            if config.freeze_backbone:
                self.handle.requires_grad_(False)
            self.register_buffer("palette", class_palette(config.backbone_num_classes), persistent=False)
            self.bowl = UNet(config.backbone_num_classes, ch, config.code_channels)
        elif self.bridged:
            self.handle = UNet(3, ch, config.code_channels, residual=False)
            self.bowl = UNet(6, ch, config.code_channels, residual=False)
        else:
            self.handle = UNet(3, ch, config.code_channels)
            zero = (0, 0, 0, 0)
            self.bowl = UNet(
                3, ch, config.code_channels,
                enc_extra=ch if self.variant.cross_concat else zero,
                dec_extra=ch if self.variant.cross_skip else zero,
            )
            if self.variant.cross_concat:
                self.cross_concat_proj = _projections(ch)
            if self.variant.cross_skip:
                self.cross_skip_proj = _projections(ch)

    def train(self, mode=True):
        super().train(mode)
        if self.semantic and self.config.freeze_backbone:
            self.handle.eval()
        return self

    @property
    def parameter_count(self):
        return count_parameters(self)

    def forward(self, x):
        check_input(x)
        if self.semantic:
            scores = self.handle(x)
            fvi, _, _ = self.bowl(scores)
            return fvi, render_scores(scores, self.palette)
        handle_out, h_enc, h_dec = self.handle(x)
        if self.bridged:
            fvi, _, _ = self.bowl(torch.cat([handle_out, x], dim=1))
            return fvi, handle_out
        enc_extra = dec_extra = None
        if self.variant.cross_concat:
            enc_extra = [p(f) for p, f in zip(self.cross_concat_proj, h_dec)]
        if self.variant.cross_skip:
            dec_extra = [p(f) for p, f in zip(self.cross_skip_proj, h_enc)]
        fvi, _, _ = self.bowl(handle_out, enc_extra, dec_extra)
        return fvi, handle_out


def check_input(x):
    if x.dim() != 4:
        raise ShapeError(f"expected a (batch, channel, height, width) tensor, got shape {tuple(x.shape)}")
    b, c, h, w = x.shape
    if c != 3:
        raise ShapeError(f"expected 3 input channels, got {c}")
    if b < 1 or h < DOWNSAMPLE or w < DOWNSAMPLE or h % DOWNSAMPLE or w % DOWNSAMPLE:
        raise ShapeError(f"height and width must be positive multiples of {DOWNSAMPLE}, got {h}x{w}")


def _seeded_build(config, seed):
    if seed is None:
        return LadleNet(config)
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return LadleNet(config)


def build_ladlenet(config: ModelConfig, seed: int | None = None) -> LadleNet:
    """Build any variant; parameters are a pure function of ``(config, seed)``."""
    return _seeded_build(config, seed)


def build_bridged_unet(config: ModelConfig, seed: int | None = None) -> LadleNet:
    """Bridged U-net reference with the channel schedule of ``config``."""
    flags = VariantFlags(False, False, "bridged-unet")
    kwargs = {**config.__dict__, "variant": flags}
    return _seeded_build(ModelConfig(**kwargs), seed)


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad)
