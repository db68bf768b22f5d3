"""DeepLabV3+ semantic backbone used as the Handle of LadleNet+.

Module names follow the common PyTorch DeepLabV3+ layout
(``backbone.*``, ``classifier.project``, ``classifier.aspp``,
``classifier.classifier``) so that published Cityscapes checkpoints with
that layout load without key remapping.
"""
from collections import OrderedDict
from pathlib import Path

import torch
import torch.nn as nn
import torch.nn.functional as F
from torchvision.models import resnet
from torchvision.models._utils import IntermediateLayerGetter
from torchvision.models.segmentation.deeplabv3 import ASPP

from .errors import CheckpointError

_ARCHS = {
    "resnet18": (resnet.resnet18, 64, 512),
    "resnet34": (resnet.resnet34, 64, 512),
    "resnet50": (resnet.resnet50, 256, 2048),
    "resnet101": (resnet.resnet101, 256, 2048),
}

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

# Cityscapes train-id palette, 19 classes.
CITYSCAPES_PALETTE = (
    (128, 64, 128), (244, 35, 232), (70, 70, 70), (102, 102, 156),
    (190, 153, 153), (153, 153, 153), (250, 170, 30), (220, 220, 0),
    (107, 142, 35), (152, 251, 152), (70, 130, 180), (220, 20, 60),
    (255, 0, 0), (0, 0, 142), (0, 0, 70), (0, 60, 100), (0, 80, 100),
    (0, 0, 230), (119, 11, 32),
)


class DeepLabHeadV3Plus(nn.Module):
    def __init__(self, in_channels, low_level_channels, num_classes, aspp_dilate=(12, 24, 36)):
        super().__init__()
        self.project = nn.Sequential(
            nn.Conv2d(low_level_channels, 48, 1, bias=False),
            nn.BatchNorm2d(48),
            nn.ReLU(inplace=True),
        )
        self.aspp = ASPP(in_channels, list(aspp_dilate))
        self.classifier = nn.Sequential(
            nn.Conv2d(304, 256, 3, padding=1, bias=False),
            nn.BatchNorm2d(256),
            nn.ReLU(inplace=True),
            nn.Conv2d(256, num_classes, 1),
        )

    def forward(self, features):
        low = self.project(features["low_level"])
        out = self.aspp(features["out"])
        out = F.interpolate(out, size=low.shape[-2:], mode="bilinear", align_corners=False)
        return self.classifier(torch.cat([low, out], dim=1))


class DeepLabV3Plus(nn.Module):
    """Per-pixel class scores at the input resolution.

    Inputs are expected in [0, 1]; ImageNet normalization is applied
    internally because every public checkpoint was trained on it.
    """

    def __init__(self, num_classes=19, arch="resnet101", output_stride=16):
        super().__init__()
        if arch not in _ARCHS:
            raise ValueError(f"unknown backbone architecture {arch!r}; choose from {sorted(_ARCHS)}")
        factory, low_ch, high_ch = _ARCHS[arch]
        # BasicBlock resnets cannot dilate; they run at output stride 32.
        if high_ch == 2048 and output_stride == 16:
            net = factory(weights=None, replace_stride_with_dilation=[False, False, True])
            dilate = (6, 12, 18)
        elif high_ch == 2048 and output_stride == 8:
            net = factory(weights=None, replace_stride_with_dilation=[False, True, True])
            dilate = (12, 24, 36)
        else:
            net = factory(weights=None)
            dilate = (6, 12, 18)
        self.num_classes = num_classes
        self.arch = arch
        self.backbone = IntermediateLayerGetter(net, {"layer4": "out", "layer1": "low_level"})
        self.classifier = DeepLabHeadV3Plus(high_ch, low_ch, num_classes, dilate)
        self.register_buffer("mean", torch.tensor(IMAGENET_MEAN).view(1, 3, 1, 1), persistent=False)
        self.register_buffer("std", torch.tensor(IMAGENET_STD).view(1, 3, 1, 1), persistent=False)

    def forward(self, x):
        size = x.shape[-2:]
        scores = self.classifier(self.backbone((x - self.mean) / self.std))
        return F.interpolate(scores, size=size, mode="bilinear", align_corners=False)


def load_backbone_weights(module: DeepLabV3Plus, path) -> None:
    """Load a DeepLabV3+ state dict into ``module``.

    Accepts a bare state dict or one nested under ``model_state`` /
    ``state_dict`` / ``model``; a leading ``module.`` (DataParallel) is
    stripped.
    """
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"backbone weights not found: {path}")
    try:
        blob = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise CheckpointError(f"backbone weights unreadable: {path}: {exc}") from exc
    if isinstance(blob, dict):
        for key in ("model_state", "state_dict", "model"):
            if key in blob and isinstance(blob[key], dict):
                blob = blob[key]
                break
    if not isinstance(blob, dict):
        raise CheckpointError(f"backbone weights are not a state dict: {path}")
    state = OrderedDict(
        (k[len("module."):] if k.startswith("module.") else k, v) for k, v in blob.items()
    )
    try:
        module.load_state_dict(state, strict=True)
    except RuntimeError as exc:
        raise CheckpointError(f"backbone weights do not match {module.arch}/{module.num_classes}: {exc}") from exc


def class_palette(num_classes):
    if num_classes == len(CITYSCAPES_PALETTE):
        colors = torch.tensor(CITYSCAPES_PALETTE, dtype=torch.float32)
    else:
        gen = torch.Generator().manual_seed(num_classes)
        colors = torch.randint(0, 256, (num_classes, 3), generator=gen).float()
    return colors / 255.0


def render_scores(scores, palette):
    """Colorize a class-score map as the softmax-weighted palette mix, in [0, 1]."""
    probs = scores.softmax(dim=1)
    return torch.einsum("bkhw,kc->bchw", probs, palette.to(probs)).clamp(0.0, 1.0)
