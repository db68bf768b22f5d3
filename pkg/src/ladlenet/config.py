"""Run configuration: TOML parsing, validation and config fingerprints.

A run file has the sections ``[model]``, ``[loss]``, ``[optimizer]``,
``[data]``, ``[training]``, ``[output]`` and (for ``ablate``) ``[ablate]``.
Unknown keys are rejected so typos fail before any work starts.
"""
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import tomli

from .data import PreprocessSpec
from .errors import ConfigError
from .losses import LossConfig, MsSsimParams, SsimParams
from .model import VARIANTS, ModelConfig, VariantFlags


@dataclass(frozen=True)
class OptimizerConfig:
    lr: float = 0.01
    amsgrad: bool = True
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.0
    # plateau schedule
    factor: float = 0.1
    patience: int = 2
    cooldown: int = 5

    def validate(self):
        if not self.lr > 0:
            raise ConfigError(f"optimizer.lr must be positive, got {self.lr}")
        if not 0 < self.factor < 1:
            raise ConfigError(f"optimizer.factor must lie in (0, 1), got {self.factor}")
        if self.patience < 1 or self.cooldown < 0:
            raise ConfigError("optimizer.patience must be >= 1 and optimizer.cooldown >= 0")
        return self


@dataclass(frozen=True)
class DataConfig:
    root: str | None = None
    sets: tuple | None = ("set01", "set07")
    sequences: tuple | None = None
    manifest: str | None = None
    split_seed: int = 0
    ratio: float = 0.8
    preprocess: PreprocessSpec = field(default_factory=PreprocessSpec)

    def validate(self):
        if not 0 < self.ratio < 1:
            raise ConfigError(f"data.ratio must lie in (0, 1), got {self.ratio}")
        self.preprocess.validate()
        return self


@dataclass(frozen=True)
class TrainingConfig:
    epochs: int = 120
    batch_size: int = 40
    seed: int = 0
    checkpoint_every: int = 10
    snapshot_pair: str | None = None
    snapshot_every: int = 10
    cache: bool = False

    def validate(self):
        if self.epochs < 0:
            raise ConfigError("training.epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("training.batch_size must be >= 1")
        if self.checkpoint_every < 1 or self.snapshot_every < 1:
            raise ConfigError("training.checkpoint_every and training.snapshot_every must be >= 1")
        return self


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    data: DataConfig = field(default_factory=DataConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    output_dir: str = "runs/ladlenet"
    variants: tuple = ()

    def validate(self):
        for part in (self.model, self.loss, self.optimizer, self.data, self.training):
            part.validate()
        unknown = [v for v in self.variants if v not in VARIANTS]
        if unknown:
            raise ConfigError(f"unknown ablation variant(s): {', '.join(unknown)}; known: {', '.join(VARIANTS)}")
        return self


def _take(section, name, allowed):
    extra = sorted(set(section) - set(allowed))
    if extra:
        raise ConfigError(f"unknown key(s) in [{name}]: {', '.join(extra)}")
    return section


def _build(cls, section, name, **nested):
    names = {f.name for f in fields(cls)} - set(nested)
    _take(section, name, names | set(nested))
    kwargs = {}
    for k, v in section.items():
        if k in nested:
            continue
        kwargs[k] = tuple(v) if isinstance(v, list) else v
    try:
        return cls(**kwargs, **{k: v for k, v in nested.items() if v is not None})
    except TypeError as exc:
        raise ConfigError(f"[{name}]: {exc}") from exc


_SSIM_KEYS = ("c1", "c2", "window_size", "sigma")
_MSSSIM_KEYS = ("omega", "omega_mode")
_FLAG_KEYS = ("cross_concat", "cross_skip", "backbone")


def model_config_from_dict(d):
    d = dict(d)
    preset = d.pop("variant", None)
    if isinstance(preset, dict):
        flags = _build(VariantFlags, preset, "model.variant")
    elif preset is None:
        flags = VariantFlags()
    elif preset in VARIANTS:
        flags = VARIANTS[preset]
    else:
        raise ConfigError(f"unknown model.variant {preset!r}; known: {', '.join(VARIANTS)}")
    overrides = {k: d.pop(k) for k in _FLAG_KEYS if k in d}
    flags = replace(flags, **overrides)
    return _build(ModelConfig, d, "model", variant=flags)


def loss_config_from_dict(d):
    d = dict(d)
    if isinstance(d.get("ssim"), dict):
        d.update(d.pop("ssim"))
    if isinstance(d.get("msssim"), dict):
        d.update(d.pop("msssim"))
    ssim = _build(SsimParams, {k: d.pop(k) for k in _SSIM_KEYS if k in d}, "loss")
    msssim = _build(MsSsimParams, {k: d.pop(k) for k in _MSSSIM_KEYS if k in d}, "loss")
    return _build(LossConfig, d, "loss", ssim=ssim, msssim=msssim)


def data_config_from_dict(d):
    d = dict(d)
    pre = {k: d.pop(k) for k in ("resize_to", "crop_to") if k in d}
    if isinstance(d.get("preprocess"), dict):
        pre.update(d.pop("preprocess"))
    spec = _build(PreprocessSpec, pre, "data")
    return _build(DataConfig, d, "data", preprocess=spec)


def run_config_from_dict(raw) -> RunConfig:
    _take(raw, "top level", ("model", "loss", "optimizer", "data", "training", "output", "ablate"))
    out = _take(raw.get("output", {}), "output", ("dir",))
    ablate = _take(raw.get("ablate", {}), "ablate", ("variants",))
    cfg = RunConfig(
        model=model_config_from_dict(raw.get("model", {})),
        loss=loss_config_from_dict(raw.get("loss", {})),
        optimizer=_build(OptimizerConfig, raw.get("optimizer", {}), "optimizer"),
        data=data_config_from_dict(raw.get("data", {})),
        training=_build(TrainingConfig, raw.get("training", {}), "training"),
        output_dir=out.get("dir", RunConfig.output_dir),
        variants=tuple(ablate.get("variants", ())),
    )
    try:
        return cfg.validate()
    except TypeError as exc:
        raise ConfigError(f"config value has the wrong type: {exc}") from exc


def load_run_config(path) -> RunConfig:
    path = Path(path)
    try:
        raw = tomli.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"config {path} is not valid TOML: {exc}") from exc
    return run_config_from_dict(raw)


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def model_config_to_dict(cfg: ModelConfig):
    return _plain(asdict(cfg))


def loss_config_to_dict(cfg: LossConfig):
    return _plain(asdict(cfg))


def fingerprint(model_cfg: ModelConfig, loss_cfg: LossConfig) -> str:
    """Stable hash of the architecture and objective settings."""
    payload = {"model": _plain(model_cfg.architecture_dict()), "loss": loss_config_to_dict(loss_cfg)}
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]
