"""Training loop, plateau learning-rate schedule, checkpoints and Handle snapshots."""
import csv
import hashlib
import io
import json
import logging
import math
import os
import tempfile
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .config import (OptimizerConfig, fingerprint, loss_config_from_dict, loss_config_to_dict,
                     model_config_from_dict, model_config_to_dict)
from .data import ImagePair, PreprocessSpec, batches, preprocess
from .errors import CheckpointError, FingerprintError, NumericError
from .losses import LossConfig, total_loss
from .model import LadleNet, ModelConfig, build_ladlenet

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LrScheduleState:
    current_lr: float
    best_loss: float = math.inf
    non_improve_count: int = 0
    cooldown_remaining: int = 0
    factor: float = 0.1
    patience: int = 2
    cooldown: int = 5
    reductions: int = 0

    @classmethod
    def initial(cls, opt_cfg: OptimizerConfig):
        return cls(opt_cfg.lr, factor=opt_cfg.factor, patience=opt_cfg.patience, cooldown=opt_cfg.cooldown)


def scheduler_step(state: LrScheduleState, epoch_loss) -> LrScheduleState:
    """Advance the plateau schedule by one epoch.

    During cooldown only the cooldown counter moves. Otherwise an
    improvement resets the patience counter; ``patience`` consecutive
    non-improving epochs scale the learning rate by ``factor`` and start a
    new cooldown.
    """
    epoch_loss = float(epoch_loss)
    if not math.isfinite(epoch_loss):
        raise NumericError(f"non-finite epoch loss {epoch_loss}")
    if state.cooldown_remaining > 0:
        return replace(state, cooldown_remaining=state.cooldown_remaining - 1)
    if epoch_loss < state.best_loss:
        return replace(state, best_loss=epoch_loss, non_improve_count=0)
    count = state.non_improve_count + 1
    if count < state.patience:
        return replace(state, non_improve_count=count)
    return replace(
        state,
        current_lr=state.current_lr * state.factor,
        non_improve_count=0,
        cooldown_remaining=state.cooldown,
        reductions=state.reductions + 1,
    )


def make_optimizer(model, opt_cfg: OptimizerConfig, lr=None):
    params = [p for p in model.parameters() if p.requires_grad]
    return torch.optim.Adam(params, lr=opt_cfg.lr if lr is None else lr, betas=tuple(opt_cfg.betas),
                            eps=opt_cfg.eps, weight_decay=opt_cfg.weight_decay, amsgrad=opt_cfg.amsgrad)


@dataclass
class TrainState:
    model: LadleNet
    optimizer: torch.optim.Optimizer
    schedule: LrScheduleState
    loss_cfg: LossConfig
    seed: int = 0
    epoch: int = 0
    epoch_losses: list = field(default_factory=list)
    epoch_lrs: list = field(default_factory=list)
    step_losses: list = field(default_factory=list)


@dataclass
class Checkpoint:
    model_state: dict
    optimizer_state: dict | None
    schedule: LrScheduleState
    model_config: ModelConfig
    loss_config: LossConfig
    epoch: int = 0
    seed: int = 0
    loss_history: list = field(default_factory=list)
    lr_history: list = field(default_factory=list)

    @property
    def fingerprint(self):
        return fingerprint(self.model_config, self.loss_config)

    @classmethod
    def from_state(cls, state: TrainState):
        return cls(
            model_state={k: v.detach().clone() for k, v in state.model.state_dict().items()},
            optimizer_state=state.optimizer.state_dict(),
            schedule=state.schedule,
            model_config=state.model.config,
            loss_config=state.loss_cfg,
            epoch=state.epoch,
            seed=state.seed,
            loss_history=list(state.epoch_losses),
            lr_history=list(state.epoch_lrs),
        )

    def build_model(self) -> LadleNet:
        # Weights come from the checkpoint, not from the original backbone file.
        cfg = replace(self.model_config, pretrained_weights=None)
        model = build_ladlenet(cfg)
        model.load_state_dict(self.model_state)
        model.eval()
        return model


def _atomic_write(path: Path, data: bytes):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def sidecar_path(path):
    return Path(path).with_suffix(".json")


def save_checkpoint(state, path) -> Path:
    """Write ``path`` (named tensors) and a JSON sidecar next to it.

    ``state`` is a TrainState or a Checkpoint. Both files are written via a
    temporary file and an atomic rename.
    """
    ckpt = Checkpoint.from_state(state) if isinstance(state, TrainState) else state
    path = Path(path)
    buf = io.BytesIO()
    torch.save({"model": ckpt.model_state, "optimizer": ckpt.optimizer_state}, buf)
    blob = buf.getvalue()
    meta = {
        "format": "ladlenet-checkpoint/1",
        "epoch": ckpt.epoch,
        "seed": ckpt.seed,
        "fingerprint": ckpt.fingerprint,
        "sha256": hashlib.sha256(blob).hexdigest(),
        "loss_history": ckpt.loss_history,
        "lr_history": ckpt.lr_history,
        "schedule": {k: (v if math.isfinite(v) else None) if isinstance(v, float) else v
                     for k, v in asdict(ckpt.schedule).items()},
        "model_config": model_config_to_dict(ckpt.model_config),
        "loss_config": loss_config_to_dict(ckpt.loss_config),
    }
    _atomic_write(path, blob)
    _atomic_write(sidecar_path(path), json.dumps(meta, indent=1).encode())
    return path


def load_checkpoint(path, model_config: ModelConfig | None = None,
                    loss_config: LossConfig | None = None) -> Checkpoint:
    """Read a checkpoint; when configs are given their fingerprint must match."""
    path = Path(path)
    side = sidecar_path(path)
    if not path.is_file() or not side.is_file():
        raise CheckpointError(f"checkpoint not found: {path} (with sidecar {side.name})")
    try:
        meta = json.loads(side.read_text())
        blob = path.read_bytes()
    except (OSError, ValueError) as exc:
        raise CheckpointError(f"corrupt checkpoint sidecar {side}: {exc}") from exc
    if hashlib.sha256(blob).hexdigest() != meta.get("sha256"):
        raise CheckpointError(f"corrupt checkpoint {path}: content hash mismatch (truncated or modified)")
    try:
        tensors = torch.load(io.BytesIO(blob), map_location="cpu", weights_only=True)
        sched = dict(meta["schedule"])
        if sched.get("best_loss") is None:
            sched["best_loss"] = math.inf
        ckpt = Checkpoint(
            model_state=tensors["model"],
            optimizer_state=tensors.get("optimizer"),
            schedule=LrScheduleState(**sched),
            model_config=model_config_from_dict(meta["model_config"]),
            loss_config=loss_config_from_dict(meta["loss_config"]),
            epoch=meta["epoch"],
            seed=meta["seed"],
            loss_history=meta["loss_history"],
            lr_history=meta.get("lr_history", []),
        )
    except Exception as exc:
        raise CheckpointError(f"corrupt checkpoint {path}: {exc}") from exc
    if ckpt.fingerprint != meta.get("fingerprint"):
        raise CheckpointError(f"checkpoint {path}: stored fingerprint does not match its config")
    if model_config is not None or loss_config is not None:
        expect = fingerprint(model_config or ckpt.model_config, loss_config or ckpt.loss_config)
        if expect != ckpt.fingerprint:
            raise FingerprintError(
                f"checkpoint {path} was written for config {ckpt.fingerprint}, current config is {expect}"
            )
    return ckpt


def to_uint8(img: torch.Tensor) -> np.ndarray:
    """(3, H, W) in [0, 1] -> (H, W, 3) uint8."""
    arr = img.detach().cpu().clamp(0, 1).mul(255).round().to(torch.uint8)
    return arr.permute(1, 2, 0).numpy()


def write_png(img: torch.Tensor, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.BytesIO()
    Image.fromarray(to_uint8(img), mode="RGB").save(buf, format="PNG")
    _atomic_write(path, buf.getvalue())
    return path


def snapshot_handle(model, sample, epoch, out_dir, spec=PreprocessSpec()) -> Path:
    """Save the Handle module's output for one thermal frame as an 8-bit PNG.

    ``sample`` is an ImagePair or a (3, H, W) thermal tensor.
    """
    tir = preprocess(sample, spec)[0] if isinstance(sample, ImagePair) else sample
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            _, handle_out = model(tir[None])
    finally:
        model.train(was_training)
    return write_png(handle_out[0], Path(out_dir) / f"handle_epoch_{epoch:03d}.png")


def _append_csv(path, row, header):
    new = not path.exists()
    with path.open("a", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(header)
        w.writerow(row)


def train(model: LadleNet, manifest, loss_cfg=LossConfig(), opt_cfg=OptimizerConfig(), epochs=120,
          batch_size=40, seed=0, spec=PreprocessSpec(), out_dir=None, checkpoint_every=10,
          snapshot_pair=None, snapshot_every=10, cache=False, split="train", resume=None):
    """Minimize the mixed L1/MS-SSIM loss over the training split.

    Returns ``(TrainState, Checkpoint)``. With ``out_dir`` set, the loop
    writes ``loss.csv`` (epoch, mean_loss, lr), checkpoints under
    ``checkpoints/`` (every ``checkpoint_every`` epochs, ``best.pt`` and
    ``last.pt``) and Handle snapshots under ``snapshots/``. A non-finite
    loss aborts with :class:`NumericError` after writing
    ``checkpoints/diagnostic.pt``.
    """
    loss_cfg.validate()
    opt_cfg.validate()
    if manifest.split is None:
        split = None
    out_dir = Path(out_dir) if out_dir is not None else None
    ckpt_dir = out_dir / "checkpoints" if out_dir else None

    torch.manual_seed(seed)
    schedule = LrScheduleState.initial(opt_cfg)
    state = TrainState(model, make_optimizer(model, opt_cfg), schedule, loss_cfg, seed)
    if resume is not None:
        model.load_state_dict(resume.model_state)
        if resume.optimizer_state:
            state.optimizer.load_state_dict(resume.optimizer_state)
        state.schedule = resume.schedule
        state.epoch = resume.epoch
        state.epoch_losses = list(resume.loss_history)
        state.epoch_lrs = list(resume.lr_history)
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
        if state.epoch == 0 and (out_dir / "loss.csv").exists():
            (out_dir / "loss.csv").unlink()
    memo = {} if cache else None
    best = min(state.epoch_losses, default=math.inf)

    while state.epoch < epochs:
        epoch = state.epoch + 1
        lr = state.schedule.current_lr
        for group in state.optimizer.param_groups:
            group["lr"] = lr
        model.train()
        total, count = 0.0, 0
        for tir, vi in batches(manifest, split, batch_size, seed, epoch, spec, memo):
            state.optimizer.zero_grad(set_to_none=True)
            fvi, _ = model(tir)
            loss = total_loss(fvi, vi, loss_cfg)
            value = float(loss.detach())
            if not math.isfinite(value):
                path = save_checkpoint(state, ckpt_dir / "diagnostic.pt") if ckpt_dir else None
                raise NumericError(f"non-finite training loss at epoch {epoch}", path)
            loss.backward()
            state.optimizer.step()
            state.step_losses.append(value)
            total += value * tir.shape[0]
            count += tir.shape[0]

        mean_loss = total / max(count, 1)
        state.epoch = epoch
        state.epoch_losses.append(mean_loss)
        state.epoch_lrs.append(lr)
        state.schedule = scheduler_step(state.schedule, mean_loss)
        logger.info("epoch %d loss %.6f lr %.3g", epoch, mean_loss, lr)

        if out_dir:
            _append_csv(out_dir / "loss.csv", [epoch, repr(mean_loss), repr(lr)], ["epoch", "mean_loss", "lr"])
            if epoch % checkpoint_every == 0:
                save_checkpoint(state, ckpt_dir / f"epoch_{epoch:03d}.pt")
            if mean_loss < best:
                best = mean_loss
                save_checkpoint(state, ckpt_dir / "best.pt")
            if snapshot_pair is not None and epoch % snapshot_every == 0:
                snapshot_handle(model, snapshot_pair, epoch, out_dir / "snapshots", spec)

    ckpt = Checkpoint.from_state(state)
    if out_dir:
        save_checkpoint(ckpt, ckpt_dir / "last.pt")
    return state, ckpt
