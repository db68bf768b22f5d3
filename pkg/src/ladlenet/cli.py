"""Command line entry point: ``ladlenet <command> ...``.

Exit codes:

    0  success
    1  unexpected internal error
    2  invalid configuration or arguments
    3  dataset / image problem
    4  numeric abort during training (non-finite loss)
    5  checkpoint or weights problem (missing, corrupt, fingerprint mismatch)
"""
import argparse
import glob
import json
import logging
import os
import re
import shutil
import sys
from dataclasses import replace
from pathlib import Path

import torch

from . import metrics, reports
from .config import RunConfig, load_run_config
from .data import DatasetManifest, PreprocessSpec, load_image, scan_dataset, split_manifest
from .errors import (CheckpointError, ConfigError, DataError, LadleNetError, NumericError,
                     ShapeError)
from .model import VARIANTS, build_bridged_unet, build_ladlenet
from .synthetic import make_synthetic_kaist
from .training import load_checkpoint, snapshot_handle, train, write_png

logger = logging.getLogger("ladlenet")

EXIT_OK, EXIT_INTERNAL, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_CHECKPOINT = 0, 1, 2, 3, 4, 5
DATA_ROOT_ENV = "LADLENET_DATA_ROOT"


def _config(args) -> RunConfig | None:
    if not getattr(args, "config", None):
        return None
    cfg = load_run_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, training=replace(cfg.training, seed=args.seed))
    if getattr(args, "out", None):
        cfg = replace(cfg, output_dir=args.out)
    return cfg


def _require_config(args) -> RunConfig:
    cfg = _config(args)
    if cfg is None:
        raise ConfigError("--config is required for this command")
    return cfg


def _spec(cfg):
    return cfg.data.preprocess if cfg else PreprocessSpec()


def _manifest(cfg: RunConfig | None, manifest_path=None) -> DatasetManifest:
    """Manifest from an explicit file, the config's manifest, or a fresh scan."""
    path = manifest_path or (cfg.data.manifest if cfg else None)
    if path:
        m = DatasetManifest.load(path)
    else:
        if cfg is None:
            raise ConfigError("need --manifest or --config to locate the dataset")
        root = cfg.data.root or os.environ.get(DATA_ROOT_ENV)
        if not root:
            raise DataError(f"no dataset root: set data.root or {DATA_ROOT_ENV}")
        m = scan_dataset(root, cfg.data.sets, cfg.data.sequences)
    if m.split is None and cfg is not None:
        m = split_manifest(m, cfg.data.ratio, cfg.data.split_seed)
    return m


def _build(model_cfg, seed):
    if model_cfg.variant.backbone == "bridged-unet":
        return build_bridged_unet(model_cfg, seed)
    return build_ladlenet(model_cfg, seed)


def _safe_name(name):
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", name.replace("+", "plus_")).strip("_")


def _write_evaluation(rep, out, name, extra=None):
    out.mkdir(parents=True, exist_ok=True)
    rep.write_csv(out / "metrics.csv")
    rep.write_json(out / "summary.json", **(extra or {}))
    table = reports.format_table({name: rep.means}, metrics.METRIC_NAMES)
    (out / "table.txt").write_text(table)
    reports.plot_pair_metrics({name: rep}, out / "metrics.png")
    return table


def cmd_train(args):
    cfg = _require_config(args)
    manifest = _manifest(cfg)
    t = cfg.training
    snapshot = manifest.find(t.snapshot_pair) if t.snapshot_pair else None
    model = _build(cfg.model, t.seed)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest.save(out / "manifest.json")
    if args.config:
        shutil.copyfile(args.config, out / "config.toml")
    state, _ = train(model, manifest, cfg.loss, cfg.optimizer, epochs=t.epochs, batch_size=t.batch_size,
                     seed=t.seed, spec=cfg.data.preprocess, out_dir=out,
                     checkpoint_every=t.checkpoint_every, snapshot_pair=snapshot,
                     snapshot_every=t.snapshot_every, cache=t.cache)
    if state.epoch_losses:
        reports.plot_training(state.epoch_losses, state.epoch_lrs, out / "loss_curve.png")
    print(f"trained {state.epoch} epochs; final loss "
          f"{state.epoch_losses[-1] if state.epoch_losses else float('nan'):.6f}; outputs in {out}")
    return EXIT_OK


def _evaluate_checkpoint(path, cfg, manifest, split, limit, seed):
    ckpt = load_checkpoint(path, cfg.model if cfg else None, cfg.loss if cfg else None)
    model = ckpt.build_model()
    msssim = cfg.loss.msssim if cfg else ckpt.loss_config.msssim
    ssim_params = cfg.loss.ssim if cfg else ckpt.loss_config.ssim
    return metrics.evaluate_pairs(manifest, model, split=None if split == "all" else split,
                                  spec=_spec(cfg), limit=limit, seed=seed,
                                  ssim_params=ssim_params, msssim_params=msssim)


def cmd_evaluate(args):
    cfg = _config(args)
    manifest = _manifest(cfg, args.manifest)
    rep = _evaluate_checkpoint(args.checkpoint, cfg, manifest, args.split, args.limit, args.seed or 0)
    out = Path(args.out or (cfg.output_dir if cfg else "evaluation"))
    sys.stdout.write(_write_evaluation(rep, out, Path(args.checkpoint).stem,
                                       {"checkpoint": str(args.checkpoint)}))
    return EXIT_OK


def _named(spec):
    if "=" in spec:
        name, path = spec.split("=", 1)
        return name, path
    p = Path(spec)
    return f"{p.parent.name}/{p.stem}" if p.parent.name else p.stem, spec


def cmd_compare(args):
    cfg = _config(args)
    named = [_named(s) for s in args.checkpoint]
    if len({n for n, _ in named}) != len(named):
        raise ConfigError("compare: model names must be unique (use NAME=PATH)")
    manifest = _manifest(cfg, args.manifest)
    # Checkpoints are compared under their own configs unless --config pins one.
    results = {name: _evaluate_checkpoint(path, cfg, manifest, args.split, args.limit, args.seed or 0)
               for name, path in named}
    out = Path(args.out or (cfg.output_dir if cfg else "comparison"))
    for name, rep in results.items():
        rep.write_csv(out / f"{_safe_name(name)}.csv")
    means = {n: r.means for n, r in results.items()}
    reports.write_table_csv(means, out / "comparison.csv")
    (out / "summary.json").write_text(json.dumps(
        {n: {k: (v if v != float("inf") else "inf") for k, v in m.items()} for n, m in means.items()},
        indent=2))
    table = reports.format_table(means, reports.TABLE_COLUMNS)
    table += "\n" + reports.format_table(means, reports.QUALITY_COLUMNS)
    (out / "table.txt").write_text(table)
    reports.plot_pair_metrics(results, out / "quality_metrics.png")
    sys.stdout.write(table)
    return EXIT_OK


def cmd_translate(args):
    cfg = _config(args)
    ckpt = load_checkpoint(args.checkpoint, cfg.model if cfg else None, cfg.loss if cfg else None)
    tir = load_image(args.input, _spec(cfg))
    model = ckpt.build_model()
    with torch.no_grad():
        fvi, _ = model(tir[None])
    path = write_png(fvi[0], args.output)
    print(f"wrote {path}")
    return EXIT_OK


def cmd_ablate(args):
    cfg = _require_config(args)
    variants = list(args.variants or cfg.variants)
    if not variants:
        raise ConfigError("ablate: no variants listed ([ablate] variants or --variants)")
    unknown = [v for v in variants if v not in VARIANTS]
    if unknown:
        raise ConfigError(f"unknown ablation variant(s): {', '.join(unknown)}; known: {', '.join(VARIANTS)}")
    if "ladlenet+" in variants:
        if not cfg.model.pretrained_weights:
            raise ConfigError("variant 'ladlenet+' needs model.pretrained_weights")
        if not Path(cfg.model.pretrained_weights).is_file():
            raise CheckpointError(f"backbone weights not found: {cfg.model.pretrained_weights}")
    manifest = _manifest(cfg)
    t = cfg.training
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest.save(out / "manifest.json")

    rows, curves, evals = {}, {}, {}
    for name in variants:
        weights = cfg.model.pretrained_weights if name == "ladlenet+" else None
        model_cfg = replace(cfg.model, variant=VARIANTS[name], pretrained_weights=weights)
        model = _build(model_cfg, t.seed)
        run_dir = out / _safe_name(name)
        print(f"[{name}] {model.parameter_count} parameters, {t.epochs} epochs", flush=True)
        state, _ = train(model, manifest, cfg.loss, cfg.optimizer, epochs=t.epochs, batch_size=t.batch_size,
                         seed=t.seed, spec=cfg.data.preprocess, out_dir=run_dir,
                         checkpoint_every=t.checkpoint_every, cache=t.cache)
        curves[name] = state.epoch_losses
        rep = metrics.evaluate_pairs(manifest, model, split="test", spec=cfg.data.preprocess,
                                     ssim_params=cfg.loss.ssim, msssim_params=cfg.loss.msssim)
        rep.write_csv(run_dir / "metrics.csv")
        evals[name] = rep
        rows[name] = rep.means

    reports.write_table_csv(rows, out / "ablation.csv")
    reports.write_curves_csv(curves, out / "loss_curves.csv")
    reports.plot_loss_curves(curves, out / "loss_curves.png", title="training loss by variant")
    if evals:
        reports.plot_pair_metrics(evals, out / "quality_metrics.png")
    table = reports.format_table(rows, reports.TABLE_COLUMNS)
    (out / "table.txt").write_text(table)
    sys.stdout.write(table)
    return EXIT_OK


def cmd_dump_handle(args):
    cfg = _config(args)
    paths = sorted(p for p in glob.glob(args.checkpoints) if p.endswith(".pt"))
    if not paths:
        raise CheckpointError(f"no checkpoints match {args.checkpoints!r}")
    if args.input:
        sample = load_image(args.input, _spec(cfg))
    else:
        if not args.pair:
            raise ConfigError("dump-handle needs --pair (with --manifest/--config) or --input")
        sample = _manifest(cfg, args.manifest).find(args.pair)
    by_epoch = {}
    for p in paths:
        ckpt = load_checkpoint(p, cfg.model if cfg else None, cfg.loss if cfg else None)
        if ckpt.epoch in by_epoch:
            logger.warning("epoch %d already covered by %s; skipping %s", ckpt.epoch, by_epoch[ckpt.epoch][0], p)
            continue
        by_epoch[ckpt.epoch] = (p, ckpt)
    out = Path(args.out)
    for epoch in sorted(by_epoch):
        path = snapshot_handle(by_epoch[epoch][1].build_model(), sample, epoch, out, _spec(cfg))
        print(path)
    return EXIT_OK


def cmd_manifest(args):
    cfg = _require_config(args)
    m = _manifest(cfg)
    path = m.save(args.output)
    n_train = len(m.subset("train"))
    print(f"{len(m)} pairs ({n_train} train / {len(m) - n_train} test) -> {path}")
    return EXIT_OK


def cmd_synth(args):
    layout = {"set01": {"V000": args.pairs}}
    n = make_synthetic_kaist(args.root, layout, size=(args.height, args.width), seed=args.seed or 0)
    print(f"wrote {n} synthetic pairs under {args.root}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="ladlenet", description="Thermal-to-visible translation with LadleNet.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=False):
        p.add_argument("--config", required=config_required, help="run configuration (TOML)")
        p.add_argument("--seed", type=int, help="override training.seed")
        p.add_argument("--out", help="output directory")

    p = sub.add_parser("train", help="train a model from a run config")
    common(p, True)
    p.set_defaults(func=cmd_train)

    for name, func, helptext in (("evaluate", cmd_evaluate, "score one checkpoint"),
                                 ("compare", cmd_compare, "score several checkpoints side by side")):
        p = sub.add_parser(name, help=helptext)
        common(p)
        p.add_argument("--checkpoint", required=True, action="append" if name == "compare" else "store",
                       help="checkpoint path" + (" (repeatable, NAME=PATH allowed)" if name == "compare" else ""))
        p.add_argument("--manifest", help="manifest JSON (default: from --config)")
        p.add_argument("--split", choices=("train", "test", "all"), default="test")
        p.add_argument("--limit", type=int, help="evaluate a seeded random subset of this many pairs")
        p.set_defaults(func=func)

    p = sub.add_parser("translate", help="translate one thermal image")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="thermal image")
    p.add_argument("--output", required=True, help="output PNG")
    p.set_defaults(func=cmd_translate)

    p = sub.add_parser("ablate", help="train and compare architecture variants")
    common(p, True)
    p.add_argument("--variants", nargs="+", help=f"subset of: {', '.join(VARIANTS)}")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("dump-handle", help="render the Handle output of each checkpoint")
    common(p)
    p.add_argument("--checkpoints", required=True, help="glob matching checkpoint files")
    p.add_argument("--pair", help="pair id (set/sequence/frame) in the manifest")
    p.add_argument("--manifest")
    p.add_argument("--input", help="thermal image instead of a manifest pair")
    p.set_defaults(func=cmd_dump_handle)

    p = sub.add_parser("manifest", help="scan and split the dataset into a manifest file")
    common(p, True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_manifest)

    p = sub.add_parser("synth", help="write a toy dataset in the KAIST layout")
    p.add_argument("root")
    p.add_argument("--pairs", type=int, default=16)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=80)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except LadleNetError as exc:
        code, kind = _classify(exc)
        if isinstance(exc, NumericError) and exc.checkpoint_path:
            print(f"diagnostic checkpoint: {exc.checkpoint_path}", file=sys.stderr)
        print(f"ladlenet: {kind}: {exc}", file=sys.stderr)
        return code


def _classify(exc):
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG, "config error"
    if isinstance(exc, (DataError, ShapeError)):
        return EXIT_DATA, "data error"
    if isinstance(exc, NumericError):
        return EXIT_NUMERIC, "numeric abort"
    if isinstance(exc, CheckpointError):
        return EXIT_CHECKPOINT, "checkpoint error"
    return EXIT_INTERNAL, "error"

if __name__ == "__main__":
    sys.exit(main())
