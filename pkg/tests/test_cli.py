import csv
import json
import subprocess
import sys

import pytest
from PIL import Image

from ladlenet import cli

from conftest import TINY_CHANNELS, TINY_CODE


def write_config(path, root, out, epochs=1, variants=None, **sections):
    """Tiny-model TOML run file; ``sections`` override keys as {"loss": {"alpha": 1.5}}."""
    base = {
        "model": {"variant": "full", "encoder_channels": list(TINY_CHANNELS), "code_channels": TINY_CODE},
        "loss": {},
        "data": {"root": str(root), "sets": ["set01"], "resize_to": [64, 80], "crop_to": [64, 64]},
        "training": {"epochs": epochs, "batch_size": 4, "seed": 0, "checkpoint_every": 1},
        "output": {"dir": str(out)},
    }
    if variants is not None:
        base["ablate"] = {"variants": variants}
    for name, values in sections.items():
        base.setdefault(name, {}).update(values)
    lines = []
    for name, values in base.items():
        lines.append(f"[{name}]")
        for k, v in values.items():
            lines.append(f"{k} = {json.dumps(v)}")
    path.write_text("\n".join(lines) + "\n")
    return path


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def trained(tmp_path_factory, toy_root):
    base = tmp_path_factory.mktemp("cli")
    cfg = write_config(base / "run.toml", toy_root, base / "run", epochs=8)
    assert run("train", "--config", cfg) == 0
    return cfg, base / "run"


def test_train_one_epoch(tmp_path, toy_root):
    cfg = write_config(tmp_path / "run.toml", toy_root, tmp_path / "out")
    assert run("train", "--config", cfg) == 0
    with (tmp_path / "out" / "loss.csv").open() as fh:
        assert len(list(csv.DictReader(fh))) == 1
    assert (tmp_path / "out" / "checkpoints" / "last.pt").is_file()
    assert (tmp_path / "out" / "loss_curve.png").is_file()


def test_train_missing_root(tmp_path, capsys):
    missing = tmp_path / "no_such_dataset"
    cfg = write_config(tmp_path / "run.toml", missing, tmp_path / "out")
    assert run("train", "--config", cfg) == 3
    assert str(missing) in capsys.readouterr().err


def test_train_root_from_environment(tmp_path, toy_root, monkeypatch):
    cfg = write_config(tmp_path / "run.toml", toy_root, tmp_path / "out")
    cfg.write_text(cfg.read_text().replace(f'root = "{toy_root}"\n', ""))
    monkeypatch.setenv(cli.DATA_ROOT_ENV, str(toy_root))
    assert run("train", "--config", cfg, "--out", tmp_path / "env") == 0
    assert (tmp_path / "env" / "loss.csv").is_file()


@pytest.mark.parametrize("section,values,needle", [
    ("loss", {"alpha": 1.5}, "alpha"),
    ("training", {"epochz": 3}, "epochz"),
    ("model", {"variant": "+foo"}, "+foo"),
    ("data", {"ratio": 1.0}, "ratio"),
])
def test_bad_config_exits_2_without_output(tmp_path, toy_root, capsys, section, values, needle):
    out = tmp_path / "out"
    cfg = write_config(tmp_path / "run.toml", toy_root, out, **{section: values})
    assert run("train", "--config", cfg) == 2
    assert needle in capsys.readouterr().err
    assert not out.exists()


def test_unparseable_config(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text("[model\n")
    assert run("train", "--config", bad) == 2


def test_evaluate_writes_report(trained, tmp_path, capsys):
    cfg, run_dir = trained
    out = tmp_path / "eval"
    code = run("evaluate", "--config", cfg, "--checkpoint", run_dir / "checkpoints/last.pt",
               "--split", "all", "--out", out)
    assert code == 0
    with (out / "metrics.csv").open() as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
    assert len(rows) == 10
    assert reader.fieldnames[1:5] == ["SSIM", "MS-SSIM", "L1", "PSNR"]
    summary = json.loads((out / "summary.json").read_text())
    assert list(summary["means"]) == ["SSIM", "MS-SSIM", "L1", "PSNR", "AG", "MSE", "VIF", "CC"]
    assert (out / "metrics.png").stat().st_size > 0
    assert "SSIM" in capsys.readouterr().out


def test_evaluate_fingerprint_mismatch(trained, tmp_path, capsys):
    cfg, run_dir = trained
    other = write_config(tmp_path / "o.toml", "unused", tmp_path / "o", model={"variant": "baseline"})
    code = run("evaluate", "--config", other, "--manifest", run_dir / "manifest.json",
               "--checkpoint", run_dir / "checkpoints/last.pt")
    assert code == 5
    assert "current config is" in capsys.readouterr().err


def test_translate_is_byte_identical(trained, tmp_path, toy_root):
    _, run_dir = trained
    src = sorted(toy_root.glob("set01/V000/lwir/*"))[0]
    ckpt = run_dir / "checkpoints/last.pt"
    a, b = tmp_path / "a.png", tmp_path / "b.png"
    assert run("translate", "--checkpoint", ckpt, "--input", src, "--output", a) == 0
    assert run("translate", "--checkpoint", ckpt, "--input", src, "--output", b) == 0
    assert a.read_bytes() == b.read_bytes()
    img = Image.open(a)
    assert img.mode == "RGB" and img.size == (256, 192)


def test_translate_corrupt_image(trained, tmp_path, capsys):
    _, run_dir = trained
    bad = tmp_path / "bad.jpg"
    bad.write_bytes(b"\xff\xd8 not really a jpeg")
    code = run("translate", "--checkpoint", run_dir / "checkpoints/last.pt", "--input", bad,
               "--output", tmp_path / "x.png")
    assert code == 3
    assert "decode" in capsys.readouterr().err
    assert not (tmp_path / "x.png").exists()


def test_translate_missing_checkpoint(tmp_path):
    code = run("translate", "--checkpoint", tmp_path / "none.pt", "--input", tmp_path / "x.png",
               "--output", tmp_path / "y.png")
    assert code == 5


def test_compare(trained, tmp_path):
    cfg, run_dir = trained
    ck = run_dir / "checkpoints"
    out = tmp_path / "cmp"
    code = run("compare", "--manifest", run_dir / "manifest.json", "--out", out,
               "--checkpoint", f"early={ck / 'epoch_001.pt'}", "--checkpoint", f"late={ck / 'last.pt'}")
    assert code == 0
    with (out / "comparison.csv").open() as fh:
        names = [r["model"] for r in csv.DictReader(fh)]
    assert names == ["early", "late"]
    assert (out / "quality_metrics.png").is_file()
    assert "*" in (out / "table.txt").read_text()


def test_dump_handle(trained, tmp_path):
    _, run_dir = trained
    pattern = str(run_dir / "checkpoints" / "epoch_*.pt")
    manifest = run_dir / "manifest.json"
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert run("dump-handle", "--checkpoints", pattern, "--manifest", manifest,
                   "--pair", "set01/V000/I00001", "--out", out) == 0
    names = sorted(p.name for p in a.glob("*.png"))
    assert names == [f"handle_epoch_{e:03d}.png" for e in range(1, 9)]
    assert all((a / n).read_bytes() == (b / n).read_bytes() for n in names)


def test_dump_handle_no_matches(tmp_path, capsys):
    code = run("dump-handle", "--checkpoints", str(tmp_path / "*.pt"), "--input", "x.png", "--out", tmp_path)
    assert code == 5
    assert "no checkpoints" in capsys.readouterr().err


def read_table(path):
    with path.open() as fh:
        rows = list(csv.DictReader(fh))
    return [r["model"] for r in rows], rows


def test_ablate_cross_path_table(tmp_path, toy_root):
    out = tmp_path / "abl"
    cfg = write_config(tmp_path / "a.toml", toy_root, out, variants=["baseline", "+skip", "+concat", "full"])
    assert run("ablate", "--config", cfg) == 0
    names, rows = read_table(out / "ablation.csv")
    assert names == ["baseline", "+skip", "+concat", "full"]
    assert {"SSIM", "MS-SSIM", "L1", "PSNR"} <= set(rows[0])
    with (out / "loss_curves.csv").open() as fh:
        header = next(csv.reader(fh))
    assert header == ["epoch", "baseline", "+skip", "+concat", "full"]
    assert (out / "loss_curves.png").is_file()


def test_ablate_bridge_table(tmp_path, toy_root):
    out = tmp_path / "abl"
    cfg = write_config(tmp_path / "a.toml", toy_root, out, variants=["bridged-unet", "full"])
    assert run("ablate", "--config", cfg) == 0
    assert read_table(out / "ablation.csv")[0] == ["bridged-unet", "full"]


def test_ablate_unknown_variant(tmp_path, toy_root, capsys):
    out = tmp_path / "abl"
    cfg = write_config(tmp_path / "a.toml", toy_root, out, variants=["baseline"])
    assert run("ablate", "--config", cfg, "--variants", "baseline", "+foo") == 2
    assert "+foo" in capsys.readouterr().err
    assert not out.exists()


def test_ablate_plus_needs_weights(tmp_path, toy_root):
    out = tmp_path / "abl"
    cfg = write_config(tmp_path / "a.toml", toy_root, out, variants=["ladlenet+"])
    assert run("ablate", "--config", cfg) == 2
    cfg = write_config(tmp_path / "b.toml", toy_root, out, variants=["ladlenet+"],
                       model={"pretrained_weights": str(tmp_path / "missing.pth")})
    assert run("ablate", "--config", cfg) == 5
    assert not out.exists()


def test_manifest_and_synth(tmp_path, toy_root, capsys):
    assert run("synth", tmp_path / "ds", "--pairs", "5") == 0
    cfg = write_config(tmp_path / "m.toml", tmp_path / "ds", tmp_path / "o")
    assert run("manifest", "--config", cfg, "--output", tmp_path / "m.json") == 0
    assert "5 pairs (4 train / 1 test)" in capsys.readouterr().out


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "ladlenet.cli", "translate", "--checkpoint",
                           str(tmp_path / "x.pt"), "--input", "a", "--output", "b"],
                          capture_output=True, text=True)
    assert proc.returncode == 5
    assert proc.stderr.startswith("ladlenet: checkpoint error")
