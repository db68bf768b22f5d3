import pytest
import torch

from ladlenet.data import PreprocessSpec, scan_dataset, split_manifest
from ladlenet.model import ModelConfig, VariantFlags
from ladlenet.synthetic import make_synthetic_kaist

TINY_CHANNELS = (8, 16, 32, 64)
TINY_CODE = 64
TOY_SPEC = PreprocessSpec(resize_to=(64, 80), crop_to=(64, 64))


def tiny_config(cross_concat=True, cross_skip=True, backbone="builtin-unet", **kw):
    kw = {"encoder_channels": TINY_CHANNELS, "code_channels": TINY_CODE, **kw}
    return ModelConfig(VariantFlags(cross_concat, cross_skip, backbone), **kw)


@pytest.fixture(autouse=True)
def _threads():
    torch.set_num_threads(1)


@pytest.fixture(scope="session")
def toy_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("kaist")
    make_synthetic_kaist(root, {"set01": {"V000": 6, "V001": 4}, "set07": {"V000": 2}}, size=(64, 80), seed=3)
    return root


@pytest.fixture(scope="session")
def toy_manifest(toy_root):
    return split_manifest(scan_dataset(toy_root), 0.8, seed=0)


_CRITERIA = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(ident, title): acceptance criterion reported in the summary")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.when != "call":
        return
    ident, title = marker.args
    status = "PASS" if rep.passed else "FAIL"
    notes = dict(item.user_properties).get("note", "")
    _CRITERIA.append((ident, status, title, notes))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for ident, status, title, notes in sorted(_CRITERIA, key=lambda t: int(t[0][1:])):
        line = f"{ident:>4} {status}  {title}"
        if notes:
            line += f"  [{notes}]"
        terminalreporter.write_line(line)
