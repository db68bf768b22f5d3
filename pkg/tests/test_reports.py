import csv

from ladlenet import reports


ROWS = {
    "a": {"SSIM": 0.70, "MS-SSIM": 0.60, "L1": 0.12, "PSNR": 18.0},
    "b": {"SSIM": 0.75, "MS-SSIM": 0.55, "L1": 0.10, "PSNR": float("inf")},
    "c": {"SSIM": 0.65, "MS-SSIM": 0.65, "L1": 0.15, "PSNR": 17.0},
}


def cell(table, row, col):
    lines = table.splitlines()
    header = lines[0].split()
    for line in lines[2:]:
        parts = line.split()
        if parts and parts[0] == row:
            return parts[1 + header.index(col)]
    raise KeyError(row)


def test_best_marks_follow_metric_direction():
    t = reports.format_table(ROWS)
    assert cell(t, "b", "SSIM") == "0.7500*"
    assert cell(t, "a", "SSIM") == "0.7000+"
    assert cell(t, "c", "MS-SSIM") == "0.6500*"
    # lower L1 is better
    assert cell(t, "b", "L1") == "0.1000*"
    assert cell(t, "a", "L1") == "0.1200+"
    assert cell(t, "b", "PSNR") == "inf*"


def test_single_row_is_unmarked():
    t = reports.format_table({"only": ROWS["a"]})
    assert "*" not in t.splitlines()[2]


def test_curves_csv_pads_short_runs(tmp_path):
    path = reports.write_curves_csv({"x": [1.0, 0.5], "y": [2.0]}, tmp_path / "c.csv")
    rows = list(csv.reader(path.open()))
    assert rows == [["epoch", "x", "y"], ["1", "1.0", "2.0"], ["2", "0.5", ""]]


def test_figures_render(tmp_path):
    p = reports.plot_loss_curves({"x": [1.0, 0.5, 0.4]}, tmp_path / "l.png")
    q = reports.plot_training([1.0, 0.5], [0.01, 0.001], tmp_path / "t.png")
    assert p.stat().st_size > 0 and q.stat().st_size > 0
