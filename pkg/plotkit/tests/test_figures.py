"""Schema-driven figure tests on hand-written fixture CSVs.

The fixtures replicate the documented sweep and tracking CSV layouts so
the package is exercised without ever running a simulation.
"""

import subprocess
import sys

import pytest

from plotkit import SchemaError, plot_se_overlay, plot_sweep, read_metric_csv

SWEEP_COLUMNS = "axis,value,algorithm,ader,ser,ber,frames,em,ef,seed,wall_time"
TRACK_COLUMNS = "frame,strategy,nmse_h,nmse_x,detected_count,refined_count"


def write_sweep(path, axis="snr_db", values=(0.0, 1.0, 2.0, 3.0),
                algorithms=("dsamp", "amp"), blank_ber=False):
    lines = [
        "# Monte-Carlo sweep results",
        f"# axis = {axis}",
        f"# values = {', '.join(repr(float(v)) for v in values)}",
        f"# algorithms = {', '.join(algorithms)}",
        "# frames = 200",
        "# base_seed = 1",
        "# snr_convention = sigma_w^2 = ka / 10^(snr_db/10)",
        SWEEP_COLUMNS,
    ]
    for v in values:
        for i, algo in enumerate(algorithms):
            ader = (i + 1.0) * 10.0 ** (-1.0 - 0.5 * float(v))
            ber = "" if blank_ber else repr(ader / 2)
            lines.append(f"{axis},{float(v)!r},{algo},{ader!r},"
                         f"{2 * ader!r},{ber},200,3,1,1,0.51")
    path.write_text("\n".join(lines) + "\n")
    return path


def write_track(path, n_frames=6):
    lines = [
        "# CSI tracking run",
        "# alpha = 0.99",
        f"# n_frames = {n_frames}",
        "# strategy = both",
        TRACK_COLUMNS,
    ]
    for f in range(1, n_frames + 1):
        lines.append(f"{f},update,{0.05 * f!r},{0.08 * f!r},10,9")
        lines.append(f"{f},non_update,{0.09 * f!r},{0.12 * f!r},10,0")
    path.write_text("\n".join(lines) + "\n")
    return path


def check_written(paths):
    png, pdf = paths
    assert png.endswith(".png") and pdf.endswith(".pdf")
    for p in paths:
        with open(p, "rb") as fh:
            assert len(fh.read()) > 1000


def test_reader_splits_metadata_and_rows(tmp_path):
    path = write_sweep(tmp_path / "sweep.csv")
    meta, header, rows = read_metric_csv(path)
    assert meta["axis"] == "snr_db"
    assert meta["frames"] == "200"
    assert header == SWEEP_COLUMNS.split(",")
    assert len(rows) == 8
    assert rows[0]["algorithm"] == "dsamp"


def test_snr_sweep_figure(tmp_path):
    path = write_sweep(tmp_path / "sweep.csv")
    check_written(plot_sweep(path, "snr_db", "ader", tmp_path / "fig" / "ader"))


def test_iteration_budget_figure(tmp_path):
    path = write_sweep(tmp_path / "t0.csv", axis="t0",
                       values=(5, 10, 15, 20, 25), algorithms=("dsamp",))
    check_written(plot_sweep(path, "t0", "ber", tmp_path / "conv"))


def test_tracking_figure_groups_by_strategy(tmp_path):
    path = write_track(tmp_path / "track.csv")
    check_written(plot_sweep(path, "frame", "nmse_h", tmp_path / "nmse.png"))


def test_missing_metric_column_raises(tmp_path):
    path = write_sweep(tmp_path / "sweep.csv")
    with pytest.raises(SchemaError):
        plot_sweep(path, "snr_db", "throughput", tmp_path / "x")


def test_wrong_axis_raises(tmp_path):
    path = write_sweep(tmp_path / "sweep.csv")
    with pytest.raises(SchemaError):
        plot_sweep(path, "j", "ader", tmp_path / "x")


def test_blank_cells_are_skipped(tmp_path):
    path = write_sweep(tmp_path / "sweep.csv", blank_ber=True)
    check_written(plot_sweep(path, "snr_db", "ber", tmp_path / "ber"))


def test_se_overlay_matching_grids(tmp_path):
    sim = write_sweep(tmp_path / "sim.csv")
    se = write_sweep(tmp_path / "se.csv", algorithms=("dsamp",))
    check_written(plot_se_overlay(sim, se, tmp_path / "overlay"))


def test_se_overlay_identical_inputs(tmp_path):
    sim = write_sweep(tmp_path / "sim.csv")
    check_written(plot_se_overlay(sim, sim, tmp_path / "same"))


def test_se_overlay_prediction_only(tmp_path):
    se = write_sweep(tmp_path / "se.csv", algorithms=("dsamp",))
    check_written(plot_se_overlay(None, se, tmp_path / "pred"))


def test_se_overlay_mismatched_grid_refused(tmp_path):
    sim = write_sweep(tmp_path / "sim.csv", values=(0.0, 1.0, 2.0, 3.0))
    se = write_sweep(tmp_path / "se.csv", values=(0.0, 2.0, 4.0, 6.0))
    with pytest.raises(SchemaError):
        plot_se_overlay(sim, se, tmp_path / "x")


def test_se_overlay_mismatched_axis_refused(tmp_path):
    sim = write_sweep(tmp_path / "sim.csv", axis="snr_db")
    se = write_sweep(tmp_path / "se.csv", axis="j")
    with pytest.raises(SchemaError):
        plot_se_overlay(sim, se, tmp_path / "x")


def test_regeneration_is_deterministic(tmp_path):
    path = write_sweep(tmp_path / "sweep.csv")
    first = plot_sweep(path, "snr_db", "ber", tmp_path / "a")
    second = plot_sweep(path, "snr_db", "ber", tmp_path / "b")
    for one, two in zip(first, second):
        with open(one, "rb") as fa, open(two, "rb") as fb:
            assert fa.read() == fb.read()


def test_import_pulls_no_simulation_package():
    # The figure scripts consume CSV files only. Checked in a fresh
    # interpreter so the result is independent of test ordering.
    code = ("import sys, plotkit.cli, plotkit.figures; "
            "sys.exit(1 if 'mmaccess' in sys.modules else 0)")
    proc = subprocess.run([sys.executable, "-c", code], capture_output=True)
    assert proc.returncode == 0, proc.stderr.decode()


def test_cli_sweep_and_errors(tmp_path, capsys):
    from plotkit.cli import cli_main

    path = write_sweep(tmp_path / "sweep.csv")
    out = tmp_path / "cli" / "fig"
    assert cli_main(["sweep", "--csv", str(path), "--x", "snr_db",
                     "--y", "ader", "--out", str(out)]) == 0
    printed = capsys.readouterr().out.strip().splitlines()
    assert printed == [str(out) + ".png", str(out) + ".pdf"]

    assert cli_main(["sweep", "--csv", str(path), "--x", "snr_db",
                     "--y", "nope", "--out", str(out)]) == 1
    assert "nope" in capsys.readouterr().err

    assert cli_main(["sweep", "--csv", str(tmp_path / "missing.csv"),
                     "--x", "snr_db", "--y", "ader", "--out", str(out)]) == 1

    with pytest.raises(SystemExit) as exc:
        cli_main(["sweep", "--csv", str(path)])
    assert exc.value.code == 2


def test_cli_overlay(tmp_path):
    from plotkit.cli import cli_main

    sim = write_sweep(tmp_path / "sim.csv")
    se = write_sweep(tmp_path / "se.csv", algorithms=("dsamp",))
    assert cli_main(["se-overlay", "--csv", str(sim), "--se", str(se),
                     "--out", str(tmp_path / "ov")]) == 0
    assert cli_main(["se-overlay", "--se", str(se),
                     "--out", str(tmp_path / "ov2")]) == 0
