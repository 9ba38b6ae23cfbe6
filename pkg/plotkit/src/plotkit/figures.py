"""Readers and plotters for the sweep CSV schema.

A metric CSV starts with '# key = value' metadata lines, then a header
row and data rows. Sweep files carry (axis, value, algorithm) columns
plus metric columns; tracking files carry (frame, strategy) instead.
Both flavors plot through plot_sweep; the x column name decides which.

Figures are written as PNG and PDF next to each other, with the file
metadata that varies between runs (timestamps, tool version) stripped so
regeneration from the same CSV is byte-identical.
"""

import csv
import os
from pathlib import Path

import matplotlib

matplotlib.use("Agg")  # batch use; never open a window

import matplotlib.pyplot as plt


class SchemaError(Exception):
    """The CSV does not carry what the requested figure needs."""


_LINE_STYLES = ("o-", "s-", "^-", "d-", "v-", "*-", "x-")


def read_metric_csv(path):
    """Parse one metric CSV into (metadata, header, rows).

    metadata is a dict of the '# key = value' lines; rows are dicts of
    raw strings keyed by header name. No numeric conversion happens
    here, so the caller decides what a blank cell means.
    """
    meta = {}
    data_lines = []
    with open(path, newline="") as fh:
        for line in fh:
            if line.startswith("#"):
                body = line[1:].strip()
                if " = " in body:
                    key, val = body.split(" = ", 1)
                    meta[key.strip()] = val.strip()
                continue
            if line.strip():
                data_lines.append(line)
    if not data_lines:
        raise SchemaError(f"{path}: no header row found")
    reader = csv.reader(data_lines)
    header = next(reader)
    rows = [dict(zip(header, rec)) for rec in reader if rec]
    return meta, header, rows


def _float_or_none(text):
    if text is None or text == "":
        return None
    return float(text)


def _series_points(rows, xcol, ycol):
    """Sorted (x, y) pairs with blank or non-positive y dropped.

    The y axis is logarithmic, so zero counts ("no errors observed")
    cannot be drawn; dropping them keeps the rest of the curve.
    """
    pts = []
    for r in rows:
        y = _float_or_none(r.get(ycol, ""))
        if y is not None and y > 0:
            pts.append((float(r[xcol]), y))
    pts.sort()
    return pts


def _resolve_axes(header, rows, meta, x_axis):
    """Map the requested x axis onto (x column, group column).

    Tracking CSVs expose the x axis as a real column (e.g. frame) and
    group lines by strategy. Sweep CSVs store the axis name in the axis
    column and the abscissa in value, one line per algorithm.
    """
    if x_axis in header:
        group = "strategy" if "strategy" in header else "algorithm"
        if group not in header:
            raise SchemaError(
                f"no algorithm or strategy column to group lines by "
                f"(columns: {', '.join(header)})")
        return x_axis, group
    if "axis" in header and "value" in header:
        declared = {r["axis"] for r in rows} or {meta.get("axis", "")}
        if x_axis not in declared:
            have = ", ".join(sorted(declared))
            raise SchemaError(f"requested x axis {x_axis!r} but the CSV "
                              f"sweeps {have!r}")
        return "value", "algorithm"
    raise SchemaError(f"no column {x_axis!r} and no axis/value pair "
                      f"(columns: {', '.join(header)})")


def _group_order(rows, group, meta):
    """Line order: the metadata list when present, else first appearance."""
    listed = meta.get("algorithms" if group == "algorithm" else "", "")
    order = [name.strip() for name in listed.split(",") if name.strip()]
    for r in rows:
        name = r.get(group, "")
        if name and name not in order:
            order.append(name)
    return order


def _figure_paths(out_image):
    base = Path(out_image)
    if base.suffix.lower() in (".png", ".pdf"):
        base = base.with_suffix("")
    os.makedirs(base.parent, exist_ok=True)
    return base.with_suffix(".png"), base.with_suffix(".pdf")


def _save(fig, out_image):
    png, pdf = _figure_paths(out_image)
    # Strip the volatile metadata so identical inputs give identical bytes.
    fig.savefig(png, dpi=150, metadata={"Software": None})
    fig.savefig(pdf, metadata={"CreationDate": None, "Producer": None})
    plt.close(fig)
    return str(png), str(pdf)


def _describe(meta):
    parts = []
    if "frames" in meta:
        parts.append(f"{meta['frames']} frames/point")
    if "snr_db" in meta and "axis" in meta and meta["axis"] != "snr_db":
        parts.append(f"SNR {meta['snr_db']} dB")
    return ", ".join(parts)


def plot_sweep(csv_path, x_axis, y_metric, out_image):
    """One log-y figure from a metric CSV: a line per algorithm/strategy.

    Returns the (png, pdf) paths written. Raises SchemaError when the
    CSV lacks the requested columns or sweeps a different axis.
    """
    meta, header, rows = read_metric_csv(csv_path)
    if y_metric not in header:
        raise SchemaError(f"no column {y_metric!r} in {csv_path} "
                          f"(columns: {', '.join(header)})")
    xcol, group = _resolve_axes(header, rows, meta, x_axis)

    fig, ax = plt.subplots(figsize=(6.4, 4.4))
    drew = False
    for i, name in enumerate(_group_order(rows, group, meta)):
        pts = _series_points([r for r in rows if r.get(group) == name],
                             xcol, y_metric)
        if not pts:
            continue
        style = _LINE_STYLES[i % len(_LINE_STYLES)]
        ax.semilogy([p[0] for p in pts], [p[1] for p in pts], style,
                    label=name, markersize=5)
        drew = True
    ax.set_xlabel(x_axis)
    ax.set_ylabel(y_metric)
    title = _describe(meta)
    if title:
        ax.set_title(title, fontsize=10)
    ax.grid(True, which="both", alpha=0.3)
    if drew:
        ax.legend()
    return _save(fig, out_image)


def _check_same_grid(sim_rows, se_rows, xcol):
    sim_grid = sorted({float(r[xcol]) for r in sim_rows})
    se_grid = sorted({float(r[xcol]) for r in se_rows})
    if sim_grid != se_grid:
        raise SchemaError(
            f"simulation grid {sim_grid} and prediction grid {se_grid} "
            f"differ; interpolation is refused, regenerate on one grid")


def plot_se_overlay(sim_csv, se_csv, out_image, y_metric="ber"):
    """Simulated curves with a theory prediction overlaid dashed.

    Both files follow the sweep schema and must cover the same axis and
    the same grid of values; sim_csv may be None for a prediction-only
    figure. Returns the (png, pdf) paths written.
    """
    se_meta, se_header, se_rows = read_metric_csv(se_csv)
    if y_metric not in se_header:
        raise SchemaError(f"no column {y_metric!r} in {se_csv}")
    se_xcol, se_group = _resolve_axes(se_header, se_rows, se_meta,
                                      se_meta.get("axis", "value"))

    fig, ax = plt.subplots(figsize=(6.4, 4.4))
    drew = False
    x_name = se_meta.get("axis", se_xcol)

    if sim_csv is not None:
        meta, header, rows = read_metric_csv(sim_csv)
        if y_metric not in header:
            raise SchemaError(f"no column {y_metric!r} in {sim_csv}")
        xcol, group = _resolve_axes(header, rows, meta,
                                    meta.get("axis", "value"))
        sim_axis = meta.get("axis", xcol)
        se_axis = se_meta.get("axis", se_xcol)
        if sim_axis != se_axis:
            raise SchemaError(f"simulation sweeps {sim_axis!r} but the "
                              f"prediction sweeps {se_axis!r}")
        _check_same_grid(rows, se_rows, xcol)
        x_name = sim_axis
        for i, name in enumerate(_group_order(rows, group, meta)):
            pts = _series_points([r for r in rows if r.get(group) == name],
                                 xcol, y_metric)
            if not pts:
                continue
            style = _LINE_STYLES[i % len(_LINE_STYLES)]
            ax.semilogy([p[0] for p in pts], [p[1] for p in pts], style,
                        label=name, markersize=5)
            drew = True

    for name in _group_order(se_rows, se_group, se_meta):
        pts = _series_points([r for r in se_rows if r.get(se_group) == name],
                             se_xcol, y_metric)
        if not pts:
            continue
        ax.semilogy([p[0] for p in pts], [p[1] for p in pts], "k--",
                    label=f"{name} (prediction)")
        drew = True

    ax.set_xlabel(x_name)
    ax.set_ylabel(y_metric)
    ax.grid(True, which="both", alpha=0.3)
    if drew:
        ax.legend()
    return _save(fig, out_image)
