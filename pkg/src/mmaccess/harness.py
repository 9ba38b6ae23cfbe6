"""Seeded Monte-Carlo experiment runner with CSV emission.

One experiment is a sweep over a single scenario axis; every (axis value,
algorithm) pair becomes one aggregated metric row. Per-frame random
streams are keyed by (base seed, axis value, algorithm, frame index), so
adding algorithms or values to a sweep never perturbs existing rows, and
any row can be reproduced in isolation.

Frames at one point share the configuration and therefore the device
count and Ka, so averaging per-frame rates equals pooling the error
counts.
"""

from __future__ import annotations

import csv
import dataclasses
import time
from dataclasses import dataclass

import numpy as np

from .baselines import conventional_amp, dsamp_no_minmax, lmmse_detect
from .coded import CodedConfig, CodedFrame, IdsampResult, build_coded_frame, run_idsamp
from .dsamp import hard_demod, run_dsamp
from .errors import ConfigurationError
from .metrics import FrameRates, rates_from_decisions, uncoded_frame_rates
from .sysmodel import (
    Constellation,
    MediaFrame,
    SystemConfig,
    build_frame,
    draw_activity,
    draw_rayleigh_channel,
    make_constellation,
    rng_for,
    snr_to_noise_variance,
    transmit,
)

__all__ = [
    "AXES",
    "ALGORITHMS",
    "CODED_ALGORITHMS",
    "CSV_COLUMNS",
    "ExperimentSpec",
    "MetricRow",
    "cfg_for_value",
    "coded_frame_rates",
    "compute_metrics",
    "point_frame_rates",
    "run_point",
    "run_sweep",
    "write_rows_csv",
]

AXES = ("snr_db", "j", "lambda", "nr", "t0")
UNCODED_ALGORITHMS = ("dsamp", "dsamp-nominmax", "amp", "lmmse")
CODED_ALGORITHMS = ("idsamp", "coded-nosic", "coded-flat", "coded-nojudge",
                    "uncoded-hard")
ALGORITHMS = UNCODED_ALGORITHMS + CODED_ALGORITHMS

CSV_COLUMNS = ("axis", "value", "algorithm", "ader", "ser", "ber",
               "frames", "em", "ef", "seed", "wall_time")


def cfg_for_value(base: SystemConfig, axis: str, value) -> SystemConfig:
    """Scenario at one sweep point. lambda maps to Ka = round(lambda*K)."""
    if axis == "snr_db":
        return base.replace(snr_db=float(value))
    if axis == "j":
        return base.replace(j=int(value))
    if axis == "nr":
        return base.replace(nr=int(value))
    if axis == "t0":
        return base.replace(t0=int(value))
    if axis == "lambda":
        return base.replace(ka=int(round(float(value) * base.k)))
    raise ConfigurationError(f"unknown sweep axis {axis!r}; expected one of {AXES}")


@dataclass(frozen=True)
class ExperimentSpec:
    """One sweep: base scenario, axis with values, algorithms, frame budget."""

    base: SystemConfig
    axis: str = "snr_db"
    values: tuple = ()
    algorithms: tuple = ("dsamp",)
    frames: int = 200
    out: str | None = None
    coded: CodedConfig | None = None

    def __post_init__(self):
        if self.axis not in AXES:
            raise ConfigurationError(
                f"unknown sweep axis {self.axis!r}; expected one of {AXES}")
        if not self.values:
            raise ConfigurationError("sweep needs at least one axis value")
        if not self.algorithms:
            raise ConfigurationError("sweep needs at least one algorithm")
        if self.frames < 1:
            raise ConfigurationError("frames must be at least 1")
        for algo in self.algorithms:
            _check_algorithm(algo, self.coded)
        object.__setattr__(self, "values",
                           tuple(float(v) for v in self.values))
        object.__setattr__(self, "algorithms", tuple(self.algorithms))


@dataclass(frozen=True)
class MetricRow:
    """Aggregated rates of one (axis value, algorithm) sweep point."""

    axis: str
    value: float
    algorithm: str
    ader: float
    ser: float | None
    ber: float | None
    frames: int
    em: int
    ef: int
    seed: int
    wall_time: float

    def __post_init__(self):
        for name in ("ader", "ser", "ber"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 1.0:
                raise ConfigurationError(f"{name} = {v} outside [0, 1]")


def _check_algorithm(algorithm: str, coded: CodedConfig | None) -> None:
    if algorithm not in ALGORITHMS:
        raise ConfigurationError(
            f"unknown algorithm {algorithm!r}; expected one of {ALGORITHMS}")
    if algorithm in CODED_ALGORITHMS and coded is None:
        raise ConfigurationError(
            f"algorithm {algorithm!r} needs a coded configuration")


def _coded_variant(ccfg: CodedConfig, algorithm: str) -> CodedConfig:
    if algorithm == "idsamp":
        return ccfg
    if algorithm == "coded-nosic":
        return dataclasses.replace(ccfg, sic=False)
    if algorithm == "coded-flat":
        return dataclasses.replace(ccfg, sic=False, interleave=False)
    if algorithm == "coded-nojudge":
        return dataclasses.replace(ccfg, judge=False)
    raise ConfigurationError(f"no coded variant for {algorithm!r}")


# --- per-frame evaluation ---

def _lmmse_rates(cfg: SystemConfig, c: Constellation, frame: MediaFrame,
                 h: np.ndarray, sigma2: float,
                 rng: np.random.Generator) -> FrameRates:
    """Genie-aided LMMSE on the true support; ADER is zero by construction."""
    y = transmit(h, frame.X, sigma2, rng)
    active = np.flatnonzero(frame.activity)
    map_hat = np.zeros((cfg.k, cfg.j), dtype=np.int64)
    qam_hat = np.zeros((cfg.k, cfg.j), dtype=np.int64)
    if active.size:
        cols = (active[:, None] * cfg.nt + np.arange(cfg.nt)).ravel()
        soft = lmmse_detect(y, h[:, cols], sigma2, c).x_soft
        blocks = soft.reshape(active.size, cfg.nt, cfg.j)
        eta_star = np.abs(blocks).argmax(axis=1)
        vals = np.take_along_axis(blocks, eta_star[:, None, :], axis=1)[:, 0, :]
        map_hat[active] = eta_star + 1
        qam_hat[active] = c.nearest(vals)
    return rates_from_decisions(cfg, c, frame.activity, frame.map_idx,
                                frame.sym_idx, active, map_hat, qam_hat)


def _uncoded_frame(cfg: SystemConfig, c: Constellation, algorithm: str,
                   rng: np.random.Generator) -> FrameRates:
    activity = draw_activity(cfg, rng)
    frame = build_frame(cfg, c, activity, rng=rng)
    h = draw_rayleigh_channel(cfg, rng).H
    sigma2 = snr_to_noise_variance(cfg)
    if algorithm == "lmmse":
        return _lmmse_rates(cfg, c, frame, h, sigma2, rng)
    y = transmit(h, frame.X, sigma2, rng)
    if algorithm == "dsamp":
        result = run_dsamp(y, h, cfg, c)
    elif algorithm == "dsamp-nominmax":
        result = dsamp_no_minmax(y, h, cfg, c)
    else:
        result = conventional_amp(y, h, cfg, cfg.lam, sigma2, c)
    return uncoded_frame_rates(cfg, frame, result, c)


def coded_frame_rates(cfg: SystemConfig, ccfg: CodedConfig, c: Constellation,
                      frame: CodedFrame, res: IdsampResult) -> FrameRates:
    """Rates of a coded receiver run against its frame truth.

    ADER counts the round-0 detected set; SER uses the hard symbol
    decisions of that first detection; BER is payload-level after
    decoding, charging every payload bit of a missed device.
    """
    first = res.first_detection
    _, _, qam_idx, _ = hard_demod(first.X_hat, first.omega, c, cfg.nt)
    base = rates_from_decisions(cfg, c, frame.activity, frame.map_idx,
                                frame.sym_idx, res.omega0,
                                first.map_indices, qam_idx)
    if base.ber is None:
        return base
    ld = ccfg.layout.ld
    active = np.flatnonzero(frame.activity)
    hit = active[np.isin(active, res.omega0)]
    payload_errors = int(
        (res.payloads[hit] != frame.payloads[hit]).sum()) if hit.size else 0
    ber = (ld * base.missed + payload_errors) / (ld * cfg.ka)
    return FrameRates(ader=base.ader, ser=base.ser, ber=ber,
                      missed=base.missed, false_alarms=base.false_alarms)


def _uncoded_hard_frame(cfg: SystemConfig, ccfg: CodedConfig,
                        c: Constellation, rng: np.random.Generator) -> FrameRates:
    """Packets sent raw in L/eta slots, recovered by hard decisions only."""
    layout = ccfg.layout
    if layout.l % cfg.eta:
        raise ConfigurationError(
            f"packet length {layout.l} is not a multiple of eta = {cfg.eta}")
    cfg0 = cfg.replace(j=layout.l // cfg.eta)
    activity = draw_activity(cfg0, rng)
    payloads = rng.integers(0, 2, size=(cfg.k, layout.ld), dtype=np.uint8)
    packets = np.concatenate(
        [np.broadcast_to(layout.signature, (cfg.k, layout.ls)), payloads],
        axis=1)
    frame = build_frame(cfg0, c, activity, bits=packets)
    h = draw_rayleigh_channel(cfg0, rng).H
    sigma2 = snr_to_noise_variance(cfg0)
    y = transmit(h, frame.X, sigma2, rng)
    result = run_dsamp(y, h, cfg0, c)
    base = uncoded_frame_rates(cfg0, frame, result, c)
    if base.ber is None:
        return base
    _, media_bits, _, qam_bits = hard_demod(result.X_hat, result.omega, c,
                                            cfg0.nt)
    bits_hat = np.concatenate([media_bits, qam_bits], axis=2).reshape(cfg.k, -1)
    active = np.flatnonzero(activity)
    hit = active[np.isin(active, result.omega)]
    payload_errors = int(
        (bits_hat[hit, layout.ls:] != packets[hit, layout.ls:]).sum())
    ber = (layout.ld * base.missed + payload_errors) / (layout.ld * cfg.ka)
    return FrameRates(ader=base.ader, ser=base.ser, ber=ber,
                      missed=base.missed, false_alarms=base.false_alarms)


def _coded_frame(cfg: SystemConfig, ccfg: CodedConfig, c: Constellation,
                 algorithm: str, rng: np.random.Generator) -> FrameRates:
    if algorithm == "uncoded-hard":
        return _uncoded_hard_frame(cfg, ccfg, c, rng)
    variant = _coded_variant(ccfg, algorithm)
    frame = build_coded_frame(cfg, variant, c, rng=rng)
    h = draw_rayleigh_channel(cfg, rng).H
    y = transmit(h, frame.X, snr_to_noise_variance(cfg), rng)
    res = run_idsamp(y, h, cfg, variant, c)
    return coded_frame_rates(cfg, variant, c, frame, res)


# --- points and sweeps ---

def point_frame_rates(cfg: SystemConfig, algorithm: str, frames: int, *,
                      base_seed: int, axis_value,
                      coded: CodedConfig | None = None) -> list[FrameRates]:
    """Per-frame rates of one sweep point, one independent stream per frame."""
    _check_algorithm(algorithm, coded)
    if frames < 1:
        raise ConfigurationError("frames must be at least 1")
    c = make_constellation(cfg.m)
    out = []
    for f in range(frames):
        rng = rng_for(base_seed, axis_value, algorithm, f)
        if algorithm in CODED_ALGORITHMS:
            out.append(_coded_frame(cfg, coded, c, algorithm, rng))
        else:
            out.append(_uncoded_frame(cfg, c, algorithm, rng))
    return out


def _aggregate(rates: list[FrameRates], axis: str, value, algorithm: str,
               seed: int, wall_time: float) -> MetricRow:
    sers = [r.ser for r in rates if r.ser is not None]
    bers = [r.ber for r in rates if r.ber is not None]
    return MetricRow(
        axis=axis,
        value=float(value),
        algorithm=algorithm,
        ader=float(np.mean([r.ader for r in rates])),
        ser=float(np.mean(sers)) if sers else None,
        ber=float(np.mean(bers)) if bers else None,
        frames=len(rates),
        em=int(sum(r.missed for r in rates)),
        ef=int(sum(r.false_alarms for r in rates)),
        seed=seed,
        wall_time=wall_time,
    )


def run_point(cfg: SystemConfig, algorithm: str, frames: int, *,
              base_seed: int, axis: str, value,
              coded: CodedConfig | None = None) -> MetricRow:
    """Average metrics over independent frames of one sweep point."""
    start = time.perf_counter()
    rates = point_frame_rates(cfg, algorithm, frames, base_seed=base_seed,
                              axis_value=value, coded=coded)
    return _aggregate(rates, axis, value, algorithm, base_seed,
                      time.perf_counter() - start)


def compute_metrics(truth: MediaFrame, result, cfg: SystemConfig,
                    c: Constellation | None = None, *,
                    algorithm: str = "dsamp") -> MetricRow:
    """Single-frame MetricRow from a detection result and its truth."""
    if c is None:
        c = make_constellation(cfg.m)
    rates = uncoded_frame_rates(cfg, truth, result, c)
    return _aggregate([rates], "snr_db", cfg.snr_db, algorithm, cfg.seed, 0.0)


def run_sweep(spec: ExperimentSpec) -> list[MetricRow]:
    """All sweep points in deterministic sorted order; CSV file if spec.out."""
    rows = []
    for value in spec.values:
        cfg = cfg_for_value(spec.base, spec.axis, value)
        for algorithm in spec.algorithms:
            rows.append(run_point(cfg, algorithm, spec.frames,
                                  base_seed=spec.base.seed, axis=spec.axis,
                                  value=value, coded=spec.coded))
    rows.sort(key=lambda r: (r.value, r.algorithm))
    if spec.out is not None:
        with open(spec.out, "w", encoding="utf-8", newline="") as fh:
            write_rows_csv(rows, spec, fh)
    return rows


# --- CSV emission ---

def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def sweep_metadata(spec: ExperimentSpec) -> list[tuple[str, str]]:
    """Key/value lines that make the CSV self-describing."""
    base = spec.base
    meta = [
        ("axis", spec.axis),
        ("values", ",".join(_fmt(v) for v in spec.values)),
        ("algorithms", ",".join(spec.algorithms)),
        ("frames", str(spec.frames)),
        ("base_seed", str(base.seed)),
    ]
    for name in ("k", "ka", "nt", "m", "nr", "j", "snr_db", "t0"):
        meta.append((name, _fmt(getattr(base, name))))
    if spec.coded is not None:
        ccfg = spec.coded
        meta += [
            ("coded.ls", str(ccfg.layout.ls)),
            ("coded.ld", str(ccfg.layout.ld)),
            ("coded.n_bar", str(ccfg.n_bar)),
            ("coded.interleave", str(ccfg.interleave).lower()),
            ("coded.sic", str(ccfg.sic).lower()),
            ("coded.judge", str(ccfg.judge).lower()),
            ("fec.iters", str(ccfg.iters)),
            ("fec.scale", _fmt(ccfg.scale)),
        ]
    meta.append(("snr_convention", "sigma_w^2 = ka / 10^(snr_db/10)"))
    return meta


def write_rows_csv(rows: list[MetricRow], spec: ExperimentSpec, fh) -> None:
    fh.write("# Monte-Carlo sweep results\n")
    for key, value in sweep_metadata(spec):
        fh.write(f"# {key} = {value}\n")
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in rows:
        writer.writerow([_fmt(getattr(row, col)) for col in CSV_COLUMNS])
