"""Command-line front end.

Subcommands: `simulate` runs a Monte-Carlo sweep to CSV, `se` runs the
state-evolution predictor and emits its per-iteration trace, `track-csi`
runs multiframe channel tracking, `complexity` prints the per-frame
multiplication count. All file-producing commands write to --out, or to
stdout when --out is omitted. Exit codes: 0 success, 1 on configuration
or runtime errors, 2 on bad command lines (argparse).
"""

from __future__ import annotations

import argparse
import csv
import sys

from .baselines import complexity_count
from .coded import CodedConfig, PacketLayout
from .csi import run_multiframe_tracking
from .errors import ConfigurationError, NumericsError, UsageError
from .harness import (
    ALGORITHMS,
    AXES,
    CODED_ALGORITHMS,
    ExperimentSpec,
    run_sweep,
    write_rows_csv,
)
from .se import SeConfig, se_iterate
from .sysmodel import read_config_file, system_config_from_mapping

__all__ = ["cli_main", "main"]

_COMPLEXITY_ALGOS = ("dsamp", "dsamp-nominmax", "amp", "lmmse")
_TRACK_COLUMNS = ("frame", "strategy", "nmse_h", "nmse_x",
                  "detected_count", "refined_count")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mmaccess",
        description="Monte-Carlo simulations for media-modulation based "
                    "grant-free massive access.")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a sweep and emit metric rows")
    sim.add_argument("--config", help="plain-text key = value scenario file")
    sim.add_argument("--seed", type=int, help="override the base seed")
    sim.add_argument("--out", help="CSV path (stdout when omitted)")
    sim.add_argument("--algo", action="append", dest="algorithms",
                     choices=ALGORITHMS, help="repeatable algorithm selector")
    sim.add_argument("--frames", type=int, help="frames per sweep point")
    sim.add_argument("--axis", choices=AXES, help="sweep axis")
    sim.add_argument("--values", help="comma-separated axis values")

    se = sub.add_parser("se", help="state-evolution trace and predicted rates")
    se.add_argument("--config")
    se.add_argument("--seed", type=int)
    se.add_argument("--out")

    track = sub.add_parser("track-csi", help="multiframe channel tracking")
    track.add_argument("--config")
    track.add_argument("--seed", type=int)
    track.add_argument("--out")
    track.add_argument("--frames", type=int, dest="n_frames")
    track.add_argument("--alpha", type=float, help="channel aging factor")
    track.add_argument("--strategy",
                       choices=("update", "non_update", "both"))

    cx = sub.add_parser("complexity", help="per-frame multiplication count")
    cx.add_argument("--algo", required=True, choices=_COMPLEXITY_ALGOS)
    for name in ("k", "ka", "nt", "m", "nr", "j", "t0"):
        cx.add_argument(f"--{name}", type=int)
    return parser


def _load_mapping(path: str | None) -> dict:
    return read_config_file(path) if path else {}


def _base_config(mapping: dict, seed: int | None):
    cfg = system_config_from_mapping(mapping)
    if seed is not None:
        cfg = cfg.replace(seed=seed)
    return cfg


def _coded_from_mapping(mapping: dict, *, sic_default: bool = True,
                        ) -> CodedConfig:
    layout = PacketLayout(ls=mapping.get("coded.ls", 20),
                          ld=mapping.get("coded.ld", 100))
    return CodedConfig(
        layout=layout,
        iters=mapping.get("fec.iters", 8),
        scale=mapping.get("fec.scale", 0.75),
        interleave=mapping.get("coded.interleave", True),
        sic=mapping.get("coded.sic", sic_default),
        judge=mapping.get("coded.judge", True),
        n_bar=mapping.get("coded.n_bar", 5),
    )


def _split_csv(text: str) -> list[str]:
    return [tok.strip() for tok in text.split(",") if tok.strip()]


def _cmd_simulate(args) -> int:
    mapping = _load_mapping(args.config)
    base = _base_config(mapping, args.seed)
    axis = args.axis or mapping.get("axis", "snr_db")
    values_text = args.values or mapping.get("values")
    if values_text:
        values = tuple(float(tok) for tok in _split_csv(values_text))
    else:
        values = (base.snr_db,)
    if args.algorithms:
        algorithms = tuple(args.algorithms)
    else:
        algorithms = tuple(_split_csv(mapping.get("algorithms", "dsamp")))
    frames = args.frames if args.frames is not None else mapping.get("frames", 200)
    coded = None
    needs_coded = (mapping.get("coded.enabled", False)
                   or any(a in CODED_ALGORITHMS for a in algorithms))
    if needs_coded:
        coded = _coded_from_mapping(mapping)
    spec = ExperimentSpec(base=base, axis=axis, values=values,
                          algorithms=algorithms, frames=frames,
                          out=args.out, coded=coded)
    rows = run_sweep(spec)
    if args.out is None:
        write_rows_csv(rows, spec, sys.stdout)
    return 0


def _config_echo(cfg) -> list[tuple[str, str]]:
    return [(name, str(getattr(cfg, name)))
            for name in ("k", "ka", "nt", "m", "nr", "j", "snr_db",
                         "seed", "t0")]


def _write_table(fh, title: str, meta, columns, rows) -> None:
    fh.write(f"# {title}\n")
    for key, value in meta:
        fh.write(f"# {key} = {value}\n")
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(columns)
    writer.writerows(rows)


def _with_out(path: str | None, emit) -> int:
    if path is None:
        emit(sys.stdout)
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            emit(fh)
    return 0


def _cmd_se(args) -> int:
    mapping = _load_mapping(args.config)
    cfg = _base_config(mapping, args.seed)
    secfg = SeConfig(
        system=cfg,
        gamma=mapping.get("se.gamma", 1.0),
        n_mc=mapping.get("se.n_mc", 500),
        t_se=mapping.get("se.t_se", 50),
        epsilon=mapping.get("se.epsilon", 1e-5),
    )
    trace = se_iterate(secfg)
    meta = _config_echo(cfg) + [
        ("n_mc", str(secfg.n_mc)),
        ("t_se", str(secfg.t_se)),
        ("predicted_ader", repr(trace.predicted_ader)),
        ("predicted_ser", "" if trace.predicted_ser is None
         else repr(trace.predicted_ser)),
        ("predicted_ber", "" if trace.predicted_ber is None
         else repr(trace.predicted_ber)),
    ]
    rows = [(i + 1, repr(float(e)), repr(float(v)))
            for i, (e, v) in enumerate(zip(trace.e, trace.v))]
    return _with_out(args.out, lambda fh: _write_table(
        fh, "state-evolution trace", meta, ("iteration", "e", "v"), rows))


def _cmd_track(args) -> int:
    mapping = _load_mapping(args.config)
    cfg = _base_config(mapping, args.seed)
    # Tracking rebuilds the channel estimate between frames; cancellation
    # inside one frame adds little and slows the sweep, so it defaults off.
    ccfg = _coded_from_mapping(mapping, sic_default=False)
    alpha = args.alpha if args.alpha is not None else mapping.get("alpha", 0.99)
    n_frames = (args.n_frames if args.n_frames is not None
                else mapping.get("n_frames", 50))
    strategy = args.strategy or mapping.get("strategy", "both")
    if strategy not in ("update", "non_update", "both"):
        raise ConfigurationError(
            f"unknown strategy {strategy!r}; expected update, non_update or both")
    records = []
    if strategy in ("update", "both"):
        records += run_multiframe_tracking(cfg, ccfg, alpha=alpha,
                                           n_frames=n_frames, update=True)
    if strategy in ("non_update", "both"):
        records += run_multiframe_tracking(cfg, ccfg, alpha=alpha,
                                           n_frames=n_frames, update=False)
    meta = _config_echo(cfg) + [
        ("alpha", repr(float(alpha))),
        ("n_frames", str(n_frames)),
        ("strategy", strategy),
        ("coded.ls", str(ccfg.layout.ls)),
        ("coded.ld", str(ccfg.layout.ld)),
    ]
    rows = [(r.frame, r.strategy, repr(float(r.nmse_h)), repr(float(r.nmse_x)),
             r.detected_count, r.refined_count) for r in records]
    return _with_out(args.out, lambda fh: _write_table(
        fh, "channel tracking trace", meta, _TRACK_COLUMNS, rows))


def _cmd_complexity(args) -> int:
    overrides = {name: getattr(args, name)
                 for name in ("k", "ka", "nt", "m", "nr", "j", "t0")
                 if getattr(args, name) is not None}
    cfg = system_config_from_mapping(overrides)
    count = complexity_count(cfg, args.algo)
    print(f"{args.algo}: {count:.2e} real multiplications per frame")
    return 0


_DISPATCH = {
    "simulate": _cmd_simulate,
    "se": _cmd_se,
    "track-csi": _cmd_track,
    "complexity": _cmd_complexity,
}


def cli_main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _DISPATCH[args.command](args)
    except (ConfigurationError, UsageError, NumericsError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli_main())
