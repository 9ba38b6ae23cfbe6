"""Error-rate bookkeeping shared by the harness and the state evolution.

Three frame-level rates: activity detection error rate over all devices,
and symbol/bit error rates over the truly active devices. A missed
active device counts every one of its symbols and bits as wrong; a false
alarm affects only the detection rate. Data errors are charged per slot:
a symbol is wrong when either the mirror row or the QAM decision is
wrong, and bit errors combine the natural-binary mirror label with the
Gray constellation label.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dsamp import DetectionResult, hard_demod
from .sysmodel import Constellation, MediaFrame, SystemConfig, bits_to_int

__all__ = ["FrameRates", "rates_from_decisions", "uncoded_frame_rates"]


@dataclass(frozen=True)
class FrameRates:
    """Per-frame error rates; ser/ber are None when nothing was active."""

    ader: float
    ser: float | None
    ber: float | None
    missed: int
    false_alarms: int


def rates_from_decisions(
    cfg: SystemConfig,
    c: Constellation,
    activity: np.ndarray,
    map_true: np.ndarray,
    sym_true: np.ndarray,
    omega: np.ndarray,
    map_hat: np.ndarray,
    qam_hat: np.ndarray,
) -> FrameRates:
    """Rates from index-level truth and decisions.

    map_* are 1-based mirror rows (K, J); sym_true/qam_hat are
    constellation indices (K, J). Entries of inactive or undetected
    devices are ignored, so placeholder values there are fine.
    """
    k = cfg.k
    in_omega = np.zeros(k, dtype=bool)
    in_omega[np.asarray(omega, dtype=int)] = True
    activity = np.asarray(activity, dtype=bool)
    missed = int(np.count_nonzero(activity & ~in_omega))
    false_alarms = int(np.count_nonzero(~activity & in_omega))
    ader = (missed + false_alarms) / k

    ka = int(np.count_nonzero(activity))
    if ka == 0:
        return FrameRates(ader=ader, ser=None, ber=None,
                          missed=missed, false_alarms=false_alarms)

    hit = activity & in_omega
    j = cfg.j
    eta = cfg.eta
    sym_errors = 0
    bit_errors = 0
    if np.any(hit):
        mt = np.maximum(map_true[hit] - 1, 0)
        mh = np.maximum(map_hat[hit] - 1, 0)
        st = np.maximum(sym_true[hit], 0)
        sh = np.maximum(qam_hat[hit], 0)
        sym_errors = int(np.count_nonzero((mt != mh) | (st != sh)))
        labels = bits_to_int(c.bit_labels).astype(np.uint32)
        bit_errors = int(
            np.bitwise_count((mt ^ mh).astype(np.uint32)).sum()
            + np.bitwise_count(labels[st] ^ labels[sh]).sum()
        )
    ser = (j * missed + sym_errors) / (j * ka)
    ber = (eta * j * missed + bit_errors) / (eta * j * ka)
    return FrameRates(ader=ader, ser=ser, ber=ber,
                      missed=missed, false_alarms=false_alarms)


def uncoded_frame_rates(
    cfg: SystemConfig,
    frame: MediaFrame,
    result: DetectionResult,
    c: Constellation,
) -> FrameRates:
    """Rates of a detection result against the frame that produced it."""
    _, _, qam_idx, _ = hard_demod(result.X_hat, result.omega, c, cfg.nt)
    return rates_from_decisions(
        cfg, c, frame.activity, frame.map_idx, frame.sym_idx,
        result.omega, result.map_indices, qam_idx,
    )
