"""Data-aided CSI refinement across Gauss-Markov fading frames.

After detection and decoding, the re-modulated symbols of the devices
whose signature came back clean form a known signal matrix X_tilde. With
J larger than the number of involved mirror rows, Y ~ H_tilde X_tilde
is overdetermined, so the mirror columns of those devices can be
re-estimated by a regularized least squares filter and written back into
the tracked channel matrix for the next frame. The non-update strategy
keeps the frame-1 channel forever and only suffers aging.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .coded import (
    CodedConfig,
    bicmm_encode,
    build_coded_frame,
    chain_parts,
    decoding_quality_judge,
    run_idsamp,
)
from .errors import NumericsError, UsageError
from .sysmodel import (
    Constellation,
    SystemConfig,
    draw_rayleigh_channel,
    evolve_channel_ar,
    make_constellation,
    rng_for,
    snr_to_noise_variance,
    transmit,
)


def nmse(estimate: np.ndarray, truth: np.ndarray) -> float:
    """Frobenius-norm error ratio (not squared)."""
    est = np.asarray(estimate)
    ref = np.asarray(truth)
    if est.shape != ref.shape:
        raise UsageError(f"shape mismatch: {est.shape} vs {ref.shape}")
    denom = np.linalg.norm(ref)
    if denom == 0:
        raise UsageError("reference matrix has zero norm")
    return float(np.linalg.norm(est - ref) / denom)


def refine_csi_mmse(Y: np.ndarray, X_tilde: np.ndarray, R_H: np.ndarray,
                    sigma2: float, na: int, nt: int) -> np.ndarray:
    """Re-estimate the (Nr, Na*Nt) channel slice from known symbols.

    Solves H_hat = Y (X~^H R_H X~ + Na Nt sigma2 I)^(-1) X~^H R_H.
    """
    y = np.asarray(Y)
    x = np.asarray(X_tilde)
    rows = na * nt
    if x.ndim != 2 or x.shape[0] != rows or x.shape[1] != y.shape[1]:
        raise UsageError(f"X_tilde must be ({rows}, {y.shape[1]}), got {x.shape}")
    if R_H.shape != (rows, rows):
        raise UsageError(f"R_H must be ({rows}, {rows}), got {R_H.shape}")
    if sigma2 < 0:
        raise UsageError("noise variance must be non-negative")
    xr = x.conj().T @ R_H  # (J, rows)
    gram = xr @ x + rows * sigma2 * np.eye(x.shape[1])
    try:
        filt = np.linalg.solve(gram, xr)
    except np.linalg.LinAlgError as exc:
        raise NumericsError(
            "refinement system is singular; a rank-deficient X_tilde needs "
            "sigma2 > 0 for regularization") from exc
    h_hat = y @ filt
    if not np.all(np.isfinite(h_hat)):
        raise NumericsError("refinement produced non-finite values; increase "
                            "sigma2 regularization")
    return h_hat


def update_channel_matrix(H_prev: np.ndarray, H_hat: np.ndarray,
                          omega_maps: np.ndarray) -> np.ndarray:
    """Copy of H_prev with the given mirror columns overwritten."""
    h = np.array(H_prev)
    cols = np.asarray(omega_maps, dtype=np.int64)
    if cols.size and (cols.min() < 0 or cols.max() >= h.shape[1]):
        raise UsageError(f"column indices out of range for {h.shape[1]} columns")
    if H_hat.shape != (h.shape[0], cols.size):
        raise UsageError(f"H_hat must be ({h.shape[0]}, {cols.size}), "
                         f"got {H_hat.shape}")
    h[:, cols] = H_hat
    return h


@dataclasses.dataclass(frozen=True)
class FrameRecord:
    """One tracking frame: CSI quality before refinement, then bookkeeping."""

    frame: int
    strategy: str
    nmse_h: float
    nmse_x: float
    detected_count: int
    refined_count: int


def _reencoded_rows(bits_rows, devs, tc, il, c, cfg):
    """(len(devs)*Nt, J) stacked symbol blocks from decoded packets."""
    nt, j = cfg.nt, cfg.j
    out = np.zeros((len(devs) * nt, j), dtype=complex)
    for n, dev in enumerate(devs):
        mk, sk = bicmm_encode(bits_rows[dev], tc, il, c, nt)
        out[n * nt + (mk - 1), np.arange(j)] = c.points[sk]
    return out


def run_multiframe_tracking(cfg: SystemConfig, ccfg: CodedConfig,
                            c: Constellation | None = None, *,
                            alpha: float = 0.99, n_frames: int,
                            update: bool = True,
                            noise_variance: float | None = None,
                            rng: np.random.Generator | None = None,
                            ) -> list[FrameRecord]:
    """Track CSI quality over successive coded frames.

    The base station knows the true channel in frame 1. Afterwards the
    channel ages by the AR factor per frame while detection keeps using
    the tracked matrix. With update=True the devices whose decoded
    signature is exact are re-modulated and their columns MMSE-refined
    for the next frame; otherwise the frame-1 matrix is used throughout.
    Both strategies consume the rng identically, so runs from the same
    seed see the same channels, frames and noise.
    """
    if c is None:
        c = make_constellation(cfg.m)
    tc, il = chain_parts(cfg, ccfg)
    if rng is None:
        rng = rng_for(cfg.seed, "track")
    sigma2 = snr_to_noise_variance(cfg) if noise_variance is None else noise_variance
    strategy = "update" if update else "non_update"

    h_true = draw_rayleigh_channel(cfg, rng).H
    h_used = h_true.copy()
    records = []
    for t in range(1, n_frames + 1):
        if t > 1:
            h_true = evolve_channel_ar(h_true, alpha, rng)
        frame = build_coded_frame(cfg, ccfg, c, rng=rng)
        y = transmit(h_true, frame.X, sigma2, rng)
        res = run_idsamp(y, h_used, cfg, ccfg, c)
        omega0 = res.omega0

        x_hat = np.zeros_like(frame.X)
        if omega0.size:
            blocks = _reencoded_rows(res.B, omega0, tc, il, c, cfg)
            for n, dev in enumerate(omega0):
                x_hat[dev * cfg.nt:(dev + 1) * cfg.nt] = \
                    blocks[n * cfg.nt:(n + 1) * cfg.nt]

        truth_norm = np.linalg.norm(frame.X)
        nmse_x = nmse(x_hat, frame.X) if truth_norm else float("nan")
        nmse_h = nmse(h_used, h_true)

        refined = 0
        if update and omega0.size:
            dist = decoding_quality_judge(res.B[omega0], ccfg.layout)
            clean = omega0[dist == 0]
            refined = int(clean.size)
            if refined:
                x_tilde = _reencoded_rows(res.B, clean, tc, il, c, cfg)
                r_h = cfg.nr * np.eye(refined * cfg.nt)
                sig2_hat = float(res.first_detection.state.sigma2_hat)
                h_hat = refine_csi_mmse(y, x_tilde, r_h, sig2_hat,
                                        refined, cfg.nt)
                cols = (clean[:, None] * cfg.nt + np.arange(cfg.nt)).ravel()
                h_used = update_channel_matrix(h_used, h_hat, cols)

        records.append(FrameRecord(frame=t, strategy=strategy, nmse_h=nmse_h,
                                   nmse_x=nmse_x, detected_count=int(omega0.size),
                                   refined_count=refined))
    return records
