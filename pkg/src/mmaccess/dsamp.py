"""Doubly-structured AMP detector for media-modulated random access.

The receiver sees Y = H X + W where X stacks K device blocks of Nt rows
each and J symbol slots. Two priors shape the estimate: within one block
and slot at most one row is nonzero (mirror selection), and a block is
either silent for the whole frame or active in every slot (frame-level
sparsity). The detector alternates AMP decoupling, which turns the matrix
problem into scalar observations r = x + CN(0, phi), with a posterior
denoiser built on that structured prior. Device activity a_k and the
noise level are learned on the fly by expectation maximization, so the
detector needs neither the true activity ratio nor the true SNR.

Activity decisions use min-max normalized activity estimates against a
fixed 0.5 threshold; data decisions take the strongest row per block and
slot. `run_dsamp` bundles the whole chain, `run_dsamp_core` exposes the
iteration loop for reuse by the coded receiver and the baselines.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import NumericsError, UsageError
from .sysmodel import Constellation, SystemConfig

VAR_FLOOR = 1e-12
ACTIVITY_CLAMP = 1e-12
LOG_PMF_FLOOR = -700.0

__all__ = [
    "AmpState",
    "DenoiserOutput",
    "IterationStats",
    "DetectionResult",
    "init_state",
    "decouple_step",
    "denoise_element",
    "denoise_grid",
    "activity_update_from_pmf",
    "em_update_activity",
    "em_update_noise",
    "minmax_normalize",
    "detect_activity",
    "extract_and_reconstruct",
    "finalize_detection",
    "run_dsamp_core",
    "run_dsamp",
    "hard_demod",
]


@dataclass
class AmpState:
    """Mutable iteration state of the message-passing loop.

    Arrays follow the system shapes: Z and V are (Nr, J), the decoupled
    observations r and their variances phi are (K*Nt, J), and log_pmf
    holds the normalized per-element posterior over the M+1 atoms (zero
    atom first) from the most recent denoising step.
    """

    Z: np.ndarray
    V: np.ndarray
    r: np.ndarray | None
    phi: np.ndarray | None
    x_hat: np.ndarray
    v_hat: np.ndarray
    a_hat: np.ndarray
    sigma2_hat: float
    iteration: int
    log_pmf: np.ndarray | None


@dataclass(frozen=True)
class DenoiserOutput:
    mean: complex
    variance: float
    pmf: np.ndarray


@dataclass(frozen=True)
class IterationStats:
    iteration: int
    sigma2_hat: float
    mean_v_hat: float
    a_hat: np.ndarray


@dataclass(frozen=True)
class DetectionResult:
    """Detector output for one frame.

    omega lists detected device indices, a_hat the raw EM activity
    estimates, a_tilde their min-max normalization. X_hat keeps one
    nonzero row per detected block and slot; map_indices holds the
    1-based strongest-row index for every device regardless of omega.
    """

    omega: np.ndarray
    a_hat: np.ndarray
    a_tilde: np.ndarray
    X_hat: np.ndarray
    map_indices: np.ndarray
    trace: list[IterationStats] = field(repr=False)
    state: AmpState = field(repr=False)


def init_state(cfg: SystemConfig, Y: np.ndarray, c: Constellation) -> AmpState:
    """First-iteration state: flat activity guess and prior moments."""
    n = cfg.n_cols
    a0 = np.full(cfg.k, 0.5)
    # Prior mean/variance of one element under a=0.5: the zero atom and a
    # uniform constellation choice.
    mean0 = 0.5 * c.points.mean() / cfg.nt
    var0 = 0.5 * np.mean(np.abs(c.points) ** 2) / cfg.nt - abs(mean0) ** 2
    x0 = np.full((n, cfg.j), mean0, dtype=complex)
    v0 = np.full((n, cfg.j), var0)
    return AmpState(
        Z=Y.astype(complex, copy=True),
        V=np.ones(Y.shape, dtype=float),
        r=None,
        phi=None,
        x_hat=x0,
        v_hat=v0,
        a_hat=a0,
        sigma2_hat=100.0,
        iteration=0,
        log_pmf=None,
    )


def decouple_step(
    state: AmpState,
    Y: np.ndarray,
    H: np.ndarray,
    sigma2: float,
    A: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """One AMP decoupling pass: (V, Z, phi, r) from the current moments.

    A, if given, must be |H|^2 precomputed by the caller; worth it when
    the same channel is reused across iterations.
    """
    if A is None:
        A = np.abs(H) ** 2
    V = A @ state.v_hat
    Z = H @ state.x_hat - V * ((Y - state.Z) / (sigma2 + state.V))
    inv = 1.0 / (sigma2 + V)
    phi = 1.0 / (A.T @ inv)
    np.maximum(phi, VAR_FLOOR, out=phi)
    r = state.x_hat + phi * (H.conj().T @ ((Y - Z) * inv))
    return V, Z, phi, r


def denoise_grid(
    r: np.ndarray,
    phi: np.ndarray,
    a: np.ndarray,
    points: np.ndarray,
    nt: int,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Posterior mean, variance and log-pmf of every element.

    r and phi carry shape (..., K*Nt, J); a carries (..., K). Extra
    leading dimensions pass through untouched, which lets the state
    evolution code denoise many realizations in one call. The returned
    log_pmf has one trailing axis of length M+1 with the zero atom at
    index 0.
    """
    m = len(points)
    a_el = np.repeat(a, nt, axis=-1)
    with np.errstate(divide="ignore"):
        log_p0 = np.log1p(-a_el / nt)
        log_ps = np.log(a_el / (nt * m))
    lw0 = log_p0[..., :, None] - np.abs(r) ** 2 / phi
    diff = r[..., None] - points
    lws = log_ps[..., :, None, None] - np.abs(diff) ** 2 / phi[..., None]
    lw = np.concatenate((lw0[..., None], lws), axis=-1)
    lw -= lw.max(axis=-1, keepdims=True)
    w = np.exp(lw)
    tot = w.sum(axis=-1, keepdims=True)
    pmf = w / tot
    log_pmf = np.maximum(lw - np.log(tot), LOG_PMF_FLOOR)
    x_hat = pmf[..., 1:] @ points
    e2 = pmf[..., 1:] @ (np.abs(points) ** 2)
    v_hat = np.maximum(e2 - np.abs(x_hat) ** 2, 0.0)
    return x_hat, v_hat, log_pmf


def denoise_element(
    r: complex,
    phi: float,
    a_k: float,
    c: Constellation,
    nt: int,
) -> DenoiserOutput:
    """Scalar denoiser for a single decoupled observation."""
    if not phi > 0:
        raise NumericsError(f"denoiser variance must be positive, got {phi}")
    rr = np.array([[r]], dtype=complex)
    pp = np.array([[float(phi)]])
    aa = np.array([float(a_k)])
    x, v, log_pmf = denoise_grid(rr, pp, aa, c.points, nt)
    return DenoiserOutput(mean=complex(x[0, 0]), variance=float(v[0, 0]),
                          pmf=np.exp(log_pmf[0, 0]))


def _logsumexp(x: np.ndarray, axis: int) -> np.ndarray:
    mx = x.max(axis=axis, keepdims=True)
    safe = np.where(np.isfinite(mx), mx, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(x - safe), axis=axis))
    return out + np.squeeze(safe, axis=axis)


def _activity_from_log_pmf(log_pmf: np.ndarray, nt: int) -> np.ndarray:
    """EM activity update from per-element log posteriors.

    The per-slot active probability sums the one-row-on configurations:
    W_j = sum_i [q_i(active) * prod_{g != i} q_g(0)], evaluated in the
    log domain so near-certain posteriors do not underflow. W_j <= 1
    because those configurations form part of a probability space.
    """
    shp = log_pmf.shape
    lead = shp[:-3]
    n, j, mp1 = shp[-3:]
    k = n // nt
    lp = log_pmf.reshape(lead + (k, nt, j, mp1))
    lz = lp[..., 0]
    ls = _logsumexp(lp[..., 1:], axis=-1)
    w_log = lz.sum(axis=-2) + _logsumexp(ls - lz, axis=-2)
    w = np.exp(np.minimum(w_log, 0.0))
    return w.mean(axis=-1)


def activity_update_from_pmf(pmf: np.ndarray, nt: int) -> float:
    """Activity estimate from one device block of posteriors (Nt, J, M+1)."""
    with np.errstate(divide="ignore"):
        lp = np.log(pmf)
    # Exact zeros would break the log-domain factorization.
    np.maximum(lp, LOG_PMF_FLOOR, out=lp)
    return float(_activity_from_log_pmf(lp, nt)[0])


def em_update_activity(state: AmpState, k: int, cfg: SystemConfig) -> float:
    """EM activity refresh for device k from the state's last posteriors."""
    if state.log_pmf is None:
        raise UsageError("state carries no posterior pmf yet")
    lp = state.log_pmf.reshape(cfg.k, cfg.nt, cfg.j, -1)[k]
    a = float(_activity_from_log_pmf(lp, cfg.nt)[0])
    return float(np.clip(a, ACTIVITY_CLAMP, 1.0 - ACTIVITY_CLAMP))


def em_update_noise(
    Y: np.ndarray,
    Z: np.ndarray,
    V: np.ndarray,
    sigma2: float,
) -> float:
    """EM noise-variance refresh from the current output-channel moments."""
    shrink = np.abs(Y - Z) ** 2 / (1.0 + V / sigma2) ** 2
    post = sigma2 * V / (V + sigma2)
    return float(np.mean(shrink + post))


def minmax_normalize(a: np.ndarray) -> np.ndarray:
    """Spread activity estimates to [0, 1]; a constant vector maps to zeros."""
    a = np.asarray(a, dtype=float)
    span = np.ptp(a)
    if span == 0:
        return np.zeros_like(a)
    return (a - a.min()) / span


def detect_activity(a_tilde: np.ndarray) -> np.ndarray:
    """Indices whose normalized activity clears the 0.5 threshold."""
    return np.flatnonzero(np.asarray(a_tilde) > 0.5)


def extract_and_reconstruct(
    x_hat: np.ndarray,
    omega: np.ndarray,
    nt: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Strongest row per block and slot, then a cleaned estimate.

    Returns 1-based row choices (K, J) for every device plus X_hat with
    all but the chosen row zeroed inside detected blocks and entire
    blocks zeroed elsewhere. Magnitude ties resolve to the lowest row.
    """
    n, j = x_hat.shape
    k = n // nt
    blocks = np.abs(x_hat).reshape(k, nt, j)
    eta = blocks.argmax(axis=1)  # argmax takes the first maximum
    out = np.zeros_like(x_hat)
    omega = np.asarray(omega, dtype=int)
    if omega.size:
        cols = np.arange(j)
        rows = omega[:, None] * nt + eta[omega]
        out[rows, cols] = x_hat[rows, cols]
    return eta + 1, out


def run_dsamp_core(
    Y: np.ndarray,
    H: np.ndarray,
    cfg: SystemConfig,
    c: Constellation,
    *,
    t0: int | None = None,
    a_init: np.ndarray | None = None,
    em_activity: bool = True,
    em_noise: bool = True,
    sigma2_init: float = 100.0,
) -> tuple[AmpState, list[IterationStats]]:
    """Run the AMP iteration loop and return the final state plus trace.

    The flags freeze either EM update: baselines use em_activity=False
    with a fixed a_init and em_noise=False with sigma2_init set to the
    true value. The iteration count defaults to cfg.t0.
    """
    if Y.shape != (H.shape[0], cfg.j):
        raise UsageError(f"Y shape {Y.shape} does not match H rows and J={cfg.j}")
    if H.shape[1] != cfg.n_cols:
        raise UsageError(f"H has {H.shape[1]} columns, expected {cfg.n_cols}")
    iters = cfg.t0 if t0 is None else t0
    A = np.abs(H) ** 2
    state = init_state(cfg, Y, c)
    state.sigma2_hat = float(sigma2_init)
    if a_init is not None:
        state.a_hat = np.array(a_init, dtype=float).copy()
        # Prior moments consistent with the supplied activity guess.
        a_el = np.repeat(state.a_hat, cfg.nt)[:, None]
        mean0 = a_el * c.points.mean() / cfg.nt
        state.x_hat = np.broadcast_to(mean0, (cfg.n_cols, cfg.j)).astype(complex)
        state.v_hat = np.broadcast_to(
            a_el * np.mean(np.abs(c.points) ** 2) / cfg.nt - np.abs(mean0) ** 2,
            (cfg.n_cols, cfg.j),
        ).copy()
    trace: list[IterationStats] = []
    for t in range(1, iters + 1):
        V, Z, phi, r = decouple_step(state, Y, H, state.sigma2_hat, A=A)
        x_new, v_new, log_pmf = denoise_grid(r, phi, state.a_hat, c.points, cfg.nt)
        if not np.all(np.isfinite(x_new)):
            raise NumericsError(f"non-finite estimate at iteration {t}")
        if em_noise:
            state.sigma2_hat = max(
                em_update_noise(Y, Z, V, state.sigma2_hat), VAR_FLOOR
            )
        if em_activity:
            a_new = _activity_from_log_pmf(log_pmf, cfg.nt)
            state.a_hat = np.clip(a_new, ACTIVITY_CLAMP, 1.0 - ACTIVITY_CLAMP)
        state.Z, state.V = Z, V
        state.r, state.phi = r, phi
        state.x_hat, state.v_hat = x_new, v_new
        state.log_pmf = log_pmf
        state.iteration = t
        trace.append(
            IterationStats(
                iteration=t,
                sigma2_hat=state.sigma2_hat,
                mean_v_hat=float(v_new.mean()),
                a_hat=state.a_hat.copy(),
            )
        )
    return state, trace


def finalize_detection(
    state: AmpState,
    cfg: SystemConfig,
    *,
    minmax: bool = True,
) -> DetectionResult:
    """Threshold activity estimates and clean up the signal estimate."""
    a_hat = state.a_hat.copy()
    a_tilde = minmax_normalize(a_hat) if minmax else a_hat.copy()
    omega = detect_activity(a_tilde)
    map_indices, x_clean = extract_and_reconstruct(state.x_hat, omega, cfg.nt)
    return DetectionResult(
        omega=omega,
        a_hat=a_hat,
        a_tilde=a_tilde,
        X_hat=x_clean,
        map_indices=map_indices,
        trace=[],
        state=state,
    )


def run_dsamp(
    Y: np.ndarray,
    H: np.ndarray,
    cfg: SystemConfig,
    c: Constellation,
    **core_kwargs,
) -> DetectionResult:
    """Full detector: AMP loop with EM learning, then activity decisions."""
    state, trace = run_dsamp_core(Y, H, cfg, c, **core_kwargs)
    res = finalize_detection(state, cfg)
    return DetectionResult(
        omega=res.omega,
        a_hat=res.a_hat,
        a_tilde=res.a_tilde,
        X_hat=res.X_hat,
        map_indices=res.map_indices,
        trace=trace,
        state=state,
    )


def hard_demod(
    X_hat: np.ndarray,
    omega: Sequence[int] | np.ndarray,
    c: Constellation,
    nt: int,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Hard symbol decisions from a cleaned signal estimate.

    Returns (eta_star, media_bits, qam_idx, qam_bits): the 0-based chosen
    row per block and slot, its binary mirror label, the nearest
    constellation index of the surviving value and its bit label. All
    arrays cover every device; entries outside omega are meaningful only
    as placeholders.
    """
    n, j = X_hat.shape
    k = n // nt
    blocks = X_hat.reshape(k, nt, j)
    eta = np.abs(blocks).argmax(axis=1)
    vals = np.take_along_axis(blocks, eta[:, None, :], axis=1)[:, 0, :]
    qam_idx = c.nearest(vals)
    nrf = max(int(nt).bit_length() - 1, 0)
    # Natural binary label of the chosen row, MSB first.
    shifts = np.arange(nrf - 1, -1, -1)
    media_bits = ((eta[..., None] >> shifts) & 1).astype(np.uint8)
    qam_bits = c.bit_labels[qam_idx]
    return eta, media_bits, qam_idx, qam_bits
