"""Monte-Carlo state evolution for the structured detector.

In the large-system limit the message-passing iteration decouples into
independent scalar channels r0 = x0 + sqrt((sigma_w^2 + gamma K Nt e) /
(Nr gamma)) z with per-element variance phi0 of the same form in v. The
state evolution tracks the mean-square error e and average posterior
variance v of those channels across iterations: draw signal realizations
from the prior, push them through the scalar channel and the detector's
own denoiser (including the EM activity refresh), and average. The fixed
point predicts the detector's error rates without running the matrix
iteration, which is what makes the prediction cheap at large K.

Everything is evaluated empirically; realizations are processed in
chunks so the full signal tensor never has to be materialized at once.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dsamp import (
    ACTIVITY_CLAMP,
    VAR_FLOOR,
    _activity_from_log_pmf,
    denoise_grid,
    detect_activity,
    minmax_normalize,
)
from .errors import ConfigurationError
from .metrics import rates_from_decisions
from .sysmodel import (
    SystemConfig,
    make_constellation,
    rng_for,
    snr_to_noise_variance,
)

__all__ = ["SeConfig", "SeTrace", "se_scalar_channel", "se_iterate"]

# Realizations per processing chunk are sized so one chunk's working set
# stays around a couple hundred MB even at K=500, Nt=4, J=12.
_CHUNK_BYTES = 2.0e8
_BYTES_PER_ELEMENT = 160.0


@dataclass(frozen=True)
class SeConfig:
    """State-evolution inputs on top of a system configuration.

    gamma is the per-entry variance of the measurement matrix. The noise
    variance defaults to the one implied by the system's SNR; passing
    noise_variance overrides it (useful for noiseless sanity checks).
    """

    system: SystemConfig
    gamma: float = 1.0
    n_mc: int = 500
    t_se: int = 50
    epsilon: float = 1e-5
    noise_variance: float | None = None

    def __post_init__(self):
        if self.n_mc < 1:
            raise ConfigurationError("n_mc must be at least 1")
        if self.t_se < 1:
            raise ConfigurationError("t_se must be at least 1")
        if not self.epsilon > 0:
            raise ConfigurationError("epsilon must be positive")
        if not self.gamma > 0:
            raise ConfigurationError("gamma must be positive")

    @property
    def sigma2(self) -> float:
        if self.noise_variance is not None:
            return float(self.noise_variance)
        return snr_to_noise_variance(self.system)


@dataclass(frozen=True)
class SeTrace:
    """Predicted MSE/variance per iteration plus derived error rates.

    e[i] and v[i] are the values after iteration i+1 (the prescribed
    starting point e = v = 1 is not stored).
    """

    e: np.ndarray
    v: np.ndarray
    predicted_ader: float
    predicted_ser: float | None
    predicted_ber: float | None


def se_scalar_channel(
    x0: np.ndarray,
    e: float,
    v: float,
    secfg: SeConfig,
    rng: np.random.Generator,
) -> tuple[np.ndarray, float]:
    """Equivalent scalar channel of one iteration: (r0, phi0)."""
    cfg = secfg.system
    load = secfg.gamma * cfg.k * cfg.nt
    denom = cfg.nr * secfg.gamma
    scale = (secfg.sigma2 + load * e) / denom
    phi0 = max((secfg.sigma2 + load * v) / denom, VAR_FLOOR)
    z = rng.standard_normal(x0.shape) + 1j * rng.standard_normal(x0.shape)
    return x0 + np.sqrt(scale / 2.0) * z, phi0


def _build_x0(act, map1, sym, points, nt):
    """Signal tensor (n, K*Nt, J) of one chunk of realizations."""
    n, k = act.shape
    j = map1.shape[-1]
    x0 = np.zeros((n, k * nt, j), dtype=complex)
    mm, kk = np.nonzero(act)
    if mm.size:
        rows = kk[:, None] * nt + (map1[mm, kk].astype(int) - 1)
        x0[mm[:, None], rows, np.arange(j)] = points[sym[mm, kk].astype(int)]
    return x0


def se_iterate(secfg: SeConfig, rng: np.random.Generator | None = None) -> SeTrace:
    """Run the state-evolution recursion and derive predicted rates.

    Draws n_mc signal realizations from the prior, iterates the scalar
    channel plus denoiser until |e_{t+1} - e_t| < epsilon or the budget
    runs out, then makes detector-style decisions on the converged
    channel to estimate ADER/SER/BER.
    """
    cfg = secfg.system
    if rng is None:
        rng = rng_for(cfg.seed, "se")
    c = make_constellation(cfg.m)
    points = c.points
    k, nt, j = cfg.k, cfg.nt, cfg.j
    n_mc = secfg.n_mc

    act = rng.random((n_mc, k)) < cfg.lam
    map1 = rng.integers(1, nt + 1, size=(n_mc, k, j), dtype=np.int8)
    sym = rng.integers(0, cfg.m, size=(n_mc, k, j), dtype=np.int8)
    a = np.full((n_mc, k), 0.5)

    per_chunk = max(1, min(n_mc, int(_CHUNK_BYTES / (_BYTES_PER_ELEMENT * k * nt * j))))
    slices = [slice(i, min(i + per_chunk, n_mc)) for i in range(0, n_mc, per_chunk)]

    denom = float(n_mc * k * nt * j)
    e_cur, v_cur = 1.0, 1.0
    es, vs = [], []
    for _ in range(secfg.t_se):
        sum_err = 0.0
        sum_var = 0.0
        for sl in slices:
            x0 = _build_x0(act[sl], map1[sl], sym[sl], points, nt)
            r0, phi0 = se_scalar_channel(x0, e_cur, v_cur, secfg, rng)
            x_hat, v_hat, log_pmf = denoise_grid(
                r0, np.asarray(phi0), a[sl], points, nt
            )
            sum_err += float(np.sum(np.abs(x_hat - x0) ** 2))
            sum_var += float(v_hat.sum())
            a[sl] = np.clip(
                _activity_from_log_pmf(log_pmf, nt),
                ACTIVITY_CLAMP, 1.0 - ACTIVITY_CLAMP,
            )
        e_new, v_new = sum_err / denom, sum_var / denom
        es.append(e_new)
        vs.append(v_new)
        converged = abs(e_new - e_cur) < secfg.epsilon
        e_cur, v_cur = e_new, v_new
        if converged:
            break

    # Decision pass on the converged channel: fresh scalar-channel draws,
    # then the detector's min-max / threshold / strongest-row pipeline.
    ader_sum = 0.0
    ser_vals = []
    ber_vals = []
    for sl in slices:
        x0 = _build_x0(act[sl], map1[sl], sym[sl], points, nt)
        r0, phi0 = se_scalar_channel(x0, e_cur, v_cur, secfg, rng)
        x_hat, _, log_pmf = denoise_grid(r0, np.asarray(phi0), a[sl], points, nt)
        a_fin = np.clip(
            _activity_from_log_pmf(log_pmf, nt),
            ACTIVITY_CLAMP, 1.0 - ACTIVITY_CLAMP,
        )
        blocks = np.abs(x_hat).reshape(-1, k, nt, j)
        eta_hat = blocks.argmax(axis=2)
        vals = np.take_along_axis(
            x_hat.reshape(-1, k, nt, j), eta_hat[:, :, None, :], axis=2
        )[:, :, 0, :]
        qam_hat = c.nearest(vals)
        for i in range(a_fin.shape[0]):
            omega = detect_activity(minmax_normalize(a_fin[i]))
            rates = rates_from_decisions(
                cfg, c, act[sl][i], map1[sl][i].astype(int),
                sym[sl][i].astype(int), omega,
                eta_hat[i] + 1, qam_hat[i],
            )
            ader_sum += rates.ader
            if rates.ser is not None:
                ser_vals.append(rates.ser)
                ber_vals.append(rates.ber)

    return SeTrace(
        e=np.asarray(es),
        v=np.asarray(vs),
        predicted_ader=ader_sum / n_mc,
        predicted_ser=float(np.mean(ser_vals)) if ser_vals else None,
        predicted_ber=float(np.mean(ber_vals)) if ber_vals else None,
    )
