"""System model for media-modulation based grant-free massive access.

A cell has K devices of which Ka are sporadically active per frame. Each
active device carries eta = log2(Nt) + log2(M) bits per slot: the first
log2(Nt) bits select one of Nt one-hot radiation patterns (an RF-mirror
activation), the rest pick an M-QAM point. Stacking the Nt-sized pattern
blocks of all devices gives the sparse transmit matrix X of shape (K*Nt, J),
observed through Y = H X + W at Nr receive antennas.

This module generates constellations, activity, frames, channels and noisy
observations, and owns the plain-text config-file format.
"""

from __future__ import annotations

import dataclasses
import hashlib
import math
import os

import numpy as np

from .errors import ConfigurationError, UsageError

_QAM_ORDERS = (4, 16, 64)


@dataclasses.dataclass(frozen=True)
class SystemConfig:
    """Scenario parameters; everything downstream derives from these."""

    k: int
    ka: int
    nt: int
    m: int
    nr: int
    j: int
    snr_db: float
    seed: int
    t0: int

    def __post_init__(self):
        if min(self.k, self.nt, self.m, self.nr, self.j, self.t0) < 1:
            raise ConfigurationError("all counts must be positive")
        if self.ka < 0 or self.ka > self.k:
            raise ConfigurationError(f"ka={self.ka} must lie in [0, k={self.k}]")
        if self.nt & (self.nt - 1):
            raise ConfigurationError(f"nt={self.nt} must be a power of two")
        if self.m not in _QAM_ORDERS:
            raise ConfigurationError(f"m={self.m} unsupported; square QAM requires m in {_QAM_ORDERS}")

    @property
    def nrf(self) -> int:
        return self.nt.bit_length() - 1

    @property
    def lam(self) -> float:
        return self.ka / self.k

    @property
    def kappa(self) -> float:
        return self.nr / self.k

    @property
    def eta(self) -> int:
        """Bits per slot: pattern bits plus QAM bits."""
        return self.nrf + self.m.bit_length() - 1

    @property
    def n_cols(self) -> int:
        """Width of the measurement matrix, K*Nt."""
        return self.k * self.nt

    def replace(self, **kw) -> "SystemConfig":
        return dataclasses.replace(self, **kw)


@dataclasses.dataclass(frozen=True)
class Constellation:
    """QAM alphabet with its bit labels.

    points: (M,) complex, unit average symbol energy.
    bit_labels: (M, log2(M)) 0/1 array; row i labels points[i].
    """

    points: np.ndarray
    bit_labels: np.ndarray

    @property
    def order(self) -> int:
        return len(self.points)

    @property
    def bits_per_symbol(self) -> int:
        return self.bit_labels.shape[1]

    def index_of_bits(self, bits: np.ndarray) -> np.ndarray:
        """Map label bits (..., log2(M)) to point indices."""
        weights = 1 << np.arange(self.bits_per_symbol - 1, -1, -1)
        as_int = np.asarray(bits) @ weights
        return self._int_to_index[as_int]

    def nearest(self, values: np.ndarray) -> np.ndarray:
        """Indices of the closest points to the given complex values."""
        v = np.asarray(values)
        d = np.abs(v[..., None] - self.points)
        return np.argmin(d, axis=-1)

    @property
    def _int_to_index(self) -> np.ndarray:
        weights = 1 << np.arange(self.bits_per_symbol - 1, -1, -1)
        ints = self.bit_labels @ weights
        inv = np.empty(self.order, dtype=np.int64)
        inv[ints] = np.arange(self.order)
        return inv


def _gray(n: int) -> int:
    return n ^ (n >> 1)


def make_constellation(m: int) -> Constellation:
    """Square Gray-labeled M-QAM with unit average energy, M in {4, 16, 64}."""
    if m not in _QAM_ORDERS:
        raise ConfigurationError(f"unsupported QAM order {m}")
    side = int(round(math.sqrt(m)))
    bits_axis = side.bit_length() - 1
    # Gray-code each axis so nearest neighbors differ in one bit.
    levels = np.arange(side) * 2.0 - (side - 1)
    scale = math.sqrt(2.0 * (side * side - 1) / 3.0)
    points = np.empty(m, dtype=complex)
    labels = np.zeros((m, 2 * bits_axis), dtype=np.uint8)
    for a in range(side):
        for b in range(side):
            idx = a * side + b
            points[idx] = (levels[a] + 1j * levels[b]) / scale
            ga, gb = _gray(a), _gray(b)
            for t in range(bits_axis):
                labels[idx, t] = (ga >> (bits_axis - 1 - t)) & 1
                labels[idx, bits_axis + t] = (gb >> (bits_axis - 1 - t)) & 1
    return Constellation(points=points, bit_labels=labels)


def bits_to_int(bits: np.ndarray) -> np.ndarray:
    """MSB-first bit rows (..., w) to integers."""
    b = np.asarray(bits)
    weights = 1 << np.arange(b.shape[-1] - 1, -1, -1)
    return b @ weights


def int_to_bits(values: np.ndarray, width: int) -> np.ndarray:
    """Integers to MSB-first bit rows (..., width)."""
    v = np.asarray(values)
    shifts = np.arange(width - 1, -1, -1)
    return ((v[..., None] >> shifts) & 1).astype(np.uint8)


@dataclasses.dataclass(frozen=True)
class MediaSymbol:
    """One device-slot transmission: pattern choice plus QAM point."""

    map_index: int
    qam_point: complex
    spatial_bits: np.ndarray
    qam_bits: np.ndarray

    def d_vector(self) -> np.ndarray:
        nt = 1 << len(self.spatial_bits)
        d = np.zeros(nt)
        d[self.map_index - 1] = 1.0
        return d


def modulate_symbol(spatial_bits: np.ndarray, qam_bits: np.ndarray,
                    c: Constellation) -> MediaSymbol:
    """Map one eta-bit group to a MediaSymbol.

    The pattern index is 1 + the natural-binary value of the spatial bits
    (MSB first); the QAM point is looked up through the constellation's
    labels.
    """
    spatial_bits = np.asarray(spatial_bits)
    qam_bits = np.asarray(qam_bits)
    if len(qam_bits) != c.bits_per_symbol:
        raise UsageError(f"expected {c.bits_per_symbol} QAM bits, got {len(qam_bits)}")
    if len(spatial_bits) < 1:
        raise UsageError("at least one spatial bit is required")
    idx = int(bits_to_int(spatial_bits))
    point = c.points[int(c.index_of_bits(qam_bits))]
    return MediaSymbol(map_index=idx + 1, qam_point=complex(point),
                       spatial_bits=spatial_bits, qam_bits=qam_bits)


@dataclasses.dataclass(frozen=True)
class MediaFrame:
    """Ground truth for one transmitted frame.

    activity: (K,) 0/1. map_idx: (K, J), 1-based pattern index, 0 when
    inactive. sym_idx: (K, J) constellation index, -1 when inactive.
    X: (K*Nt, J) stacked sparse signal. source_bits: (K, eta*J), rows of
    inactive devices are zero.
    """

    activity: np.ndarray
    map_idx: np.ndarray
    sym_idx: np.ndarray
    X: np.ndarray
    source_bits: np.ndarray
    constellation: Constellation
    nt: int

    def symbol(self, k: int, j: int):
        if not self.activity[k]:
            return None
        nrf = self.nt.bit_length() - 1
        b = self.constellation.bits_per_symbol
        eta = nrf + b
        bits = self.source_bits[k, j * eta:(j + 1) * eta]
        return MediaSymbol(map_index=int(self.map_idx[k, j]),
                           qam_point=complex(self.constellation.points[self.sym_idx[k, j]]),
                           spatial_bits=bits[:nrf], qam_bits=bits[nrf:])


def draw_activity(cfg: SystemConfig, rng: np.random.Generator) -> np.ndarray:
    """Uniformly random size-Ka support as a 0/1 vector of length K."""
    a = np.zeros(cfg.k, dtype=np.uint8)
    if cfg.ka:
        a[rng.choice(cfg.k, size=cfg.ka, replace=False)] = 1
    return a


def build_frame(cfg: SystemConfig, c: Constellation, activity: np.ndarray, *,
                rng: np.random.Generator | None = None,
                bits: np.ndarray | None = None) -> MediaFrame:
    """Assemble the (K*Nt, J) signal matrix from per-device bit streams.

    Either `bits` (a (K, eta*J) 0/1 array; inactive rows ignored) or `rng`
    (bits drawn uniformly) must be given.
    """
    activity = np.asarray(activity, dtype=np.uint8)
    eta, nrf = cfg.eta, cfg.nrf
    if bits is None:
        if rng is None:
            raise UsageError("either bits or rng must be provided")
        bits = rng.integers(0, 2, size=(cfg.k, eta * cfg.j), dtype=np.uint8)
    else:
        bits = np.asarray(bits, dtype=np.uint8)
        if bits.shape != (cfg.k, eta * cfg.j):
            raise UsageError(f"bits must have shape {(cfg.k, eta * cfg.j)}, got {bits.shape}")
    bits = bits * activity[:, None]

    grouped = bits.reshape(cfg.k, cfg.j, eta)
    map_idx = (bits_to_int(grouped[:, :, :nrf]) + 1).astype(np.int16)
    sym_idx = c.index_of_bits(grouped[:, :, nrf:]).astype(np.int16)
    map_idx[activity == 0] = 0
    sym_idx[activity == 0] = -1

    X = np.zeros((cfg.k * cfg.nt, cfg.j), dtype=complex)
    kk, jj = np.nonzero(activity[:, None] & np.ones(cfg.j, dtype=np.uint8))
    rows = kk * cfg.nt + (map_idx[kk, jj] - 1)
    X[rows, jj] = c.points[sym_idx[kk, jj]]
    return MediaFrame(activity=activity, map_idx=map_idx, sym_idx=sym_idx, X=X,
                      source_bits=bits, constellation=c, nt=cfg.nt)


@dataclasses.dataclass(frozen=True)
class ChannelMatrix:
    H: np.ndarray
    entry_variance: float = 1.0


def draw_rayleigh_channel(cfg: SystemConfig, rng: np.random.Generator) -> ChannelMatrix:
    """i.i.d. circularly-symmetric complex Gaussian entries, unit variance."""
    shape = (cfg.nr, cfg.n_cols)
    h = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2.0)
    return ChannelMatrix(H=h, entry_variance=1.0)


@dataclasses.dataclass(frozen=True)
class ArChannelConfig:
    """First-order autoregressive channel-aging parameters.

    The per-frame update is H <- sqrt(alpha)*H + sqrt(1-alpha)*V, so the
    correlation after n frames is alpha^(n/2); alpha is chosen so that the
    correlation at the coherence lag tau equals 0.5.
    """

    alpha: float
    tau: int = 1
    carrier_hz: float | None = None
    bandwidth_hz: float | None = None
    velocity_mps: float | None = None

    def __post_init__(self):
        if not (0.0 < self.alpha <= 1.0):
            raise ConfigurationError(f"alpha={self.alpha} must be in (0, 1]")
        if self.tau < 1:
            raise ConfigurationError("tau must be >= 1")

    @classmethod
    def from_physics(cls, carrier_hz: float, bandwidth_hz: float,
                     velocity_mps: float) -> "ArChannelConfig":
        doppler = velocity_mps * carrier_hz / 299_792_458.0
        coherence_time = 0.423 / doppler
        symbol_time = 1.0 / bandwidth_hz
        tau = int(coherence_time / symbol_time)
        alpha = 0.25 ** (1.0 / tau)
        return cls(alpha=alpha, tau=tau, carrier_hz=carrier_hz,
                   bandwidth_hz=bandwidth_hz, velocity_mps=velocity_mps)


def evolve_channel_ar(h: np.ndarray, alpha, rng: np.random.Generator) -> np.ndarray:
    """One aging step; preserves unit per-entry variance."""
    if isinstance(alpha, ArChannelConfig):
        alpha = alpha.alpha
    if not (0.0 < alpha <= 1.0):
        raise ConfigurationError(f"alpha={alpha} must be in (0, 1]")
    if alpha == 1.0:
        return h.copy()
    v = (rng.standard_normal(h.shape) + 1j * rng.standard_normal(h.shape)) / math.sqrt(2.0)
    return math.sqrt(alpha) * h + math.sqrt(1.0 - alpha) * v


def transmit(h: np.ndarray, x: np.ndarray, noise_variance: float,
             rng: np.random.Generator) -> np.ndarray:
    """Y = H X + W with i.i.d. complex Gaussian noise of the given variance."""
    if h.shape[1] != x.shape[0]:
        raise UsageError(f"H has {h.shape[1]} columns but X has {x.shape[0]} rows")
    y = h @ x
    if noise_variance > 0:
        w = (rng.standard_normal(y.shape) + 1j * rng.standard_normal(y.shape))
        y = y + math.sqrt(noise_variance / 2.0) * w
    return y


def snr_to_noise_variance(cfg: SystemConfig) -> float:
    """Noise variance for the declared convention snr = Ka / sigma_w^2.

    With unit-energy symbols, one-hot patterns and unit-variance channel
    entries, the average received signal power per antenna is Ka, so
    sigma_w^2 = Ka / 10^(snr_db/10).
    """
    if cfg.ka < 1:
        raise ConfigurationError("snr convention requires ka >= 1")
    return cfg.ka / 10.0 ** (cfg.snr_db / 10.0)


# --- seeded substreams ---

def _key_to_int(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFF
    digest = hashlib.sha256(repr(part).encode()).digest()
    return int.from_bytes(digest[:4], "little")


def rng_for(base_seed: int, *parts) -> np.random.Generator:
    """Independent, reproducible substream keyed by (base_seed, *parts).

    Parts may be ints, floats or strings; each maps to a stable 32-bit key so
    adding algorithms or axis values never perturbs other streams.
    """
    keys = [_key_to_int(p) for p in parts]
    return np.random.default_rng(np.random.SeedSequence(entropy=int(base_seed), spawn_key=keys))


# --- plain-text config files ---

_CONFIG_KEYS = {
    "k": int, "ka": int, "nt": int, "m": int, "nr": int, "j": int,
    "snr_db": float, "seed": int, "t0": int, "alpha": float, "frames": int,
    "axis": str, "values": str, "algorithms": str,
    "n_frames": int, "strategy": str,
    "fec.iters": int, "fec.scale": float,
    "coded.enabled": bool, "coded.interleave": bool, "coded.sic": bool,
    "coded.judge": bool, "coded.ls": int, "coded.ld": int, "coded.n_bar": int,
    "se.n_mc": int, "se.t_se": int, "se.epsilon": float, "se.gamma": float,
}

_TRUE_WORDS = {"true", "yes", "on", "1"}
_FALSE_WORDS = {"false", "no", "off", "0"}


def read_config_file(path: str | os.PathLike) -> dict:
    """Parse `key = value` lines; `#` starts a comment. Keys are fixed."""
    out: dict = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigurationError(f"{path}:{lineno}: expected 'key = value'")
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if key not in _CONFIG_KEYS:
                raise ConfigurationError(f"{path}:{lineno}: unknown key '{key}'")
            kind = _CONFIG_KEYS[key]
            try:
                if kind is bool:
                    low = value.lower()
                    if low in _TRUE_WORDS:
                        out[key] = True
                    elif low in _FALSE_WORDS:
                        out[key] = False
                    else:
                        raise ValueError(value)
                else:
                    out[key] = kind(value)
            except ValueError:
                raise ConfigurationError(
                    f"{path}:{lineno}: cannot parse '{value}' as {kind.__name__}") from None
    return out


_SYSTEM_DEFAULTS = dict(k=500, ka=50, nt=4, m=4, nr=256, j=12,
                        snr_db=5.0, seed=0, t0=15)


def system_config_from_mapping(d: dict) -> SystemConfig:
    """SystemConfig from a config-file mapping, with the stock defaults."""
    kw = dict(_SYSTEM_DEFAULTS)
    for key in kw:
        if key in d:
            kw[key] = d[key]
    return SystemConfig(**kw)
