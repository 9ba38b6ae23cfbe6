"""Rate-1/3 turbo codec and the bit-level block interleaver.

The codec is a parallel concatenation of two 8-state recursive
systematic convolutional encoders (feedback 1 + D^2 + D^3, feedforward
1 + D + D^3) joined by a quadratic permutation polynomial interleaver,
the standardized construction for the supported block lengths. Both
trellises are terminated, contributing 12 tail bits, so the codeword
length is 3L + 12. Decoding is iterative max-log-MAP with a fixed
extrinsic scale factor; all decoder arithmetic is batched over
codewords.

LLR convention throughout: LLR = log(P(bit=0) / P(bit=1)), so a positive
value argues for bit 0. Inputs are saturated to +-LLR_MAX (non-finite
values included; NaN maps to 0) to keep the trellis sums bounded.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, UsageError

LLR_MAX = 30.0
_NEG = -1e30

# f1, f2 of the permutation pi(i) = (f1 i + f2 i^2) mod L.
QPP_TABLE = {40: (3, 10), 120: (103, 90), 280: (103, 210)}

__all__ = [
    "LLR_MAX",
    "QPP_TABLE",
    "qpp_permutation",
    "TurboConfig",
    "turbo_encode",
    "turbo_encode_batch",
    "turbo_decode",
    "turbo_decode_batch",
    "BlockInterleaver",
]


def qpp_permutation(length: int) -> np.ndarray:
    """Internal interleaver for a supported block length."""
    if length not in QPP_TABLE:
        raise ConfigurationError(
            f"no interleaver parameters for block length {length}"
        )
    f1, f2 = QPP_TABLE[length]
    i = np.arange(length, dtype=np.int64)
    return (f1 * i + f2 * i * i) % length


# Constituent trellis: state s = (a, b, c) packs the three registers
# newest-first; w is the feedback bit entering the register chain.
def _build_tables():
    ns = np.zeros((8, 2), dtype=np.int64)
    par = np.zeros((8, 2), dtype=np.int64)
    tail_in = np.zeros(8, dtype=np.int64)
    for s in range(8):
        a, b, c = (s >> 2) & 1, (s >> 1) & 1, s & 1
        tail_in[s] = b ^ c
        for u in (0, 1):
            w = u ^ b ^ c
            ns[s, u] = (w << 2) | (a << 1) | b
            par[s, u] = w ^ a ^ c
    # Reverse lookup: the two (state, input) pairs leading into each state.
    ps = np.zeros((8, 2), dtype=np.int64)
    pu = np.zeros((8, 2), dtype=np.int64)
    fill = np.zeros(8, dtype=np.int64)
    for s in range(8):
        for u in (0, 1):
            t = ns[s, u]
            ps[t, fill[t]] = s
            pu[t, fill[t]] = u
            fill[t] += 1
    return ns, par, tail_in, ps, pu


_NS, _PAR, _TAIL_IN, _PS, _PU = _build_tables()
_PFP = _PAR[_PS, _PU]  # parity of each incoming branch, by next state
# Tail-step validity: only the flushing input is a real branch.
_VALID_B = _TAIL_IN[:, None] == np.arange(2)
_VALID_F = _TAIL_IN[_PS] == _PU


@dataclass(frozen=True)
class TurboConfig:
    """Codec parameters; the interleaver is fixed by the block length."""

    info_len: int
    iters: int = 8
    scale: float = 0.75
    interleaver: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.iters < 1:
            raise ConfigurationError("decoder needs at least one iteration")
        object.__setattr__(self, "interleaver", qpp_permutation(self.info_len))

    @property
    def coded_len(self) -> int:
        return 3 * self.info_len + 12


def _rsc_encode(u: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One constituent encoder over a batch: (parity, tail_sys, tail_par)."""
    n, length = u.shape
    a = np.zeros(n, dtype=np.uint8)
    b = np.zeros(n, dtype=np.uint8)
    c = np.zeros(n, dtype=np.uint8)
    par = np.empty((n, length), dtype=np.uint8)
    for t in range(length):
        w = u[:, t] ^ b ^ c
        par[:, t] = w ^ a ^ c
        a, b, c = w, a, b
    tail_sys = np.empty((n, 3), dtype=np.uint8)
    tail_par = np.empty((n, 3), dtype=np.uint8)
    for t in range(3):
        ut = b ^ c  # flushing input, drives w to zero
        tail_sys[:, t] = ut
        tail_par[:, t] = a ^ c
        a, b, c = np.zeros_like(a), a, b
    return par, tail_sys, tail_par


def turbo_encode_batch(bits: np.ndarray, tc: TurboConfig) -> np.ndarray:
    """Encode a batch (B, L) of payloads to (B, 3L+12) codewords.

    Layout: systematic | parity1 | parity2 | tail1 sys | tail1 par |
    tail2 sys | tail2 par.
    """
    u = np.asarray(bits, dtype=np.uint8)
    if u.ndim != 2 or u.shape[1] != tc.info_len:
        raise UsageError(f"expected (*, {tc.info_len}) bits, got {u.shape}")
    par1, t1s, t1p = _rsc_encode(u)
    par2, t2s, t2p = _rsc_encode(u[:, tc.interleaver])
    return np.concatenate([u, par1, par2, t1s, t1p, t2s, t2p], axis=1)


def turbo_encode(bits: np.ndarray, tc: TurboConfig) -> np.ndarray:
    """Encode one payload of length L to a 3L+12 codeword."""
    b = np.asarray(bits, dtype=np.uint8)
    if b.ndim != 1:
        raise UsageError("turbo_encode takes a 1-D bit vector")
    return turbo_encode_batch(b[None], tc)[0]


def _maxlog_bcjr(ls, lp, la, tail_ls, tail_lp):
    """Posterior info-bit LLRs of one terminated constituent code.

    All inputs are (B, L) / (B, 3) and carry log(P0/P1) per position.
    Branch cost is -u*(Ls+La) - p*Lp, so higher is more likely; tail
    steps keep only their forced-input branch.
    """
    n, length = ls.shape
    steps = length + 3
    m_u = np.concatenate([-(ls + la), -tail_ls], axis=1)
    m_p = np.concatenate([-lp, -tail_lp], axis=1)
    g_fwd = m_u[:, :, None, None] * _PU + m_p[:, :, None, None] * _PFP
    g_bwd = m_u[:, :, None, None] * np.arange(2) + m_p[:, :, None, None] * _PAR
    g_fwd[:, length:][:, :, ~_VALID_F] = _NEG
    g_bwd[:, length:][:, :, ~_VALID_B] = _NEG

    alphas = np.full((steps + 1, n, 8), _NEG)
    alphas[0, :, 0] = 0.0
    for t in range(steps):
        alphas[t + 1] = (alphas[t][:, _PS] + g_fwd[:, t]).max(axis=-1)
    betas = np.full((steps + 1, n, 8), _NEG)
    betas[steps, :, 0] = 0.0
    for t in range(steps - 1, -1, -1):
        betas[t] = (betas[t + 1][:, _NS] + g_bwd[:, t]).max(axis=-1)

    fwd = np.transpose(alphas[:length], (1, 0, 2))
    bwd = np.transpose(betas[1:length + 1], (1, 0, 2))[:, :, _NS]
    metric = fwd[..., None] + g_bwd[:, :length] + bwd
    best = metric.max(axis=2)
    return best[..., 0] - best[..., 1]


def turbo_decode_batch(
    llrs: np.ndarray,
    tc: TurboConfig,
) -> tuple[np.ndarray, np.ndarray]:
    """Iteratively decode (B, 3L+12) channel LLRs.

    Returns hard info bits (B, L) and their posterior LLRs from the last
    half-iteration.
    """
    lin = np.asarray(llrs, dtype=float)
    if lin.ndim != 2 or lin.shape[1] != tc.coded_len:
        raise UsageError(f"expected (*, {tc.coded_len}) LLRs, got {lin.shape}")
    lin = np.clip(np.nan_to_num(lin, nan=0.0, posinf=LLR_MAX, neginf=-LLR_MAX),
                  -LLR_MAX, LLR_MAX)
    length = tc.info_len
    sys = lin[:, :length]
    par1 = lin[:, length:2 * length]
    par2 = lin[:, 2 * length:3 * length]
    t1s = lin[:, 3 * length:3 * length + 3]
    t1p = lin[:, 3 * length + 3:3 * length + 6]
    t2s = lin[:, 3 * length + 6:3 * length + 9]
    t2p = lin[:, 3 * length + 9:]
    perm = tc.interleaver
    sys_perm = sys[:, perm]

    la1 = np.zeros_like(sys)
    post2 = np.zeros_like(sys)
    for _ in range(tc.iters):
        post1 = _maxlog_bcjr(sys, par1, la1, t1s, t1p)
        ext1 = np.clip((post1 - sys - la1) * tc.scale, -LLR_MAX, LLR_MAX)
        la2 = ext1[:, perm]
        post2 = _maxlog_bcjr(sys_perm, par2, la2, t2s, t2p)
        ext2 = np.clip((post2 - sys_perm - la2) * tc.scale, -LLR_MAX, LLR_MAX)
        la1 = np.empty_like(ext2)
        la1[:, perm] = ext2
    post = np.empty_like(post2)
    post[:, perm] = post2
    return (post < 0).astype(np.uint8), post


def turbo_decode(llrs: np.ndarray, tc: TurboConfig) -> tuple[np.ndarray, np.ndarray]:
    """Decode one codeword's LLRs to (bits, posterior LLRs)."""
    l1 = np.asarray(llrs, dtype=float)
    if l1.ndim != 1:
        raise UsageError("turbo_decode takes a 1-D LLR vector")
    bits, post = turbo_decode_batch(l1[None], tc)
    return bits[0], post[0]


@dataclass(frozen=True)
class BlockInterleaver:
    """Row-write/column-read block interleaver over cols*rows positions."""

    cols: int
    rows: int

    def __post_init__(self):
        if self.cols < 1 or self.rows < 1:
            raise ConfigurationError("interleaver dimensions must be positive")

    @property
    def size(self) -> int:
        return self.cols * self.rows

    def _check(self, x: np.ndarray) -> np.ndarray:
        arr = np.asarray(x)
        if arr.shape != (self.size,):
            raise UsageError(f"expected length {self.size}, got {arr.shape}")
        return arr

    def interleave(self, x: np.ndarray) -> np.ndarray:
        arr = self._check(x)
        return arr.reshape(self.rows, self.cols).T.ravel()

    def deinterleave(self, x: np.ndarray) -> np.ndarray:
        arr = self._check(x)
        return arr.reshape(self.cols, self.rows).T.ravel()
