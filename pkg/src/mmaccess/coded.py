"""Coded access: packetized transmission with iterative interference removal.

A device's frame is one turbo codeword. The L-bit packet (a short known
signature followed by the payload) is rate-1/3 encoded, block-interleaved
and mapped eta bits at a time onto pattern/QAM symbols, so one codeword
spans the whole frame of J = L'/eta slots. The receiver alternates
detection and decoding: soft pattern/QAM posteriors become per-bit LLRs,
the judged-clean codewords are re-encoded and subtracted from Y, their
mirror columns are pruned from the measurement matrix, and detection runs
again on the thinned problem.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .dsamp import DetectionResult, _logsumexp, run_dsamp
from .errors import ConfigurationError, NumericsError, UsageError
from .fec import (
    LLR_MAX,
    BlockInterleaver,
    TurboConfig,
    turbo_decode_batch,
    turbo_encode,
)
from .sysmodel import (
    Constellation,
    SystemConfig,
    bits_to_int,
    draw_activity,
    make_constellation,
)

# Seed for the shared signature pattern; every endpoint derives the same
# bits from it, so it never travels over the air.
_SIGNATURE_SEED = 20


@dataclasses.dataclass(frozen=True)
class PacketLayout:
    """Packet structure: ls signature bits, then ld payload bits."""

    ls: int = 20
    ld: int = 100
    signature: np.ndarray | None = None

    def __post_init__(self):
        if self.ls < 0 or self.ld < 1:
            raise ConfigurationError("packet sections must have ls >= 0, ld >= 1")
        if self.signature is None:
            sig = np.random.default_rng(_SIGNATURE_SEED).integers(
                0, 2, size=self.ls, dtype=np.uint8)
            object.__setattr__(self, "signature", sig)
        else:
            sig = np.asarray(self.signature, dtype=np.uint8)
            if sig.shape != (self.ls,):
                raise ConfigurationError(f"signature must have shape ({self.ls},)")
            object.__setattr__(self, "signature", sig)

    @property
    def l(self) -> int:
        return self.ls + self.ld


@dataclasses.dataclass(frozen=True)
class CodedConfig:
    """Knobs of the coded pipeline and its benchmark variants.

    interleave=False swaps in an identity interleaver; sic=False decodes
    every detected device once and never cancels; judge=False cancels all
    decoded devices without checking their signatures. n_bar bounds how
    many devices are decoded per round.
    """

    layout: PacketLayout = dataclasses.field(default_factory=PacketLayout)
    iters: int = 8
    scale: float = 0.75
    interleave: bool = True
    sic: bool = True
    judge: bool = True
    n_bar: int = 5

    def __post_init__(self):
        if self.n_bar < 1:
            raise ConfigurationError("n_bar must be at least 1")

    def turbo(self) -> TurboConfig:
        return TurboConfig(info_len=self.layout.l, iters=self.iters,
                           scale=self.scale)


def chain_parts(cfg: SystemConfig, ccfg: CodedConfig
                ) -> tuple[TurboConfig, BlockInterleaver | None]:
    """Codec and interleaver for the scenario, checking J = L'/eta."""
    tc = ccfg.turbo()
    if tc.coded_len % cfg.eta:
        raise ConfigurationError(
            f"coded length {tc.coded_len} is not a multiple of eta={cfg.eta}")
    j = tc.coded_len // cfg.eta
    if j != cfg.j:
        raise ConfigurationError(
            f"frame needs j={j} slots for {tc.coded_len} coded bits, config has j={cfg.j}")
    il = BlockInterleaver(cols=cfg.eta, rows=j) if ccfg.interleave else None
    return tc, il


def build_packet(payload: np.ndarray, layout: PacketLayout) -> np.ndarray:
    """Prepend the known signature to an ld-bit payload."""
    p = np.asarray(payload, dtype=np.uint8)
    if p.shape != (layout.ld,):
        raise UsageError(f"payload must have shape ({layout.ld},), got {p.shape}")
    return np.concatenate([layout.signature, p])


def bicmm_encode(packet: np.ndarray, tc: TurboConfig,
                 il: BlockInterleaver | None, c: Constellation,
                 nt: int) -> tuple[np.ndarray, np.ndarray]:
    """Packet bits to per-slot (pattern index, QAM index) streams.

    Each eta-bit group of the interleaved codeword spends its first
    log2(Nt) bits on the pattern (natural binary, 1-based) and the rest
    on the QAM label.
    """
    pkt = np.asarray(packet, dtype=np.uint8)
    if pkt.shape != (tc.info_len,):
        raise UsageError(f"packet must have shape ({tc.info_len},), got {pkt.shape}")
    coded = turbo_encode(pkt, tc)
    inter = il.interleave(coded) if il is not None else coded
    nrf = nt.bit_length() - 1
    eta = nrf + c.bits_per_symbol
    grid = inter.reshape(-1, eta)
    map_idx = (bits_to_int(grid[:, :nrf]) + 1).astype(np.int16)
    sym_idx = c.index_of_bits(grid[:, nrf:]).astype(np.int16)
    return map_idx, sym_idx


@dataclasses.dataclass(frozen=True)
class CodedFrame:
    """Ground truth of one coded frame across all K devices."""

    activity: np.ndarray
    payloads: np.ndarray
    packets: np.ndarray
    map_idx: np.ndarray
    sym_idx: np.ndarray
    X: np.ndarray


def build_coded_frame(cfg: SystemConfig, ccfg: CodedConfig, c: Constellation,
                      *, rng: np.random.Generator,
                      activity: np.ndarray | None = None,
                      payloads: np.ndarray | None = None) -> CodedFrame:
    """Encode one packet per device and lay the symbols out as X."""
    tc, il = chain_parts(cfg, ccfg)
    if activity is None:
        activity = draw_activity(cfg, rng)
    else:
        activity = np.asarray(activity, dtype=np.uint8)
    if payloads is None:
        payloads = rng.integers(0, 2, size=(cfg.k, ccfg.layout.ld), dtype=np.uint8)
    else:
        payloads = np.asarray(payloads, dtype=np.uint8)

    packets = np.zeros((cfg.k, ccfg.layout.l), dtype=np.uint8)
    map_idx = np.zeros((cfg.k, cfg.j), dtype=np.int16)
    sym_idx = np.full((cfg.k, cfg.j), -1, dtype=np.int16)
    X = np.zeros((cfg.n_cols, cfg.j), dtype=complex)
    for k in np.flatnonzero(activity):
        packets[k] = build_packet(payloads[k], ccfg.layout)
        mk, sk = bicmm_encode(packets[k], tc, il, c, cfg.nt)
        map_idx[k], sym_idx[k] = mk, sk
        X[k * cfg.nt + (mk - 1), np.arange(cfg.j)] = c.points[sk]
    return CodedFrame(activity=activity, payloads=payloads, packets=packets,
                      map_idx=map_idx, sym_idx=sym_idx, X=X)


def compute_symbol_llrs(log_pmf_block: np.ndarray, c: Constellation,
                        nt: int) -> np.ndarray:
    """Per-bit LLRs for one device from its (Nt, J, M+1) log posteriors.

    The joint one-row-active posterior factorizes as q_i(s) times the
    silence mass of the other rows; that common silence product cancels
    in every LLR ratio, leaving weights q_i(s)/q_i(0) over the Nt*M
    candidates. Returns (J, eta) with positive values favouring bit 0.
    """
    lp = np.asarray(log_pmf_block, dtype=float)
    nrf = nt.bit_length() - 1
    m = c.order
    logw = lp[:, :, 1:] - lp[:, :, :1]  # (Nt, J, M)
    flat = np.moveaxis(logw, 0, 1).reshape(lp.shape[1], nt * m)
    cand_row = np.repeat(np.arange(nt), m)
    cand_sym = np.tile(np.arange(m), nt)
    cols = []
    for b in range(nrf):
        bit = (cand_row >> (nrf - 1 - b)) & 1
        cols.append(_logsumexp(flat[:, bit == 0], axis=1)
                    - _logsumexp(flat[:, bit == 1], axis=1))
    for d in range(c.bits_per_symbol):
        bit = c.bit_labels[cand_sym, d]
        cols.append(_logsumexp(flat[:, bit == 0], axis=1)
                    - _logsumexp(flat[:, bit == 1], axis=1))
    out = np.stack(cols, axis=1)
    return np.clip(np.nan_to_num(out, nan=0.0, posinf=LLR_MAX,
                                 neginf=-LLR_MAX), -LLR_MAX, LLR_MAX)


def decoding_quality_judge(decoded_rows: np.ndarray,
                           layout: PacketLayout) -> np.ndarray:
    """Signature Hamming distances; zero marks a trustworthy decode."""
    rows = np.asarray(decoded_rows, dtype=np.uint8)
    return (rows[:, :layout.ls] != layout.signature).sum(axis=1)


@dataclasses.dataclass(frozen=True)
class RoundInfo:
    """Snapshot of one receiver round for diagnostics and tests."""

    omega1: np.ndarray
    omega2: np.ndarray
    m: np.ndarray
    omega3: np.ndarray
    omega1_after: np.ndarray
    lambda_after: np.ndarray


@dataclasses.dataclass(frozen=True)
class IdsampResult:
    """Receiver output: detected set, decoded packets, round history.

    B rows outside omega0 are all-zero. first_detection is the round-0
    detector result on the untouched observation, used for symbol-level
    metrics.
    """

    omega0: np.ndarray
    B: np.ndarray
    rounds: list[RoundInfo]
    first_detection: DetectionResult
    residual_norm: float
    layout: PacketLayout

    @property
    def payloads(self) -> np.ndarray:
        return self.B[:, self.layout.ls:]


def _device_llrs(state_log_pmf: np.ndarray, devs: np.ndarray,
                 positions: np.ndarray, il: BlockInterleaver | None,
                 c: Constellation, nt: int) -> np.ndarray:
    """Stack deinterleaved codeword LLRs for the given devices."""
    j = state_log_pmf.shape[1]
    eta = nt.bit_length() - 1 + c.bits_per_symbol
    out = np.empty((len(devs), j * eta))
    for n, pos in enumerate(positions):
        block = state_log_pmf[pos * nt:(pos + 1) * nt]
        flat = compute_symbol_llrs(block, c, nt).ravel()
        out[n] = il.deinterleave(flat) if il is not None else flat
    return out


def _cancel_devices(y: np.ndarray, h0: np.ndarray, devs: np.ndarray,
                    bits: np.ndarray, tc: TurboConfig,
                    il: BlockInterleaver | None, c: Constellation,
                    nt: int) -> None:
    """Subtract the re-encoded contribution of each device from y in place."""
    j = y.shape[1]
    for dev, row in zip(devs, bits):
        mk, sk = bicmm_encode(row, tc, il, c, nt)
        xk = np.zeros((nt, j), dtype=complex)
        xk[mk - 1, np.arange(j)] = c.points[sk]
        y -= h0[:, dev * nt:(dev + 1) * nt] @ xk


def _block_columns(devs: np.ndarray, nt: int) -> np.ndarray:
    return (devs[:, None] * nt + np.arange(nt)).ravel()


def run_idsamp(Y: np.ndarray, H0: np.ndarray, cfg: SystemConfig,
               ccfg: CodedConfig,
               c: Constellation | None = None) -> IdsampResult:
    """Joint detection and decoding with successive interference removal.

    Round 0 fixes the detected set omega0. Each round re-runs the
    detector on the residual observation, decodes the n_bar strongest
    still-pending devices, cancels the ones whose signature checks out
    and prunes their columns, until either every pending device fails the
    check (the rest are decoded as-is) or none are pending.
    """
    if c is None:
        c = make_constellation(cfg.m)
    tc, il = chain_parts(cfg, ccfg)
    k, nt = cfg.k, cfg.nt
    b_matrix = np.zeros((k, tc.info_len), dtype=np.uint8)
    y_cur = np.array(Y, dtype=complex)
    survivors = np.arange(k)
    h_cur = np.asarray(H0)
    rounds: list[RoundInfo] = []
    first = None
    omega0 = omega1 = None

    for _ in range(k):
        cfg_cur = cfg if survivors.size == k else cfg.replace(
            k=survivors.size, ka=min(cfg.ka, survivors.size))
        det = run_dsamp(y_cur, h_cur, cfg_cur, c)
        if first is None:
            first = det
            omega0 = survivors[det.omega]
            omega1 = omega0.copy()

        if not ccfg.sic:
            pos = np.searchsorted(survivors, omega0)
            if omega0.size:
                llrs = _device_llrs(det.state.log_pmf, omega0, pos, il, c, nt)
                b_matrix[omega0] = turbo_decode_batch(llrs, tc)[0]
            m = (decoding_quality_judge(b_matrix[omega0], ccfg.layout)
                 if ccfg.judge else np.zeros(omega0.size, dtype=np.int64))
            rounds.append(RoundInfo(
                omega1=omega1, omega2=omega0.copy(), m=m,
                omega3=np.empty(0, dtype=np.int64), omega1_after=omega1,
                lambda_after=np.empty(0, dtype=np.int64)))
            break

        # Strongest pending devices, ties resolved toward lower index.
        pos1 = np.searchsorted(survivors, omega1)
        strength = det.a_hat[pos1]
        order = np.lexsort((omega1, -strength))
        omega2 = np.sort(omega1[order[:ccfg.n_bar]])

        if omega2.size:
            pos2 = np.searchsorted(survivors, omega2)
            llrs = _device_llrs(det.state.log_pmf, omega2, pos2, il, c, nt)
            b_matrix[omega2] = turbo_decode_batch(llrs, tc)[0]
        if ccfg.judge:
            m = decoding_quality_judge(b_matrix[omega2], ccfg.layout)
        else:
            m = np.zeros(omega2.size, dtype=np.int64)

        if np.all(m != 0):
            # Nothing trustworthy left: decode the rest once and stop.
            rest = np.setdiff1d(omega1, omega2)
            if rest.size:
                posr = np.searchsorted(survivors, rest)
                llrs = _device_llrs(det.state.log_pmf, rest, posr, il, c, nt)
                b_matrix[rest] = turbo_decode_batch(llrs, tc)[0]
            rounds.append(RoundInfo(
                omega1=omega1, omega2=omega2, m=m,
                omega3=np.empty(0, dtype=np.int64), omega1_after=omega1,
                lambda_after=np.setdiff1d(omega0, omega1)))
            break

        omega3 = omega2[m == 0]
        _cancel_devices(y_cur, np.asarray(H0), omega3, b_matrix[omega3],
                        tc, il, c, nt)
        omega1_after = np.setdiff1d(omega1, omega3)
        lam = np.setdiff1d(omega0, omega1_after)
        survivors = np.setdiff1d(np.arange(k), lam)
        h_cur = np.asarray(H0)[:, _block_columns(survivors, nt)]
        rounds.append(RoundInfo(
            omega1=omega1, omega2=omega2, m=m, omega3=omega3,
            omega1_after=omega1_after, lambda_after=lam))
        if omega1_after.size == 0:
            break
        omega1 = omega1_after
    else:
        raise NumericsError("interference cancellation made no progress "
                            f"within {k} rounds")

    return IdsampResult(omega0=omega0, B=b_matrix, rounds=rounds,
                        first_detection=first,
                        residual_norm=float(np.linalg.norm(y_cur)),
                        layout=ccfg.layout)
