"""Acceptance gate: one test per release criterion.

Each test is a single pass/fail line under `pytest -v`. The oracle
criteria (01, 02, 13) restate their brute-force references here so the
gate stays self-contained; the Monte-Carlo criteria pin their scenario,
seeds and frame budgets in the test body. The coded-receiver and
channel-tracking scenarios run at reduced dimensions chosen so the
claimed effects are resolved in minutes; the antenna count for the
cancellation criterion sits at the decoder waterfall on purpose, since
above it every coded variant is error-free and the comparison is vacuous.

Budget note: this module runs the large Monte-Carlo sweeps and takes
roughly half an hour on one core.
"""

import dataclasses
import math

import numpy as np
import pytest

from mmaccess import (
    SystemConfig,
    build_frame,
    draw_activity,
    draw_rayleigh_channel,
    make_constellation,
    rng_for,
    snr_to_noise_variance,
    transmit,
)
from mmaccess.baselines import (
    complexity_count,
    conventional_amp,
    slot_activity_from_state,
)
from mmaccess.coded import CodedConfig, PacketLayout, build_coded_frame, run_idsamp
from mmaccess.csi import refine_csi_mmse, run_multiframe_tracking
from mmaccess.dsamp import (
    denoise_element,
    em_update_activity,
    em_update_noise,
    activity_update_from_pmf,
    finalize_detection,
    hard_demod,
    run_dsamp,
    run_dsamp_core,
)
from mmaccess.harness import coded_frame_rates, run_point
from mmaccess.metrics import uncoded_frame_rates
from mmaccess.se import SeConfig, se_iterate

PAPER_SCALE = SystemConfig(k=500, ka=50, nt=4, m=4, nr=256, j=12,
                           snr_db=5.0, seed=0, t0=15)


def mean_of(rates, field):
    vals = [getattr(r, field) for r in rates if getattr(r, field) is not None]
    return float(np.mean(vals))


def drawn_frame(cfg, c, rng):
    """One transmitted frame: truth, channel, noisy observation."""
    activity = draw_activity(cfg, rng)
    frame = build_frame(cfg, c, activity, rng=rng)
    h = draw_rayleigh_channel(cfg, rng).H
    y = transmit(h, frame.X, snr_to_noise_variance(cfg), rng)
    return frame, h, y


def test_01_denoiser_matches_enumeration():
    """Posterior mean/variance against direct (M+1)-atom enumeration."""
    c = make_constellation(4)
    atoms = np.concatenate(([0.0 + 0j], c.points))
    rng = np.random.default_rng(101)
    worst = 0.0
    for _ in range(10_000):
        r = complex(*rng.normal(scale=2.0, size=2))
        phi = float(10.0 ** rng.uniform(-6, 6))
        a = float(rng.uniform())
        prior = np.concatenate(([1.0 - a / 4], np.full(4, a / 16)))
        logw = np.log(np.maximum(prior, 1e-300)) - np.abs(r - atoms) ** 2 / phi
        w = np.exp(logw - logw.max())
        pmf = w / w.sum()
        mean = np.sum(pmf * atoms)
        var = max(float(np.sum(pmf * np.abs(atoms) ** 2) - abs(mean) ** 2), 0.0)
        out = denoise_element(r, phi, a, c, nt=4)
        worst = max(worst, abs(out.mean - mean), abs(out.variance - var),
                    float(np.max(np.abs(out.pmf - pmf))))
    assert worst < 1e-10


def test_02_activity_update_matches_enumeration():
    """Block activity against the one-row-on candidate-set enumeration."""
    rng = np.random.default_rng(102)
    worst = 0.0
    for trial in range(10_000):
        nt, m = ((2, 2) if trial % 2 else (4, 4))
        pmf = rng.dirichlet(np.ones(m + 1), size=(nt, 2))
        ref = 0.0
        for jj in range(2):
            w = 0.0
            for i in range(nt):
                prod = float(pmf[i, jj, 1:].sum())
                for g in range(nt):
                    if g != i:
                        prod *= pmf[g, jj, 0]
                w += prod
            ref += w / 2
        worst = max(worst, abs(activity_update_from_pmf(pmf, nt=nt) - ref))
    assert worst < 1e-12


def test_03_em_updates_are_stationary_points():
    """Finite-difference derivative of the per-parameter objective is zero
    at the returned updates, on a real 4-device detector state."""
    cfg = SystemConfig(k=4, ka=2, nt=2, m=4, nr=16, j=6,
                       snr_db=6.0, seed=31, t0=2)
    c = make_constellation(4)
    rng = rng_for(31, "c3")
    activity = draw_activity(cfg, rng)
    frame = build_frame(cfg, c, activity, rng=rng)
    h = draw_rayleigh_channel(cfg, rng).H
    y = transmit(h, frame.X, snr_to_noise_variance(cfg), rng)
    state, _ = run_dsamp_core(y, h, cfg, c)

    # Activity: objective sums, per slot, the active-candidate mass S_j
    # against log a and its complement against log(1-a).
    pmf = np.exp(state.log_pmf).reshape(cfg.k, cfg.nt, cfg.j, -1)
    h_step = 1e-4
    for k in range(cfg.k):
        s_slot = np.empty(cfg.j)
        for jj in range(cfg.j):
            w = 0.0
            for i in range(cfg.nt):
                prod = float(pmf[k, i, jj, 1:].sum())
                for g in range(cfg.nt):
                    if g != i:
                        prod *= pmf[k, g, jj, 0]
                w += prod
            s_slot[jj] = w
        a_star = em_update_activity(state, k, cfg)
        assert 0.02 < a_star < 0.98  # instance chosen away from the clamp
        assert a_star == pytest.approx(float(s_slot.mean()), abs=1e-9)

        def q_act(a):
            return float(np.mean(s_slot * math.log(a)
                                 + (1.0 - s_slot) * math.log(1.0 - a)))

        fd = (q_act(a_star + h_step) - q_act(a_star - h_step)) / (2 * h_step)
        assert abs(fd) < 1e-6

    # Noise variance: objective is -log s - T/s per observed entry, with
    # T evaluated at the pre-update iterate.
    s_prev = state.sigma2_hat
    shrink = np.abs(y - state.Z) ** 2 / (1.0 + state.V / s_prev) ** 2
    post = s_prev * state.V / (state.V + s_prev)
    tvals = shrink + post
    s_star = em_update_noise(y, state.Z, state.V, s_prev)
    assert s_star == pytest.approx(float(tvals.mean()), rel=1e-12)

    def q_noise(s):
        return float(np.mean(-np.log(s) - tvals / s))

    h_rel = 1e-4 * s_star
    fd = (q_noise(s_star + h_rel) - q_noise(s_star - h_rel)) / (2 * h_rel)
    assert abs(fd) < 1e-6


def test_04_complexity_table_values():
    """Multiplication counts match the published table to print precision."""
    cfg = PAPER_SCALE
    assert round(complexity_count(cfg, "dsamp") / 1e8, 2) == 2.32
    assert round(complexity_count(cfg.replace(nr=128), "dsamp") / 1e8, 2) == 1.17
    assert round(complexity_count(cfg, "lmmse") / 1e6, 2) == 1.56
    assert round(complexity_count(cfg.replace(nr=128), "lmmse") / 1e6, 2) == 0.84


def test_05_structured_detector_beats_flat_amp():
    """ADER, SER and BER never worse than the flat-prior AMP at 3 and
    5 dB and strictly better on each metric overall; 200 paired frames
    per point at full scale.

    A per-point strict comparison is ill-posed exactly where a metric
    ties at zero: at 5 dB both detectors make zero activity errors over
    hundreds of frames (measured out to 300k device decisions), and no
    rate can be strictly below an observed zero. Ties are therefore
    accepted only at exactly zero; every metric must separate strictly
    somewhere, and none may ever flip."""
    c = make_constellation(4)
    pooled = {field: [0.0, 0.0] for field in ("ader", "ser", "ber")}
    for snr in (3.0, 5.0):
        cfg = PAPER_SCALE.replace(snr_db=snr)
        sigma2 = snr_to_noise_variance(cfg)
        ds, amp = [], []
        for f in range(200):
            rng = rng_for(501, snr, f)
            frame, h, y = drawn_frame(cfg, c, rng)
            ds.append(uncoded_frame_rates(cfg, frame, run_dsamp(y, h, cfg, c), c))
            amp.append(uncoded_frame_rates(
                cfg, frame, conventional_amp(y, h, cfg, cfg.lam, sigma2, c), c))
        for field in ("ader", "ser", "ber"):
            a, b = mean_of(ds, field), mean_of(amp, field)
            assert a <= b, (snr, field, a, b)
            assert a < b or a == 0.0, (snr, field, a, b)
            pooled[field][0] += a
            pooled[field][1] += b
    for field, (a, b) in pooled.items():
        assert a < b, (field, a, b)


def test_06_minmax_normalization_helps_at_low_snr():
    """Normalized thresholding never hurts ADER at 0-2 dB and strictly
    improves at one point at least; both decision rules share each
    frame's converged state."""
    c = make_constellation(4)
    mm_means, raw_means = [], []
    for snr in (0.0, 1.0, 2.0):
        cfg = PAPER_SCALE.replace(snr_db=snr)
        mm, raw = [], []
        for f in range(200):
            rng = rng_for(601, snr, f)
            frame, h, y = drawn_frame(cfg, c, rng)
            state, _ = run_dsamp_core(y, h, cfg, c)
            mm.append(uncoded_frame_rates(
                cfg, frame, finalize_detection(state, cfg, minmax=True), c))
            raw.append(uncoded_frame_rates(
                cfg, frame, finalize_detection(state, cfg, minmax=False), c))
        mm_means.append(mean_of(mm, "ader"))
        raw_means.append(mean_of(raw, "ader"))
    assert all(m <= r for m, r in zip(mm_means, raw_means)), (mm_means, raw_means)
    assert any(m < r for m, r in zip(mm_means, raw_means))


def test_07_converged_by_fifteen_iterations():
    """Frame-averaged ADER and BER move by under 10% relative when the
    iteration budget grows from 15 to 25; 600 paired frames at 2 and 6 dB.

    All four legs are measured before any assertion so a failure report
    carries the complete picture. At 2 dB the ADER drift is systematic,
    not sampling noise: the EM noise estimate keeps shrinking past
    iteration 15, posteriors sharpen, and borderline weak actives are
    lost (119 vs 142 missed detections per 600 frames, stable near 16%
    relative from 100 frames on, with zero false alarms on both arms).
    That leg fails the 10% gate and is expected to; the BER drift at
    2 dB and both metrics at 6 dB sit inside it."""
    c = make_constellation(4)
    legs = {}
    for snr in (2.0, 6.0):
        cfg = PAPER_SCALE.replace(snr_db=snr)
        short, long = [], []
        for f in range(600):
            rng = rng_for(701, snr, f)
            frame, h, y = drawn_frame(cfg, c, rng)
            short.append(uncoded_frame_rates(cfg, frame, run_dsamp(y, h, cfg, c), c))
            long.append(uncoded_frame_rates(
                cfg, frame, run_dsamp(y, h, cfg, c, t0=25), c))
        for field in ("ader", "ber"):
            a, b = mean_of(short, field), mean_of(long, field)
            if a == 0.0 and b == 0.0:
                continue
            legs[snr, field] = (a, b, abs(a - b) / max(a, b))
    bad = {key: vals for key, vals in legs.items() if vals[2] >= 0.10}
    assert not bad, f"drift over 10 percent on {bad}; all legs {legs}"


def test_08_state_evolution_tracks_simulation():
    """Predicted BER within half a decade of a 200-frame simulation at
    2, 4 and 6 dB."""
    for snr in (2.0, 4.0, 6.0):
        cfg = PAPER_SCALE.replace(snr_db=snr)
        trace = se_iterate(SeConfig(system=cfg, n_mc=500, t_se=50))
        row = run_point(cfg, "dsamp", 200, base_seed=801, axis="snr_db",
                        value=snr)
        assert trace.predicted_ber is not None and trace.predicted_ber > 0
        assert row.ber is not None and row.ber > 0
        gap = abs(math.log10(trace.predicted_ber) - math.log10(row.ber))
        assert gap <= 0.5, (snr, trace.predicted_ber, row.ber)


def test_09_more_slots_help_only_the_structured_detector():
    """Frame-level coupling turns extra slots into better activity
    detection, while the flat-prior AMP treats every slot independently:
    its per-slot statistics on a shared observation are identical."""
    c = make_constellation(4)
    cfg12 = PAPER_SCALE
    cfg2 = PAPER_SCALE.replace(j=2)
    sigma2 = snr_to_noise_variance(cfg12)

    ader = {}
    for cfg in (cfg12, cfg2):
        rates = []
        for f in range(200):
            rng = rng_for(901, cfg.j, f)
            frame, h, y = drawn_frame(cfg, c, rng)
            rates.append(uncoded_frame_rates(cfg, frame, run_dsamp(y, h, cfg, c), c))
        ader[cfg.j] = mean_of(rates, "ader")
    assert ader[12] <= ader[2], ader

    for f in range(3):
        rng = rng_for(902, f)
        frame, h, y = drawn_frame(cfg12, c, rng)
        wide = conventional_amp(y, h, cfg12, cfg12.lam, sigma2, c)
        narrow = conventional_amp(y[:, :2], h, cfg2, cfg2.lam, sigma2, c)
        diff = np.abs(slot_activity_from_state(wide.state, cfg12)[:, :2]
                      - slot_activity_from_state(narrow.state, cfg2)).max()
        assert diff < 1e-9


def test_10_coded_chain_noiseless_round_trip():
    """Single active device, no noise: encode, detect, soft-demap and
    decode recover the 120-bit packet exactly in 100 of 100 trials."""
    cfg = SystemConfig(k=4, ka=1, nt=4, m=4, nr=16, j=93,
                       snr_db=30.0, seed=10, t0=15)
    ccfg = CodedConfig(layout=PacketLayout())  # 20 + 100 = 120 bits
    c = make_constellation(4)
    exact = 0
    for trial in range(100):
        rng = rng_for(1001, trial)
        frame = build_coded_frame(cfg, ccfg, c, rng=rng)
        h = draw_rayleigh_channel(cfg, rng).H
        res = run_idsamp(h @ frame.X, h, cfg, ccfg, c)
        dev = int(np.flatnonzero(frame.activity)[0])
        if (list(res.omega0) == [dev]
                and np.array_equal(res.B[dev], frame.packets[dev])):
            exact += 1
    assert exact == 100


def test_11_cancellation_helps_near_the_waterfall():
    """At 0 and 1 dB the full receiver is no worse than decoding without
    cancellation and no worse than cancelling without the quality check,
    and raw hard decisions are strictly worst at 0 dB. 50 frames per
    point; every variant sees the same devices, payloads, channel and
    noise."""
    cfg_base = SystemConfig(k=200, ka=20, nt=4, m=4, nr=80, j=93,
                            snr_db=0.0, seed=0, t0=15)
    ccfg = CodedConfig(layout=PacketLayout())
    flat = dataclasses.replace(ccfg, sic=False, interleave=False)
    nosic = dataclasses.replace(ccfg, sic=False)
    nojudge = dataclasses.replace(ccfg, judge=False)
    c = make_constellation(4)
    layout = ccfg.layout
    j0 = layout.l // cfg_base.eta

    ber = {snr: {} for snr in (0.0, 1.0)}
    for snr in (0.0, 1.0):
        cfg = cfg_base.replace(snr_db=snr)
        cfg0 = cfg.replace(j=j0)
        sigma2 = snr_to_noise_variance(cfg)
        sums = {name: [] for name in
                ("full", "nosic", "flat", "nojudge", "hard")}
        for f in range(50):
            rng = rng_for(1101, snr, f)
            activity = draw_activity(cfg, rng)
            payloads = rng.integers(0, 2, size=(cfg.k, layout.ld),
                                    dtype=np.uint8)
            h = draw_rayleigh_channel(cfg, rng).H
            w = (rng.standard_normal((cfg.nr, cfg.j))
                 + 1j * rng.standard_normal((cfg.nr, cfg.j)))
            w *= math.sqrt(sigma2 / 2.0)

            fr = build_coded_frame(cfg, ccfg, c, rng=rng,
                                   activity=activity, payloads=payloads)
            fr_flat = build_coded_frame(cfg, flat, c, rng=rng,
                                        activity=activity, payloads=payloads)
            y = h @ fr.X + w
            for name, variant, frame_v, y_v in (
                    ("full", ccfg, fr, y),
                    ("nosic", nosic, fr, y),
                    ("nojudge", nojudge, fr, y),
                    ("flat", flat, fr_flat, h @ fr_flat.X + w)):
                res = run_idsamp(y_v, h, cfg, variant, c)
                sums[name].append(
                    coded_frame_rates(cfg, variant, c, frame_v, res).ber)

            # raw hard decisions on the uncoded packet, same bits and channel
            packets = np.concatenate(
                [np.broadcast_to(layout.signature, (cfg.k, layout.ls)),
                 payloads], axis=1)
            fr0 = build_frame(cfg0, c, activity, bits=packets)
            w0 = (rng.standard_normal((cfg.nr, j0))
                  + 1j * rng.standard_normal((cfg.nr, j0)))
            y0 = h @ fr0.X + math.sqrt(sigma2 / 2.0) * w0
            det = run_dsamp(y0, h, cfg0, c)
            _, media_bits, _, qam_bits = hard_demod(det.X_hat, det.omega, c,
                                                    cfg.nt)
            bits_hat = np.concatenate([media_bits, qam_bits],
                                      axis=2).reshape(cfg.k, -1)
            active = np.flatnonzero(activity)
            hit = active[np.isin(active, det.omega)]
            missed = active.size - hit.size
            errs = int((bits_hat[hit, layout.ls:]
                        != packets[hit, layout.ls:]).sum())
            sums["hard"].append(
                (layout.ld * missed + errs) / (layout.ld * cfg.ka))
        ber[snr] = {name: float(np.mean(vals)) for name, vals in sums.items()}

    for snr in (0.0, 1.0):
        assert ber[snr]["full"] <= ber[snr]["nosic"], ber[snr]
        assert ber[snr]["full"] <= ber[snr]["nojudge"], ber[snr]
    worst = ber[0.0]["hard"]
    for name in ("full", "nosic", "flat", "nojudge"):
        assert worst > ber[0.0][name], ber[0.0]


def test_12_channel_refresh_beats_a_frozen_estimate():
    """Aging factor 0.99 at 30 dB over 50 frames, 10 seeds: refreshed CSI
    is better on average at the horizon, and the frozen strategy's error
    never improves as the channel drifts."""
    cfg = SystemConfig(k=100, ka=10, nt=4, m=4, nr=64, j=93,
                       snr_db=30.0, seed=0, t0=15)
    ccfg = CodedConfig(layout=PacketLayout(), sic=False)
    up = np.zeros((10, 50))
    down = np.zeros((10, 50))
    for s in range(10):
        recs = run_multiframe_tracking(cfg, ccfg, alpha=0.99, n_frames=50,
                                       update=True, rng=rng_for(1201, s))
        up[s] = [r.nmse_h for r in recs]
        recs = run_multiframe_tracking(cfg, ccfg, alpha=0.99, n_frames=50,
                                       update=False, rng=rng_for(1201, s))
        down[s] = [r.nmse_h for r in recs]
    up_mean = up.mean(axis=0)
    down_mean = down.mean(axis=0)
    assert up_mean[-1] < down_mean[-1], (up_mean[-1], down_mean[-1])
    assert np.all(np.diff(down_mean) >= 0.0)


def test_13_refinement_matches_regularized_least_squares():
    """Closed-form refinement against a direct regularized inverse, 1000
    random instances; tiny regularization recovers the true channel from
    an overdetermined noiseless fit."""
    rng = np.random.default_rng(1301)
    na, nt, j, nr = 2, 2, 9, 6
    rows = na * nt
    worst = 0.0
    for _ in range(1000):
        x = rng.normal(size=(rows, j)) + 1j * rng.normal(size=(rows, j))
        y = rng.normal(size=(nr, j)) + 1j * rng.normal(size=(nr, j))
        a = rng.normal(size=(rows, rows)) + 1j * rng.normal(size=(rows, rows))
        r_h = a.conj().T @ a + np.eye(rows)
        sigma2 = float(10.0 ** rng.uniform(-3, 1))
        g = x.conj().T @ r_h @ x + rows * sigma2 * np.eye(j)
        ref = y @ np.linalg.inv(g) @ x.conj().T @ r_h
        got = refine_csi_mmse(y, x, r_h, sigma2, na, nt)
        worst = max(worst, float(np.linalg.norm(got - ref)
                                 / np.linalg.norm(ref)))
    assert worst < 1e-10

    x = rng.normal(size=(rows, 12)) + 1j * rng.normal(size=(rows, 12))
    h_true = rng.normal(size=(nr, rows)) + 1j * rng.normal(size=(nr, rows))
    got = refine_csi_mmse(h_true @ x, x, nr * np.eye(rows), 1e-10, na, nt)
    assert float(np.linalg.norm(got - h_true)
                 / np.linalg.norm(h_true)) < 1e-6
