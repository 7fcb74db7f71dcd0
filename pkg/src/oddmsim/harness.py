"""Monte-Carlo experiment orchestration and CSV emission.

Every frame draws its randomness from a counter-based seed sequence
(master seed, SNR-grid index, frame index, role), so results are bit-identical
for a given configuration regardless of worker count or scheduling, and all
detectors at one SNR point see the same channel/noise/data realizations.
"""

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import analysis
from .channel import ChannelProfile, apply_channel, eva_profile, sample_channel
from .detectors import DetectorConfig, init_estimates, run_detector
from .modem import DDGrid, ModemParams, dd_to_time, make_constellation, time_to_dd
from .pilot import (
    EstimatedChannel,
    PilotConfig,
    embed_pilot,
    estimate_channel,
    perturb_channel,
    pilot_amplitude_for_snr,
)

__all__ = [
    "SimConfig",
    "RunRecord",
    "desk_preset",
    "paper_preset",
    "load_config",
    "apply_config_text",
    "run_ber_point",
    "run_sweep",
    "BER_HEADER",
    "SINR_HEADER",
    "EVOLVE_HEADER",
    "EST_HEADER",
]

BER_HEADER = "snr_db,pilot_mode,detector,frames,frame_errors,bit_errors,ber,mean_iterations"
SINR_HEADER = "snr_db,detector,iteration,sinr_sim_db,sinr_theory_db"
EVOLVE_HEADER = "snr_db,kind,iteration,sinr_db,ser,mse,ber"
EST_HEADER = "snr_db,snr_pilot_db,trials,var_dh_emp,var_dh_theory,var_dg_emp,var_dg_theory"

PILOT_MODES = ("perfect_csi", "estimated", "synthetic")

# seed-sequence role tags
_ROLE_FRAME = 0
_ROLE_DETECTOR = 1
_ROLE_CHANNEL = 2


@dataclass(frozen=True)
class SimConfig:
    """Fully resolved experiment description."""

    params: ModemParams
    profile: ChannelProfile
    qam: int = 4
    detectors: tuple = ("soft_sicmmse",)
    n_ite: int = 10
    m_0: int = 0
    delta_d_ratio: float = 9.4
    snr_db: tuple = ()
    pilot_mode: str = "perfect_csi"
    snr_pilot_db: float | None = None
    min_frame_errors: int = 500
    max_frames: int = 2_000_000
    seed: int = 1
    workers: int = 1
    chunk: int = 16
    sinr_frames: int = 200
    evolve_chans: int = 8
    est_trials: int = 10_000

    def __post_init__(self):
        if self.min_frame_errors < 1:
            raise ValueError("min_frame_errors must be at least 1")
        if self.pilot_mode not in PILOT_MODES:
            raise ValueError(f"unknown pilot mode {self.pilot_mode!r}")
        if self.pilot_mode != "perfect_csi" and self.snr_pilot_db is None:
            raise ValueError(f"pilot mode {self.pilot_mode!r} needs snr_pilot_db")

    def detector_config(self, kind: str) -> DetectorConfig:
        const = make_constellation(self.qam)
        return DetectorConfig(
            kind=kind,
            n_ite=self.n_ite,
            m_0=self.m_0,
            delta_d=const.d_min / self.delta_d_ratio,
        )


@dataclass
class RunRecord:
    """Aggregates for one (SNR, detector) point."""

    snr_db: float
    pilot_mode: str
    detector: str
    frames: int
    frame_errors: int
    bit_errors: int
    bits_total: int
    mean_iterations: float
    wall_time: float

    @property
    def ber(self) -> float:
        return self.bit_errors / self.bits_total if self.bits_total else 0.0

    def csv_row(self) -> str:
        return (
            f"{self.snr_db:g},{self.pilot_mode},{self.detector},{self.frames},"
            f"{self.frame_errors},{self.bit_errors},{self.ber:.10g},"
            f"{self.mean_iterations:g}"
        )


# ---------------------------------------------------------------------------
# presets and configuration


def desk_preset(**overrides) -> SimConfig:
    """Fast small-frame setup: 64x16 grid, truncated EVA taps, k_max=3."""
    t = 66.67e-6
    profile = eva_profile(t / 512, k_max=3, max_tap=9)
    params = ModemParams(
        n_delay=64, n_doppler=16, sym_duration=t, max_delay=profile.max_delay
    )
    return replace(SimConfig(params=params, profile=profile), **overrides)


def paper_preset(**overrides) -> SimConfig:
    """Full-scale setup: 512x32 grid, nine EVA taps, k_max=5."""
    t = 66.67e-6
    profile = eva_profile(t / 512, k_max=5)
    params = ModemParams(
        n_delay=512, n_doppler=32, sym_duration=t, max_delay=profile.max_delay
    )
    return replace(SimConfig(params=params, profile=profile), **overrides)


PRESETS = {"desk": desk_preset, "paper": paper_preset}

_INT_KEYS = {
    "m", "n", "qam", "n_ite", "m0", "min_frame_errors", "max_frames", "seed",
    "workers", "chunk", "sinr_frames", "evolve_chans", "est_trials", "kmax",
    "max_tap",
}
_FLOAT_KEYS = {"t_us", "delta_d_ratio", "snr_pilot_db"}


def parse_config_text(text: str) -> dict:
    """Parse the flat key=value format (comments with '#', blank lines ok)."""
    out = {}
    for ln, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {ln}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key] = value
    return out


def apply_config_text(cfg: SimConfig, text: str) -> SimConfig:
    """Overlay key=value settings onto a preset configuration."""
    kv = parse_config_text(text)
    params_kw = {}
    profile_kw = {}
    cfg_kw = {}
    for key, value in kv.items():
        if key in ("m", "n", "t_us"):
            params_kw[key] = value
        elif key in ("kmax", "max_tap"):
            profile_kw[key] = value
        elif key == "detector":
            cfg_kw["detectors"] = tuple(v.strip() for v in value.split(",") if v.strip())
        elif key == "snr_db":
            cfg_kw["snr_db"] = tuple(float(v) for v in value.split(",") if v.strip())
        elif key == "pilot_mode":
            cfg_kw["pilot_mode"] = value
        elif key == "m0":
            cfg_kw["m_0"] = int(value)
        elif key in _INT_KEYS:
            cfg_kw[key] = int(value)
        elif key in _FLOAT_KEYS:
            cfg_kw[key] = float(value)
        else:
            raise ValueError(f"unknown configuration key {key!r}")

    params = cfg.params
    profile = cfg.profile
    if params_kw or profile_kw:
        t = float(params_kw.get("t_us", params.sym_duration * 1e6)) * 1e-6
        m = int(params_kw.get("m", params.n_delay))
        n = int(params_kw.get("n", params.n_doppler))
        k_max = int(profile_kw.get("kmax", profile.k_max))
        max_tap = profile_kw.get("max_tap")
        # tap indices follow the full-scale delay resolution of the profile
        profile = ChannelProfile(
            delays=profile.delays, powers=profile.powers, k_max=k_max
        )
        if max_tap is not None:
            keep = [
                (d, p)
                for d, p in zip(profile.delays, profile.powers)
                if d <= int(max_tap)
            ]
            profile = ChannelProfile(
                delays=tuple(d for d, _ in keep),
                powers=tuple(p for _, p in keep),
                k_max=k_max,
            )
        params = ModemParams(
            n_delay=m, n_doppler=n, sym_duration=t, max_delay=profile.max_delay
        )
    return replace(cfg, params=params, profile=profile, **cfg_kw)


def load_config(path, base: SimConfig | None = None) -> SimConfig:
    with open(path) as fh:
        text = fh.read()
    return apply_config_text(base if base is not None else desk_preset(), text)


# ---------------------------------------------------------------------------
# per-frame work


def _frame_rng(cfg: SimConfig, point_idx: int, frame_idx: int, role: int):
    seq = np.random.SeedSequence((cfg.seed, point_idx, frame_idx, role))
    return np.random.default_rng(seq)


def _frame_layout(cfg: SimConfig, sigma_z2: float):
    """Pilot config, data mask, and known-row descriptors for one frame."""
    params = cfg.params
    if cfg.pilot_mode != "estimated":
        return None, None, None, None
    amp = pilot_amplitude_for_snr(cfg.snr_pilot_db, sigma_z2, params)
    pcfg = PilotConfig(amplitude=amp, max_delay=params.max_delay)
    mask = pcfg.data_mask(params)
    known_rows = np.zeros(params.n_delay, dtype=bool)
    known_rows[pcfg.guard_rows(params)] = True
    return pcfg, mask, known_rows, amp


def _ber_frame(cfg: SimConfig, kind: str, snr_db: float, point_idx: int, frame_idx: int):
    """Simulate one frame; returns (bit_errors, data_bits, frame_error)."""
    params = cfg.params
    const = make_constellation(cfg.qam)
    sigma_z2 = const.power * 10.0 ** (-snr_db / 10.0)
    rng = _frame_rng(cfg, point_idx, frame_idx, _ROLE_FRAME)
    det_rng = _frame_rng(cfg, point_idx, frame_idx, _ROLE_DETECTOR)

    ch = sample_channel(cfg.profile, params, rng)
    pcfg, data_mask, known_rows, _ = _frame_layout(cfg, sigma_z2)
    if pcfg is None:
        n_data = params.frame_len
    else:
        n_data = pcfg.data_cell_count(params)
    bits = rng.integers(0, 2, n_data * const.bits_per_symbol)
    data = const.map_bits(bits)
    if pcfg is None:
        grid = DDGrid(data.reshape(params.n_delay, params.n_doppler), params)
        known_grid = None
    else:
        grid = embed_pilot(data, pcfg, params)
        known_grid = grid.entries
    seq = dd_to_time(grid)
    received = apply_channel(ch, seq, float(np.sqrt(sigma_z2)), rng)

    if cfg.pilot_mode == "perfect_csi":
        est = EstimatedChannel.from_true(ch)
    elif cfg.pilot_mode == "synthetic":
        sigma_dg2 = 10.0 ** (-cfg.snr_pilot_db / 10.0)
        est = perturb_channel(ch, sigma_dg2 / params.n_doppler, rng)
    else:
        est = estimate_channel(time_to_dd(received), pcfg, sigma_z2=sigma_z2)

    true_idx = const.nearest_index(grid.entries)
    result = run_detector(
        received,
        est,
        cfg.detector_config(kind),
        const,
        det_rng,
        sigma_z2=sigma_z2,
        known_rows=known_rows,
        known_grid=known_grid,
        true_indices=true_idx,
        data_mask=data_mask,
    )
    errors = int(result.bit_error_trace[-1])
    return errors, n_data * const.bits_per_symbol, errors > 0


def run_ber_point(
    cfg: SimConfig,
    kind: str,
    snr_db: float,
    point_idx: int = 0,
    executor: ProcessPoolExecutor | None = None,
) -> RunRecord:
    """Accumulate frames until the frame-error or frame-count budget is hit.

    Frames are processed in fixed-size chunks with the stop rule evaluated at
    chunk boundaries, so the stopping frame count does not depend on the
    worker pool.
    """
    start = time.perf_counter()
    frames = frame_errors = bit_errors = bits_total = 0
    while frame_errors < cfg.min_frame_errors and frames < cfg.max_frames:
        n_chunk = int(min(cfg.chunk, cfg.max_frames - frames))
        idxs = range(frames, frames + n_chunk)
        if executor is None:
            results = [_ber_frame(cfg, kind, snr_db, point_idx, i) for i in idxs]
        else:
            results = list(
                executor.map(
                    _ber_frame,
                    [cfg] * n_chunk,
                    [kind] * n_chunk,
                    [snr_db] * n_chunk,
                    [point_idx] * n_chunk,
                    idxs,
                )
            )
        for errs, bits, is_err in results:
            bit_errors += errs
            bits_total += bits
            frame_errors += int(is_err)
        frames += n_chunk
    return RunRecord(
        snr_db=snr_db,
        pilot_mode=cfg.pilot_mode,
        detector=kind,
        frames=frames,
        frame_errors=frame_errors,
        bit_errors=bit_errors,
        bits_total=bits_total,
        mean_iterations=float(cfg.n_ite),
        wall_time=time.perf_counter() - start,
    )


# ---------------------------------------------------------------------------
# SINR sweep (simulated vs closed form, per iteration)

_SINR_KINDS = ("mrc", "hard_sicmmse", "soft_sicmmse")


def sinr_point(cfg: SimConfig, kind: str, snr_db: float, point_idx: int = 0):
    """Per-iteration simulated and theoretical SINR for one channel draw.

    Returns a list of (iteration, sinr_sim_db, sinr_theory_db). The error
    variances entering the closed forms are extracted from the simulation
    itself (mean-square error of the fed-back estimates).
    """
    if kind not in _SINR_KINDS:
        raise ValueError(f"sinr mode supports {_SINR_KINDS}, not {kind!r}")
    if cfg.pilot_mode == "estimated":
        raise ValueError("sinr mode uses perfect_csi or synthetic pilot modes")
    params = cfg.params
    const = make_constellation(cfg.qam)
    sigma_z2 = const.power * 10.0 ** (-snr_db / 10.0)
    sigma_dg2 = (
        0.0
        if cfg.pilot_mode == "perfect_csi"
        else 10.0 ** (-cfg.snr_pilot_db / 10.0)
    )
    if kind == "soft_sicmmse" and sigma_dg2 > 0:
        raise ValueError("soft-cancellation SINR analysis requires perfect CSI")

    ch_rng = _frame_rng(cfg, point_idx, 0, _ROLE_CHANNEL)
    ch = sample_channel(cfg.profile, params, ch_rng)
    dcfg = cfg.detector_config(kind)
    mn = params.frame_len

    sig_pow = np.zeros((cfg.n_ite, mn))
    rip_pow = np.zeros((cfg.n_ite, mn))
    mse_acc = np.zeros(cfg.n_ite)
    init_mse_acc = 0.0
    for t in range(cfg.sinr_frames):
        rng = _frame_rng(cfg, point_idx, t, _ROLE_FRAME)
        det_rng = _frame_rng(cfg, point_idx, t, _ROLE_DETECTOR)
        bits = rng.integers(0, 2, mn * const.bits_per_symbol)
        grid = DDGrid(
            const.map_bits(bits).reshape(params.n_delay, params.n_doppler), params
        )
        seq = dd_to_time(grid)
        received = apply_channel(ch, seq, float(np.sqrt(sigma_z2)), rng)
        if sigma_dg2 > 0:
            est = perturb_channel(ch, sigma_dg2 / params.n_doppler, rng)
        else:
            est = EstimatedChannel.from_true(ch)
        init_state = init_estimates(
            received, est, dcfg.resolved_init(), sigma_z2, const.power
        )
        init_mse_acc += analysis.measure_mse(init_state.shat, seq.samples)
        res = run_detector(
            received,
            est,
            dcfg,
            const,
            det_rng,
            sigma_z2=sigma_z2,
            truth=seq.samples,
            collect_equalized=True,
        )
        mse_acc += res.mse_trace
        for i, rec in enumerate(res.records):
            psi, eta = analysis.decompose_equalized(
                rec.equalized, rec.normalizer, seq.samples
            )
            sig_pow[i] += np.abs(psi) ** 2
            rip_pow[i] += np.abs(eta) ** 2

    mse = mse_acc / cfg.sinr_frames
    init_mse = init_mse_acc / cfg.sinr_frames
    mom = analysis.channel_moments(ch)
    rows = []
    for i in range(cfg.n_ite):
        sim = analysis._sinr_from_powers(sig_pow[i], rip_pow[i], cfg.sinr_frames)
        sim_db = 10.0 * np.log10(sim)
        cur = mse[i]
        prev = mse[i - 1] if i > 0 else init_mse
        errs = analysis.ErrorState(
            min(cur, const.power),
            min(prev, const.power),
            sigma_dg2,
            const.power,
            sigma_z2,
        )
        if kind == "soft_sicmmse":
            theory = analysis.sinr_soft_profile(ch, errs, off_var=errs.sigma_e2_prev)
        else:
            theory = analysis.sinr_mrc_profile(ch, errs, mom)
        theory_db = 10.0 * np.log10(float(np.mean(theory)))
        rows.append((i + 1, sim_db, theory_db))
    return rows


# ---------------------------------------------------------------------------
# state-evolution sweep

_EVOLVE_KIND = {
    "mrc": "mrc_hard",
    "mrc_sd": "mrc_hard",
    "hard_sicmmse": "mrc_hard",
    "ssmi_mrc": "mrc_hard",
    "soft_sicmmse": "soft",
}


def evolve_point(cfg: SimConfig, kind: str, snr_db: float, point_idx: int = 0):
    """State-evolution trace averaged over evolve_chans channel draws."""
    params = cfg.params
    const = make_constellation(cfg.qam)
    sigma_z2 = const.power * 10.0 ** (-snr_db / 10.0)
    sigma_dg2 = (
        0.0
        if cfg.pilot_mode == "perfect_csi"
        else 10.0 ** (-cfg.snr_pilot_db / 10.0)
    )
    traces = []
    for c in range(cfg.evolve_chans):
        rng = _frame_rng(cfg, point_idx, c, _ROLE_CHANNEL)
        ch = sample_channel(cfg.profile, params, rng)
        traces.append(
            analysis.state_evolution(ch, sigma_dg2, const, kind, sigma_z2)
        )
    n_iter = traces[0].ber.shape[0]
    rows = []
    for i in range(n_iter):
        sinr_mean = float(np.mean([t.sinr_mean[i] for t in traces]))
        ser = float(np.mean([t.ser[i] for t in traces]))
        mse = float(np.mean([t.mse[i] for t in traces]))
        ber = float(np.mean([t.ber[i] for t in traces]))
        rows.append((i + 1, 10.0 * np.log10(sinr_mean), ser, mse, ber))
    return rows


# ---------------------------------------------------------------------------
# estimation-error statistics

def est_stats_point(cfg: SimConfig, snr_db: float, point_idx: int = 0):
    """Empirical vs predicted estimation-error variances (DD and time domain)."""
    params = cfg.params
    const = make_constellation(cfg.qam)
    sigma_z2 = const.power * 10.0 ** (-snr_db / 10.0)
    amp = pilot_amplitude_for_snr(cfg.snr_pilot_db, sigma_z2, params)
    pcfg = PilotConfig(amplitude=amp, max_delay=params.max_delay)
    data = np.zeros(pcfg.data_cell_count(params), dtype=np.complex128)
    dh_acc = 0.0
    dg_acc = 0.0
    n_cells = 0
    n_gcells = 0
    half = params.n_doppler // 2
    for t in range(cfg.est_trials):
        rng = _frame_rng(cfg, point_idx, t, _ROLE_FRAME)
        ch = sample_channel(cfg.profile, params, rng)
        grid = embed_pilot(data, pcfg, params)
        received = apply_channel(ch, dd_to_time(grid), float(np.sqrt(sigma_z2)), rng)
        est = estimate_channel(time_to_dd(received), pcfg, sigma_z2=sigma_z2)
        true_taps = np.zeros_like(est.taps)
        for pth in ch.paths:
            true_taps[pth.delay, pth.doppler + half] += pth.gain
        dh = est.taps - true_taps
        dh_acc += float(np.sum(np.abs(dh) ** 2))
        n_cells += dh.size
        dg = est.gains - ch.gain_table()
        dg_acc += float(np.sum(np.abs(dg[:, ::64]) ** 2))
        n_gcells += dg[:, ::64].size
    var_dh_theory = sigma_z2 / pcfg.dd_power
    var_dg_theory = sigma_z2 * params.n_doppler / pcfg.dd_power
    return (
        cfg.est_trials,
        dh_acc / n_cells,
        var_dh_theory,
        dg_acc / n_gcells,
        var_dg_theory,
    )


# ---------------------------------------------------------------------------
# sweep driver


def run_sweep(cfg: SimConfig, mode: str = "ber", out=None) -> str:
    """Iterate the SNR grid (x detector list) and emit CSV text.

    out, when given, is a writable text stream; rows are flushed as they are
    produced so long runs can be monitored.
    """
    lines = []

    def emit(line):
        lines.append(line)
        if out is not None:
            out.write(line + "\n")
            out.flush()

    if mode == "ber":
        emit(BER_HEADER)
        executor = None
        if cfg.workers > 1:
            executor = ProcessPoolExecutor(max_workers=cfg.workers)
        try:
            for pi, snr in enumerate(cfg.snr_db):
                for kind in cfg.detectors:
                    rec = run_ber_point(cfg, kind, snr, pi, executor)
                    emit(rec.csv_row())
        finally:
            if executor is not None:
                executor.shutdown()
    elif mode == "sinr":
        emit(SINR_HEADER)
        for pi, snr in enumerate(cfg.snr_db):
            for kind in cfg.detectors:
                for it, sim_db, th_db in sinr_point(cfg, kind, snr, pi):
                    emit(f"{snr:g},{kind},{it},{sim_db:.10g},{th_db:.10g}")
    elif mode == "evolve":
        emit(EVOLVE_HEADER)
        for pi, snr in enumerate(cfg.snr_db):
            seen = []
            for det in cfg.detectors:
                kind = _EVOLVE_KIND[det]
                if kind in seen:
                    continue
                seen.append(kind)
                for it, sinr_db, ser, mse, ber in evolve_point(cfg, kind, snr, pi):
                    emit(
                        f"{snr:g},{kind},{it},{sinr_db:.10g},{ser:.10g},"
                        f"{mse:.10g},{ber:.10g}"
                    )
    elif mode == "est-stats":
        emit(EST_HEADER)
        for pi, snr in enumerate(cfg.snr_db):
            trials, dh_e, dh_t, dg_e, dg_t = est_stats_point(cfg, snr, pi)
            emit(
                f"{snr:g},{cfg.snr_pilot_db:g},{trials},{dh_e:.10g},{dh_t:.10g},"
                f"{dg_e:.10g},{dg_t:.10g}"
            )
    else:
        raise ValueError(f"unknown sweep mode {mode!r}")
    return "\n".join(lines) + "\n"
