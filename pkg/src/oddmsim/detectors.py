"""Iterative detectors over the sub-input-output relation.

Five detector kinds share one engine: maximum-ratio combining (mrc), MRC with
a subtractive-dither slicer (mrc_sd), hard and soft successive-cancellation
MMSE (hard_sicmmse, soft_sicmmse), and soft-initialized MRC (ssmi_mrc).

All of them follow the cross-domain cancellation schedule: delay rows are
processed one at a time, the N symbols of a row are equalized in parallel,
sliced in the DD domain, and the updated estimates are fed back into the
running residual immediately. The residual vector e = r - G_hat @ s_hat is
maintained incrementally; each symbol update touches only the received
samples its delay taps reach.
"""

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .modem import Constellation, DDGrid, TimeSequence
from .pilot import EstimatedChannel

__all__ = [
    "DetectorConfig",
    "SymbolState",
    "DetectionResult",
    "init_estimates",
    "stack_branches",
    "mrc_combine",
    "mmse_combine",
    "ml_slice",
    "dithered_ml_slice",
    "dd_posterior",
    "run_detector",
    "run_iteration",
]

KINDS = ("mrc", "mrc_sd", "hard_sicmmse", "soft_sicmmse", "ssmi_mrc")

# default dither bound ratio d_min / delta_d for mrc_sd
DITHER_RATIO = 9.4


@dataclass
class DetectorConfig:
    """Detector selection and iteration controls.

    delta_d defaults to d_min/9.4 (resolved against the constellation at run
    time); init_mode defaults to freq_mmse for the MRC family and zeros for
    the SIC-MMSE family.
    """

    kind: str
    n_ite: int = 10
    m_0: int = 0
    delta_d: float | None = None
    init_mode: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown detector kind {self.kind!r}")
        if self.n_ite < 1:
            raise ValueError("n_ite must be at least 1")
        if self.m_0 < 0:
            raise ValueError("m_0 must be non-negative")
        if self.init_mode not in (None, "zeros", "freq_mmse"):
            raise ValueError(f"unknown init mode {self.init_mode!r}")

    def resolved_init(self) -> str:
        if self.init_mode is not None:
            return self.init_mode
        return "freq_mmse" if self.kind in ("mrc", "mrc_sd") else "zeros"

    def resolved_delta(self, constellation: Constellation) -> float:
        delta = self.delta_d
        if delta is None:
            delta = constellation.d_min / DITHER_RATIO
        if not 0.0 < delta < constellation.d_min / 2.0:
            raise ValueError("dither bound must lie in (0, d_min/2)")
        return delta


@dataclass
class SymbolState:
    """Mutable per-frame detection state.

    The residual invariant resid == r - G_hat @ shat is maintained through
    every feedback update; row_var holds one error variance per delay row
    (the DD->time variance transform is row-constant).
    """

    r: np.ndarray
    est: EstimatedChannel
    shat: np.ndarray
    resid: np.ndarray
    row_var: np.ndarray
    frozen_rows: np.ndarray
    power: float
    iteration: int = 0

    def copy(self) -> "SymbolState":
        return SymbolState(
            r=self.r,
            est=self.est,
            shat=self.shat.copy(),
            resid=self.resid.copy(),
            row_var=self.row_var.copy(),
            frozen_rows=self.frozen_rows.copy(),
            power=self.power,
            iteration=self.iteration,
        )


@dataclass
class IterationRecord:
    """Per-iteration outputs collected by the engine."""

    decision_idx: np.ndarray  # (M, N) alphabet indices
    equalized: np.ndarray | None = None  # (MN,) pre-slicing outputs
    normalizer: np.ndarray | None = None  # (MN,) signal-component multipliers


@dataclass
class DetectionResult:
    """Hard decisions plus optional per-iteration traces."""

    decisions: DDGrid
    index_grid: np.ndarray
    iterations: int
    mse_trace: np.ndarray | None = None
    bit_error_trace: np.ndarray | None = None
    records: list = field(default_factory=list)


def _residual_from_scratch(r, est, shat):
    resid = r.copy()
    gains = est.gains
    for l in est.support:
        resid -= gains[l] * np.roll(shat, l)
    return resid


def _freq_mmse_equalize(r, est, sigma_z2, power):
    """Block-wise single-tap MMSE initializer in the time-frequency domain.

    Each multicarrier symbol (M samples) gets its own frequency response from
    the block-averaged tap gains; averaging over a whole frame instead would
    cancel every tap with a nonzero Doppler index exactly. The single-tap
    model ignores the within-block tap variation, so this initializer is
    deliberately coarse; bins where the response (and the regularizer)
    vanishes are treated as erased rather than amplified.
    """
    params = est.params
    m_count, n = params.n_delay, params.n_doppler
    blocks = r.reshape(n, m_count)
    per_block = est.gains.reshape(est.l_max + 1, n, m_count)
    gains_blocks = per_block.mean(axis=2)
    out = np.empty_like(blocks)
    for nd in range(n):
        taps = np.zeros(m_count, dtype=np.complex128)
        taps[: est.l_max + 1] = gains_blocks[:, nd]
        freq_resp = np.fft.fft(taps)
        spectrum = np.fft.fft(blocks[nd])
        denom = np.abs(freq_resp) ** 2 + sigma_z2 / power
        floor = 1e-9 * float(np.mean(np.abs(freq_resp) ** 2))
        with np.errstate(divide="ignore", invalid="ignore"):
            eq = np.where(denom > floor, np.conj(freq_resp) * spectrum / denom, 0.0)
        out[nd] = np.fft.ifft(eq)
    return out.reshape(-1)


def init_estimates(
    seq: TimeSequence,
    est: EstimatedChannel,
    mode: str,
    sigma_z2: float = 0.0,
    power: float = 1.0,
) -> SymbolState:
    """Build the starting state: zero priors, or the frequency-domain
    single-tap MMSE initializer (both carry an initial error variance of P_t).
    """
    if mode not in ("zeros", "freq_mmse"):
        raise ValueError(f"unknown init mode {mode!r}")
    params = est.params
    r = np.asarray(seq.samples, dtype=np.complex128)
    if mode == "zeros":
        shat = np.zeros_like(r)
        resid = r.copy()
    else:
        shat = _freq_mmse_equalize(r, est, sigma_z2, power)
        resid = _residual_from_scratch(r, est, shat)
    return SymbolState(
        r=r,
        est=est,
        shat=shat,
        resid=resid,
        row_var=np.full(params.n_delay, power),
        frozen_rows=np.zeros(params.n_delay, dtype=bool),
        power=power,
    )


def stack_branches(state: SymbolState, q: int) -> np.ndarray:
    """Channel-impaired branch vector for the symbol at time index q.

    Adds the symbol's own contribution back onto the running residual:
    r_tilde_q[l] = e[(q+l) mod MN] + g_hat_q[l] * s_hat[q] for l = 0..l_max.
    """
    est = state.est
    mn = est.params.frame_len
    ls = np.arange(est.l_max + 1)
    idx = (q + ls) % mn
    g_q = est.gains[ls, idx]
    return state.resid[idx] + g_q * state.shat[q]


def mrc_combine(r_tilde: np.ndarray, g_q: np.ndarray) -> complex:
    """Combine delay branches with weights g_q^H / (g_q^H g_q)."""
    energy = float(np.vdot(g_q, g_q).real)
    if energy == 0.0:
        raise ValueError("degenerate channel: all-zero spreading vector")
    return complex(np.vdot(g_q, r_tilde) / energy)


def mmse_combine(
    r_tilde: np.ndarray,
    sub_matrix: np.ndarray,
    v_diag: np.ndarray,
    sigma_z2: float,
    power: float = 1.0,
):
    """Reduced-dimension MMSE filter for one symbol.

    Returns (normalized estimate, mu, post-MMSE variance) where
    w = g_q^H (G_q V G_q^H + sigma_z^2 I)^{-1}, mu = w g_q, and the variance
    is P_t (1 - mu) / mu. The own-symbol column is the middle one.
    """
    v_diag = np.asarray(v_diag, dtype=np.float64)
    if np.any(v_diag < 0):
        raise ValueError("prior variances must be non-negative")
    center = sub_matrix.shape[1] // 2
    if v_diag[center] <= 0:
        raise ValueError("own-symbol prior variance must be positive")
    g_q = sub_matrix[:, center]
    a = (sub_matrix * v_diag) @ sub_matrix.conj().T
    a[np.diag_indices_from(a)] += sigma_z2
    y = np.linalg.solve(a, g_q)
    mu = float(np.vdot(y, g_q).real)
    s_tilde = complex(np.vdot(y, r_tilde) / mu)
    post_var = power * (1.0 - mu) / mu
    return s_tilde, mu, post_var


def ml_slice(value: complex, constellation: Constellation) -> complex:
    """Nearest alphabet point; ties resolve to the lowest index."""
    idx = constellation.nearest_index(np.asarray([value]))[0]
    return complex(constellation.points[idx])


def dithered_ml_slice(
    value: complex, constellation: Constellation, dither: complex
) -> complex:
    """Subtractively dithered slicer: slice (value + d), then subtract d.

    The output lies on a dither-shifted coset of the alphabet; feeding it
    back breaks the correlation between slicing errors and the slicer input.
    """
    idx = constellation.nearest_index(np.asarray([value + dither]))[0]
    return complex(constellation.points[idx] - dither)


def _posterior_batch(values: np.ndarray, var: float, constellation: Constellation):
    """Gaussian-likelihood posterior over the alphabet, for a shared variance."""
    points = constellation.points
    d2 = np.abs(values[:, None] - points[None, :]) ** 2
    if var < 1e-12:
        idx = np.argmin(d2, axis=1)
        return points[idx].copy(), np.zeros(values.shape[0])
    logp = -d2 / var
    logp -= logp.max(axis=1, keepdims=True)
    p = np.exp(logp)
    p /= p.sum(axis=1, keepdims=True)
    means = p @ points
    post_var = np.sum(p * np.abs(points[None, :] - means[:, None]) ** 2, axis=1)
    return means, post_var


def dd_posterior(value: complex, var: float, constellation: Constellation):
    """A-posteriori symbol mean and variance under constellation constraints."""
    if var <= 0:
        raise ValueError("posterior variance must be positive")
    means, post_var = _posterior_batch(np.asarray([value]), var, constellation)
    return complex(means[0]), float(post_var[0])


class _RowIndexCache:
    """Precomputed gather indices for one (row set, frame) geometry."""

    def __init__(self, est: EstimatedChannel):
        self.mn = est.params.frame_len
        self.n_delay = est.params.n_delay
        self.n_doppler = est.params.n_doppler
        lm = est.l_max
        self.lm = lm
        self.sup = np.asarray(est.support, dtype=np.int64)
        self.all_rows = np.arange(lm + 1, dtype=np.int64)
        # sub-channel source rows: entry (j, c) reads tap row j - (c - lm)
        j = self.all_rows[:, None]
        c = np.arange(2 * lm + 1, dtype=np.int64)[None, :]
        rprime = j - (c - lm)
        self.col_valid = (rprime >= 0) & (rprime <= lm)
        self.rprime = np.clip(rprime, 0, lm)
        self.offsets = np.arange(-lm, lm + 1, dtype=np.int64)


def _declare_row_vars(state, cache, m):
    """Interferer variance per sub-channel column for the symbol row m."""
    rows = (m + cache.offsets) % cache.n_delay
    v = state.row_var[rows].copy()
    v[cache.lm] = state.power  # own symbol carries full prior power
    return v


def _process_row_mrc(state, cache, m, q_vec):
    est = state.est
    idx = (q_vec[None, :] + cache.sup[:, None]) % cache.mn
    g_rows = est.gains[cache.sup[:, None], idx]
    branches = state.resid[idx] + g_rows * state.shat[q_vec][None, :]
    energy = np.sum(np.abs(g_rows) ** 2, axis=0)
    if np.any(energy == 0.0):
        raise ValueError("degenerate channel: all-zero spreading vector")
    s_tilde = np.sum(np.conj(g_rows) * branches, axis=0) / energy
    return s_tilde, energy, idx, g_rows


def _process_row_mmse(state, cache, m, q_vec, v_diag, sigma_z2):
    est = state.est
    idx = (q_vec[None, :] + cache.all_rows[:, None]) % cache.mn  # (rows, N)
    gather = est.gains[:, idx]  # gather[r', j, nd] = gains[r', (q_nd + j) mod MN]
    stack = gather[cache.rprime, cache.all_rows[:, None], :]  # (rows, cols, N)
    stack *= cache.col_valid[:, :, None]
    g_q = stack[:, cache.lm, :]  # own spreading vectors, (rows, N)
    branches = state.resid[idx] + g_q * state.shat[q_vec][None, :]
    stack_t = stack.transpose(2, 0, 1)  # (N, rows, cols)
    a = np.einsum("njc,c,nkc->njk", stack_t, v_diag, np.conj(stack_t))
    r_count = cache.all_rows.shape[0]
    a[:, np.arange(r_count), np.arange(r_count)] += sigma_z2
    g_own = stack_t[:, :, cache.lm]  # (N, rows)
    if sigma_z2 > 0:
        y = np.linalg.solve(a, g_own[:, :, None])[:, :, 0]
    else:
        # noiseless limit: the covariance can be rank-deficient once scheduled
        # variances reach zero; the limiting filter uses the pseudo-inverse
        y = np.einsum("njk,nk->nj", np.linalg.pinv(a, hermitian=True), g_own)
    mu = np.einsum("nj,nj->n", np.conj(y), g_own).real
    wr = np.einsum("nj,jn->n", np.conj(y), branches)
    s_tilde = wr / mu
    post_var = state.power * (1.0 - mu) / mu
    return s_tilde, mu, np.maximum(post_var, 0.0)


def _feedback(state, cache, m, q_vec, new_time):
    """Apply updated time-domain estimates and patch the running residual."""
    delta = new_time - state.shat[q_vec]
    state.shat[q_vec] = new_time
    idx = (q_vec[None, :] + cache.sup[:, None]) % cache.mn
    g_rows = state.est.gains[cache.sup[:, None], idx]
    state.resid[idx] -= g_rows * delta[None, :]


def run_iteration(
    state: SymbolState,
    combine: str,
    slicer: str,
    constellation: Constellation,
    sigma_z2: float,
    m_0: int = 0,
    dither: np.ndarray | None = None,
    collect: bool = False,
    cache: _RowIndexCache | None = None,
) -> IterationRecord:
    """One full sweep over the delay rows under the cancellation schedule.

    combine: 'mrc' | 'hard_scalar' | 'mmse'
    slicer : 'ml' | 'dither' | 'posterior'
    """
    if cache is None:
        cache = _RowIndexCache(state.est)
    params = state.est.params
    m_count, n = params.n_delay, params.n_doppler
    pts = constellation.points
    decision_idx = np.zeros((m_count, n), dtype=np.int64)
    equalized = np.full(cache.mn, np.nan, dtype=np.complex128) if collect else None
    normalizer = np.full(cache.mn, np.nan) if collect else None

    for dm in range(m_count):
        m = (m_0 + dm) % m_count
        if state.frozen_rows[m]:
            continue
        q_vec = np.arange(n, dtype=np.int64) * m_count + m

        post_var = None
        if combine == "mrc":
            s_tilde, norm, _, _ = _process_row_mrc(state, cache, m, q_vec)
        elif combine == "hard_scalar":
            # scalar-form MMSE filter, then /mu normalization; the two scale
            # factors cancel, so the normalized output coincides with MRC
            s_tilde, norm, _, _ = _process_row_mrc(state, cache, m, q_vec)
        elif combine == "mmse":
            v_diag = _declare_row_vars(state, cache, m)
            s_tilde, mu, post_var = _process_row_mmse(
                state, cache, m, q_vec, v_diag, sigma_z2
            )
            norm = mu
        else:
            raise ValueError(f"unknown combine mode {combine!r}")

        x_tilde = np.fft.fft(s_tilde, norm="ortho")
        nearest = constellation.nearest_index(x_tilde)

        if slicer == "ml":
            decision = nearest
            feedback_dd = pts[nearest]
        elif slicer == "dither":
            d = dither[m]
            decision = constellation.nearest_index(x_tilde + d)
            feedback_dd = pts[decision] - d
        elif slicer == "posterior":
            if post_var is None:
                raise ValueError("posterior slicing requires the mmse combiner")
            var_dd = float(np.mean(post_var))
            means, pvars = _posterior_batch(x_tilde, var_dd, constellation)
            decision = nearest
            feedback_dd = means
            state.row_var[m] = float(np.mean(pvars))
        else:
            raise ValueError(f"unknown slicer {slicer!r}")

        if combine == "mmse" and slicer != "posterior":
            # hard-decision cancellation: row treated as perfectly cancelled
            state.row_var[m] = 0.0

        new_time = np.fft.ifft(feedback_dd, norm="ortho")
        _feedback(state, cache, m, q_vec, new_time)
        decision_idx[m] = decision
        if collect:
            equalized[q_vec] = s_tilde
            normalizer[q_vec] = norm

    state.iteration += 1
    return IterationRecord(decision_idx, equalized, normalizer)


def _iteration_plan(cfg: DetectorConfig):
    """(combine, slicer) per iteration for each detector kind."""
    plan = []
    for i in range(cfg.n_ite):
        if cfg.kind == "mrc":
            plan.append(("mrc", "ml"))
        elif cfg.kind == "mrc_sd":
            plan.append(("mrc", "dither"))
        elif cfg.kind == "hard_sicmmse":
            plan.append(("mmse", "ml") if i == 0 else ("hard_scalar", "ml"))
        elif cfg.kind == "soft_sicmmse":
            plan.append(("mmse", "posterior"))
        elif cfg.kind == "ssmi_mrc":
            plan.append(("mmse", "posterior") if i == 0 else ("mrc", "ml"))
    return plan


def _apply_known_rows(state, known_rows, known_grid):
    """Pin pilot/guard rows to their known transmitted values."""
    params = state.est.params
    m_count, n = params.n_delay, params.n_doppler
    rows = np.flatnonzero(known_rows)
    if rows.size == 0:
        return
    known_time = np.fft.ifft(known_grid[rows, :], axis=1, norm="ortho")
    for j, m in enumerate(rows):
        state.shat[m::m_count] = known_time[j]
    state.frozen_rows[rows] = True
    state.row_var[rows] = 0.0
    state.resid[:] = _residual_from_scratch(state.r, state.est, state.shat)


def _count_bit_errors(constellation, dec_idx, true_idx, mask):
    xor = constellation.labels[dec_idx[mask]] ^ constellation.labels[true_idx[mask]]
    k = constellation.bits_per_symbol
    total = 0
    for b in range(k):
        total += int(np.count_nonzero((xor >> b) & 1))
    return total


_COMBINE_CODE = {"mrc": 0, "hard_scalar": 0, "mmse": 2}
_SLICER_CODE = {"ml": 0, "dither": 1, "posterior": 2}


def _run_plan_numpy(state, plan, constellation, sigma_z2, m_0, dither, collect):
    cache = _RowIndexCache(state.est)
    params = state.est.params
    n_ite = len(plan)
    decisions = np.zeros((n_ite, params.n_delay, params.n_doppler), dtype=np.int64)
    shat_snaps = np.empty((n_ite, params.frame_len), dtype=np.complex128)
    equalized = normalizer = None
    if collect:
        equalized = np.full((n_ite, params.frame_len), np.nan, dtype=np.complex128)
        normalizer = np.full((n_ite, params.frame_len), np.nan)
    for i, (combine, slicer) in enumerate(plan):
        rec = run_iteration(
            state,
            combine,
            slicer,
            constellation,
            sigma_z2,
            m_0=m_0,
            dither=dither[i] if dither is not None else None,
            collect=collect,
            cache=cache,
        )
        decisions[i] = rec.decision_idx
        shat_snaps[i] = state.shat
        if collect:
            equalized[i] = rec.equalized
            normalizer[i] = rec.normalizer
    return decisions, shat_snaps, equalized, normalizer


def _run_plan_numba(state, plan, constellation, sigma_z2, m_0, dither, collect):
    params = state.est.params
    est = state.est
    n_ite = len(plan)
    n = params.n_doppler
    combine_plan = np.array([_COMBINE_CODE[c] for c, _ in plan], dtype=np.int64)
    slicer_plan = np.array([_SLICER_CODE[s] for _, s in plan], dtype=np.int64)
    if dither is None:
        dither = np.zeros((n_ite, params.n_delay, n), dtype=np.complex128)
    idx = np.arange(n)
    fmat = np.exp(-2j * np.pi * np.outer(idx, idx) / n) / np.sqrt(n)
    decisions = np.zeros((n_ite, params.n_delay, n), dtype=np.int64)
    if collect:
        equalized = np.full((n_ite, params.frame_len), np.nan, dtype=np.complex128)
        normalizer = np.full((n_ite, params.frame_len), np.nan)
    else:
        equalized = np.zeros((1, 1), dtype=np.complex128)
        normalizer = np.zeros((1, 1))
    shat_snaps = np.empty((n_ite, params.frame_len), dtype=np.complex128)
    _kernels.detect_frame(
        state.r,
        est.gains,
        np.asarray(est.support, dtype=np.int64),
        params.n_delay,
        n,
        est.l_max,
        combine_plan,
        slicer_plan,
        m_0,
        sigma_z2,
        state.power,
        constellation.points,
        np.ascontiguousarray(dither),
        state.shat,
        state.row_var,
        state.frozen_rows,
        fmat,
        decisions,
        equalized,
        normalizer,
        collect,
        shat_snaps,
    )
    state.iteration += n_ite
    if not collect:
        equalized = normalizer = None
    return decisions, shat_snaps, equalized, normalizer


def run_detector(
    seq: TimeSequence,
    est: EstimatedChannel,
    cfg: DetectorConfig,
    constellation: Constellation,
    rng: np.random.Generator | None = None,
    *,
    sigma_z2: float = 0.0,
    known_rows: np.ndarray | None = None,
    known_grid: np.ndarray | None = None,
    truth: np.ndarray | None = None,
    true_indices: np.ndarray | None = None,
    data_mask: np.ndarray | None = None,
    collect_equalized: bool = False,
    backend: str = "auto",
) -> DetectionResult:
    """Detect one frame.

    Pilot/guard rows, when declared via known_rows/known_grid, are pinned to
    their transmitted values and excluded from estimation. Passing the true
    time sequence and/or true alphabet indices enables the per-iteration MSE
    and bit-error traces. backend 'auto' uses the compiled kernel whenever the
    noise variance is positive (the noiseless limit needs the pseudo-inverse
    fallback of the numpy path).
    """
    params = est.params
    if seq.params.frame_len != params.frame_len:
        raise ValueError("sequence and channel estimate sizes differ")
    if cfg.m_0 >= params.n_delay:
        raise ValueError("m_0 outside the delay axis")
    if backend not in ("auto", "numpy", "numba"):
        raise ValueError(f"unknown backend {backend!r}")
    power = constellation.power

    state = init_estimates(seq, est, cfg.resolved_init(), sigma_z2, power)
    if known_rows is not None:
        _apply_known_rows(state, known_rows, known_grid)
        if data_mask is None:
            data_mask = np.broadcast_to(
                ~np.asarray(known_rows, dtype=bool)[:, None],
                (params.n_delay, params.n_doppler),
            )

    dither = None
    if cfg.kind == "mrc_sd":
        delta = cfg.resolved_delta(constellation)
        if rng is None:
            raise ValueError("mrc_sd requires an rng for the dither stream")
        shape = (cfg.n_ite, params.n_delay, params.n_doppler)
        dither = rng.uniform(-delta, delta, shape) + 1j * rng.uniform(
            -delta, delta, shape
        )

    plan = _iteration_plan(cfg)
    use_numba = backend == "numba" or (
        backend == "auto" and _kernels.HAVE_NUMBA and sigma_z2 > 0
    )
    runner = _run_plan_numba if use_numba else _run_plan_numpy
    decisions_all, shat_snaps, equalized, normalizer = runner(
        state, plan, constellation, sigma_z2, cfg.m_0, dither, collect_equalized
    )

    mse_trace = None
    if truth is not None:
        mse_trace = np.mean(np.abs(shat_snaps - truth[None, :]) ** 2, axis=1)
    bit_trace = None
    if true_indices is not None:
        mask = (
            data_mask
            if data_mask is not None
            else np.ones_like(true_indices, dtype=bool)
        )
        bit_trace = np.array(
            [
                _count_bit_errors(constellation, decisions_all[i], true_indices, mask)
                for i in range(len(plan))
            ]
        )

    decision_idx = decisions_all[-1].copy()
    if known_rows is not None and known_grid is not None:
        rows = np.flatnonzero(known_rows)
        if rows.size:
            decision_idx[rows] = constellation.nearest_index(known_grid[rows, :])
    decisions = DDGrid(constellation.points[decision_idx], params)
    records = []
    if collect_equalized:
        records = [
            IterationRecord(decisions_all[i], equalized[i], normalizer[i])
            for i in range(len(plan))
        ]
    return DetectionResult(
        decisions=decisions,
        index_grid=decision_idx,
        iterations=cfg.n_ite,
        mse_trace=mse_trace,
        bit_error_trace=bit_trace,
        records=records,
    )
