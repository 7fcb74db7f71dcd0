"""Closed-form post-equalization SINR, its upper bound, empirical SINR/MSE
extraction, and state-evolution BER prediction.

All SINR expressions are conditional on one channel realization. The MRC form
(which also covers hard-cancellation MMSE from the second iteration onward)
averages over symbol errors of known variance and over the dense Gaussian
channel-estimation error; the soft-cancellation form takes the filter as
given and holds only under perfect channel knowledge.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import erfc

from .channel import DiscreteChannel
from .modem import Constellation

__all__ = [
    "ErrorState",
    "SinrBreakdown",
    "EvolutionTrace",
    "ChannelMoments",
    "channel_moments",
    "sinr_mrc",
    "sinr_mrc_profile",
    "sinr_soft",
    "sinr_soft_profile",
    "soft_filters_uniform",
    "sinr_upper_bound",
    "mrc_sd_sinr_bound",
    "ser_union_bound",
    "state_evolution",
    "measure_mse",
    "measure_sinr",
    "decompose_equalized",
]

SINR_CAP_DB = 300.0


@dataclass(frozen=True)
class ErrorState:
    """Variance inputs to the SINR formulas.

    sigma_e2_cur / sigma_e2_prev: symbol-error variances of the estimates fed
    back in the current and previous iteration. sigma_dg2 is the per-sample
    time-domain channel-error variance.
    """

    sigma_e2_cur: float
    sigma_e2_prev: float
    sigma_dg2: float = 0.0
    power: float = 1.0
    sigma_z2: float = 0.0

    def __post_init__(self):
        for name in ("sigma_e2_cur", "sigma_e2_prev", "sigma_dg2", "sigma_z2"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if max(self.sigma_e2_cur, self.sigma_e2_prev) > self.power * (1 + 1e-9):
            raise ValueError("symbol-error variance cannot exceed the symbol power")


@dataclass
class SinrBreakdown:
    """Signal and residual-interference-plus-noise powers for one symbol."""

    signal_power: float
    ripn_power: float
    terms: dict

    @property
    def sinr(self) -> float:
        return self.signal_power / self.ripn_power

    @property
    def sinr_db(self) -> float:
        return 10.0 * np.log10(self.sinr)


@dataclass
class EvolutionTrace:
    """Per-iteration state-evolution quantities (fixed 20-step horizon)."""

    sinr_mean: np.ndarray
    ser: np.ndarray
    mse: np.ndarray
    ber: np.ndarray

    @property
    def converged_ber(self) -> float:
        return float(self.ber[-1])


@dataclass
class ChannelMoments:
    """Per-symbol structural sums of one realization's spreading vectors.

    With g_q the own spreading vector and g_{q,dl} the offset-dl truncated
    spreading vector (true channel), the fields hold, for every q:

    energy        = ||g_q||^2
    cross_neg/pos = sum over dl<0 / dl>0 of |g_q^H g_{q,dl}|^2
    branch_neg/pos= sum over dl<0 / dl>0 of ||g_{q,dl}||^2
    mask_neg/pos  = sum over dl<0 / dl>0 of sum_l |g_q[l]|^2 [l-dl in 0..l_max]
    """

    l_max: int
    energy: np.ndarray
    cross_neg: np.ndarray
    cross_pos: np.ndarray
    branch_neg: np.ndarray
    branch_pos: np.ndarray
    mask_neg: np.ndarray
    mask_pos: np.ndarray

    @property
    def pair_count_one_side(self) -> int:
        """sum over dl>0 of #{l: l-dl in [0, l_max]} (same for dl<0)."""
        return self.l_max * (self.l_max + 1) // 2


def _own_vectors(table: np.ndarray, mn: int) -> np.ndarray:
    """own[l, q] = g[l, (q+l) mod MN] for l = 0..l_max."""
    lm1 = table.shape[0]
    own = np.empty_like(table)
    for l in range(lm1):
        own[l] = np.roll(table[l], -l)
    return own


def channel_moments(ch: DiscreteChannel) -> ChannelMoments:
    """Precompute the per-q sums the closed-form SINR expressions consume."""
    table = ch.gain_table()
    mn = ch.params.frame_len
    lm = ch.l_max
    own = _own_vectors(table, mn)
    abs_own2 = np.abs(own) ** 2
    energy = abs_own2.sum(axis=0)

    cross = {s: np.zeros(mn) for s in (-1, 1)}
    branch = {s: np.zeros(mn) for s in (-1, 1)}
    mask = {s: np.zeros(mn) for s in (-1, 1)}
    for dl in range(-lm, lm + 1):
        if dl == 0:
            continue
        side = 1 if dl > 0 else -1
        lo, hi = max(0, dl), min(lm, lm + dl)
        rows = np.arange(lo, hi + 1)
        c_acc = np.zeros(mn, dtype=np.complex128)
        for l in rows:
            vec = np.roll(table[l - dl], -l)  # g_{q,dl}[l] over q
            c_acc += np.conj(own[l]) * vec
            branch[side] += np.abs(vec) ** 2
            mask[side] += abs_own2[l]
        cross[side] += np.abs(c_acc) ** 2
    return ChannelMoments(
        l_max=lm,
        energy=energy,
        cross_neg=cross[-1],
        cross_pos=cross[1],
        branch_neg=branch[-1],
        branch_pos=branch[1],
        mask_neg=mask[-1],
        mask_pos=mask[1],
    )


def _mrc_terms(mom: ChannelMoments, errs: ErrorState):
    """Vectorized signal/RIPN powers over all q (MRC closed form)."""
    lm = mom.l_max
    lm1 = lm + 1
    quart = lm * lm + 3 * lm + 2  # (l_max+1)(l_max+2)
    pt, dg2, z2 = errs.power, errs.sigma_dg2, errs.sigma_z2
    se_c, se_p = errs.sigma_e2_cur, errs.sigma_e2_prev
    a = mom.energy

    signal = pt * (a**2 + 2 * lm1 * dg2 * a + 2 * dg2 * a + quart * dg2**2)

    npairs = mom.pair_count_one_side
    t1 = (
        se_c * mom.cross_neg
        + se_p * mom.cross_pos
        + dg2 * (se_c * mom.mask_neg + se_p * mom.mask_pos)
        + pt * dg2 * (mom.mask_neg + mom.mask_pos)
        + z2 * a
    )
    t2 = (
        lm1 * dg2 * z2
        + dg2 * (se_c * mom.branch_neg + se_p * mom.branch_pos)
        + dg2**2 * npairs * (se_c + se_p)
        + pt * dg2**2 * 2 * npairs
    ) * np.ones_like(a)
    t3 = pt * dg2 * a
    t4 = pt * quart * dg2**2 * np.ones_like(a)
    return signal, t1, t2, t3, t4


def sinr_mrc(ch: DiscreteChannel, errs: ErrorState, q: int) -> SinrBreakdown:
    """Closed-form post-equalization SINR of MRC at symbol q.

    Also the SINR of hard-cancellation MMSE from the second iteration onward
    (the two outputs differ only by a positive scale).
    """
    mom = channel_moments(ch)
    signal, t1, t2, t3, t4 = _mrc_terms(mom, errs)
    return SinrBreakdown(
        signal_power=float(signal[q]),
        ripn_power=float(t1[q] + t2[q] + t3[q] + t4[q]),
        terms={
            "gz": float(t1[q]),
            "dgz": float(t2[q]),
            "gdg": float(t3[q]),
            "dgdg": float(t4[q]),
        },
    )


def sinr_mrc_profile(
    ch: DiscreteChannel, errs: ErrorState, mom: ChannelMoments | None = None
) -> np.ndarray:
    """Linear SINR for every symbol index (vectorized MRC closed form)."""
    if mom is None:
        mom = channel_moments(ch)
    signal, t1, t2, t3, t4 = _mrc_terms(mom, errs)
    return signal / (t1 + t2 + t3 + t4)


def sinr_upper_bound(
    ch: DiscreteChannel, sigma_dg2: float, q: int, sigma_z2: float, power: float = 1.0
) -> float:
    """SINR under ideal cancellation (both symbol-error variances zero).

    Shared bound for MRC and both MMSE variants.
    """
    errs = ErrorState(0.0, 0.0, sigma_dg2, power, sigma_z2)
    return sinr_mrc(ch, errs, q).sinr


def _spreading_stack(table: np.ndarray, lm: int, q_idx: np.ndarray) -> np.ndarray:
    """stack[i, l, c] = g[l-(c-lm), (q_i+l) mod MN], zeros off the valid band."""
    mn = table.shape[1]
    rows = np.arange(lm + 1)
    cols = np.arange(2 * lm + 1)
    rprime = rows[:, None] - (cols[None, :] - lm)
    valid = (rprime >= 0) & (rprime <= lm)
    idx = (q_idx[:, None] + rows[None, :]) % mn  # (nq, rows)
    gather = table[:, idx]  # (rows_src, nq, rows)
    # out[l, c, i] = gather[rprime[l, c], i, l], then zero the invalid band
    stack = gather[np.clip(rprime, 0, lm), :, rows[:, None]]
    stack = stack * valid[:, :, None]
    return stack.transpose(2, 0, 1)


def sinr_soft(
    ch: DiscreteChannel, w_q: np.ndarray, errs: ErrorState, q: int
) -> SinrBreakdown:
    """Post-equalization SINR of soft-cancellation MMSE with a given filter.

    Valid only under perfect channel knowledge; a nonzero sigma_dg2 in the
    error state is rejected.
    """
    if errs.sigma_dg2 != 0.0:
        raise ValueError("soft-cancellation SINR is only defined for exact CSI")
    table = ch.gain_table()
    lm = ch.l_max
    stack = _spreading_stack(table, lm, np.asarray([q]))[0]  # (rows, cols)
    w = np.asarray(w_q, dtype=np.complex128)
    g_own = stack[:, lm]
    proj = w @ stack  # w g_{q,dl} for every offset
    proj2 = np.abs(proj) ** 2
    signal = errs.power * abs(w @ g_own) ** 2
    ripn = (
        errs.sigma_z2 * float(np.vdot(w, w).real)
        + errs.sigma_e2_cur * float(proj2[:lm].sum())
        + errs.sigma_e2_prev * float(proj2[lm + 1 :].sum())
    )
    return SinrBreakdown(
        signal_power=float(signal),
        ripn_power=float(ripn),
        terms={
            "noise": errs.sigma_z2 * float(np.vdot(w, w).real),
            "isi_cur": errs.sigma_e2_cur * float(proj2[:lm].sum()),
            "isi_prev": errs.sigma_e2_prev * float(proj2[lm + 1 :].sum()),
        },
    )


def soft_filters_uniform(
    ch: DiscreteChannel,
    off_var: float,
    sigma_z2: float,
    power: float = 1.0,
    q_idx: np.ndarray | None = None,
    chunk: int = 2048,
):
    """Soft MMSE filters for every q with one shared interferer variance.

    Returns (w, mu) with w of shape (nq, l_max+1). The covariance uses
    off_var on every interferer column and the full symbol power on the own
    column, the mean-field choice used by the state evolution.
    """
    table = ch.gain_table()
    lm = ch.l_max
    mn = ch.params.frame_len
    if q_idx is None:
        q_idx = np.arange(mn)
    v = np.full(2 * lm + 1, off_var)
    v[lm] = power
    w_out = np.empty((q_idx.shape[0], lm + 1), dtype=np.complex128)
    mu_out = np.empty(q_idx.shape[0])
    for start in range(0, q_idx.shape[0], chunk):
        sel = q_idx[start : start + chunk]
        stack = _spreading_stack(table, lm, sel)
        a = np.einsum("njc,c,nkc->njk", stack, v, np.conj(stack))
        a[:, np.arange(lm + 1), np.arange(lm + 1)] += sigma_z2
        g_own = stack[:, :, lm]
        y = np.linalg.solve(a, g_own[:, :, None])[:, :, 0]
        w_out[start : start + len(sel)] = np.conj(y)
        mu_out[start : start + len(sel)] = np.einsum(
            "nj,nj->n", np.conj(y), g_own
        ).real
    return w_out, mu_out


def sinr_soft_profile(
    ch: DiscreteChannel,
    errs: ErrorState,
    off_var: float | None = None,
    chunk: int = 2048,
) -> np.ndarray:
    """Per-q soft-cancellation SINR with uniform-variance filters."""
    if errs.sigma_dg2 != 0.0:
        raise ValueError("soft-cancellation SINR is only defined for exact CSI")
    if off_var is None:
        off_var = errs.sigma_e2_prev
    table = ch.gain_table()
    lm = ch.l_max
    mn = ch.params.frame_len
    v = np.full(2 * lm + 1, off_var)
    v[lm] = errs.power
    out = np.empty(mn)
    for start in range(0, mn, chunk):
        sel = np.arange(start, min(start + chunk, mn))
        stack = _spreading_stack(table, lm, sel)
        a = np.einsum("njc,c,nkc->njk", stack, v, np.conj(stack))
        a[:, np.arange(lm + 1), np.arange(lm + 1)] += errs.sigma_z2
        g_own = stack[:, :, lm]
        y = np.linalg.solve(a, g_own[:, :, None])[:, :, 0]
        w = np.conj(y)
        proj2 = np.abs(np.einsum("nj,njc->nc", w, stack)) ** 2
        signal = errs.power * proj2[:, lm]
        ripn = (
            errs.sigma_z2 * np.einsum("nj,nj->n", w, np.conj(w)).real
            + errs.sigma_e2_cur * proj2[:, :lm].sum(axis=1)
            + errs.sigma_e2_prev * proj2[:, lm + 1 :].sum(axis=1)
        )
        out[sel] = signal / ripn
    return out


def mrc_sd_sinr_bound(
    ch: DiscreteChannel, delta_d: float, q: int, sigma_z2: float, power: float = 1.0
) -> float:
    """Asymptotic SINR bound of the dithered-slicer MRC detector.

    Treats the dither (per-axis variance delta_d^2/3) as the only symbol
    error and ignores channel estimation error.
    """
    mom = channel_moments(ch)
    sigma_d2 = delta_d**2 / 3.0
    eps2 = sigma_d2 * (mom.cross_neg[q] + mom.cross_pos[q])
    a = mom.energy[q]
    return power * a**2 / (eps2 + sigma_z2 * a)


def ser_union_bound(sinr_mean: float, constellation: Constellation) -> float:
    """Union-bound symbol error rate at the given mean SINR, clipped to [0, 1]."""
    if sinr_mean < 0:
        raise ValueError("SINR must be non-negative")
    a = constellation.order
    arg = np.sqrt(sinr_mean * constellation.d_min**2 / (2.0 * constellation.power))
    q_val = 0.5 * erfc(arg / np.sqrt(2.0))
    return float(min((a - 1) * q_val, 1.0))


def state_evolution(
    ch: DiscreteChannel,
    sigma_dg2: float,
    constellation: Constellation,
    kind: str,
    sigma_z2: float,
    n_iter: int = 20,
) -> EvolutionTrace:
    """Fixed-point recursion variance -> SINR -> SER -> variance.

    kind 'mrc_hard' uses the MRC closed form (valid for MRC and for
    hard-cancellation MMSE); kind 'soft' rebuilds uniform-variance soft
    filters each iteration and requires sigma_dg2 = 0. Both error-variance
    slots are fed the previous iteration's mean-square error.
    """
    if kind not in ("mrc_hard", "soft"):
        raise ValueError(f"unknown state-evolution kind {kind!r}")
    if kind == "soft" and sigma_dg2 != 0.0:
        raise ValueError("soft-cancellation evolution requires exact CSI")
    power = constellation.power
    mom = channel_moments(ch) if kind == "mrc_hard" else None
    var = power
    sinr_means, sers, mses, bers = [], [], [], []
    bits = constellation.bits_per_symbol
    for _ in range(n_iter):
        errs = ErrorState(var, var, sigma_dg2, power, sigma_z2)
        if kind == "mrc_hard":
            profile = sinr_mrc_profile(ch, errs, mom)
        else:
            profile = sinr_soft_profile(ch, errs, off_var=var)
        with np.errstate(divide="ignore"):
            sinr_mean = float(np.mean(profile))
        ser = ser_union_bound(sinr_mean, constellation)
        mse = min(constellation.d_min**2 * ser, power)
        ber = ser / bits
        sinr_means.append(sinr_mean)
        sers.append(ser)
        mses.append(mse)
        bers.append(ber)
        var = mse
    return EvolutionTrace(
        sinr_mean=np.asarray(sinr_means),
        ser=np.asarray(sers),
        mse=np.asarray(mses),
        ber=np.asarray(bers),
    )


def measure_mse(shat: np.ndarray, s: np.ndarray) -> float:
    """Mean squared symbol-estimate error."""
    shat = np.asarray(shat)
    s = np.asarray(s)
    if shat.shape != s.shape:
        raise ValueError("estimate and truth lengths differ")
    return float(np.mean(np.abs(shat - s) ** 2))


def decompose_equalized(
    equalized: np.ndarray, normalizer: np.ndarray, truth: np.ndarray
):
    """Split equalized outputs into signal and RIPN components.

    The engine's normalized output is s_tilde = (psi + eta) / v with
    psi = v * s; hence psi = normalizer * truth and
    eta = normalizer * (equalized - truth).
    """
    psi = normalizer * truth
    eta = normalizer * equalized - psi
    return psi, eta


def measure_sinr(
    psi: np.ndarray, eta: np.ndarray, cap_db: float = SINR_CAP_DB
) -> float:
    """Empirical mean SINR from per-symbol signal/RIPN samples.

    Inputs are (n_obs, MN) or (MN,); per-symbol sample powers are averaged
    over observations, ratioed per symbol, then averaged over symbols. The
    reciprocal of an n-sample mean of Gaussian powers is biased by n/(n-1),
    so the ratio carries the matching (n-1)/n correction. An infinite ratio
    is reported as the cap.
    """
    psi = np.atleast_2d(np.asarray(psi))
    eta = np.atleast_2d(np.asarray(eta))
    sig = np.mean(np.abs(psi) ** 2, axis=0)
    rip = np.mean(np.abs(eta) ** 2, axis=0)
    n = psi.shape[0]
    return _sinr_from_powers(sig, rip, n, cap_db)


def _sinr_from_powers(sig, rip, n_obs, cap_db: float = SINR_CAP_DB) -> float:
    correction = (n_obs - 1) / n_obs if n_obs >= 2 else 1.0
    cap = 10.0 ** (cap_db / 10.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(rip > 0, correction * sig / np.maximum(rip, 1e-300), cap)
    return float(np.mean(np.minimum(ratio, cap)))
