"""Discrete doubly-selective channel: sampling, tap gains, and oracles.

A channel realization is a set of on-grid paths (delay index, Doppler index,
complex gain). The production receive path applies the channel sample by
sample; a dense matrix builder and a delay-Doppler-domain reference output are
kept as independent test oracles.
"""

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .modem import DDGrid, ModemParams, TimeSequence

__all__ = [
    "DDPath",
    "ChannelProfile",
    "DiscreteChannel",
    "SubChannel",
    "eva_profile",
    "sample_channel",
    "apply_channel",
    "full_matrix",
    "subchannel",
    "dd_reference_output",
    "serialize_paths",
    "deserialize_paths",
]

# 3GPP Extended Vehicular A power delay profile
EVA_DELAYS_NS = (0.0, 30.0, 150.0, 310.0, 370.0, 710.0, 1090.0, 1730.0, 2510.0)
EVA_POWERS_DB = (0.0, -1.5, -1.4, -3.6, -0.6, -9.1, -7.0, -12.0, -16.9)


@dataclass(frozen=True)
class DDPath:
    """One resolvable path with integer delay/Doppler taps and a complex gain."""

    delay: int
    doppler: int
    gain: complex


@dataclass(frozen=True)
class ChannelProfile:
    """Average power per integer delay tap, plus the Doppler spread.

    Powers are linear and normalized to unit sum; duplicate delay entries are
    allowed and kept as separate paths.
    """

    delays: tuple
    powers: tuple
    k_max: int
    seed: int | None = None

    def __post_init__(self):
        if len(self.delays) == 0:
            raise ValueError("channel profile must contain at least one tap")
        if len(self.delays) != len(self.powers):
            raise ValueError("delay and power lists must have equal length")
        if any(p <= 0 for p in self.powers):
            raise ValueError("tap powers must be positive")
        if self.k_max < 0:
            raise ValueError("k_max must be non-negative")
        total = float(sum(self.powers))
        object.__setattr__(self, "powers", tuple(p / total for p in self.powers))
        object.__setattr__(self, "delays", tuple(int(d) for d in self.delays))

    @property
    def max_delay(self) -> int:
        return max(self.delays)


def eva_profile(delay_res: float, k_max: int, max_tap: int | None = None) -> ChannelProfile:
    """EVA profile sampled at the given delay resolution (seconds per tap).

    max_tap, when given, drops taps whose integer delay exceeds it (the
    desk-scale preset truncates the profile this way).
    """
    delays = [round(d * 1e-9 / delay_res) for d in EVA_DELAYS_NS]
    powers = [10.0 ** (p / 10.0) for p in EVA_POWERS_DB]
    if max_tap is not None:
        kept = [(d, p) for d, p in zip(delays, powers) if d <= max_tap]
        delays = [d for d, _ in kept]
        powers = [p for _, p in kept]
    return ChannelProfile(delays=tuple(delays), powers=tuple(powers), k_max=k_max)


class DiscreteChannel:
    """Immutable set of on-grid paths plus cached per-tap time-varying gains."""

    def __init__(self, paths: Sequence[DDPath], l_max: int, k_max: int, params: ModemParams):
        if any(p.delay < 0 or p.delay > l_max for p in paths):
            raise ValueError("path delay outside [0, l_max]")
        if any(abs(p.doppler) > k_max for p in paths):
            raise ValueError("path Doppler outside [-k_max, k_max]")
        self.paths = tuple(paths)
        self.l_max = int(l_max)
        self.k_max = int(k_max)
        self.params = params
        self.support = tuple(sorted({p.delay for p in paths}))
        self._table = None

    def time_gain(self, l: int, q: int) -> complex:
        """Tap gain g[l, q]; zero when no path sits at delay l."""
        mn = self.params.frame_len
        acc = 0.0 + 0.0j
        for p in self.paths:
            if p.delay == l:
                acc += p.gain * np.exp(2j * np.pi * p.doppler * (q - l) / mn)
        return acc

    def gain_table(self) -> np.ndarray:
        """Dense (l_max+1, MN) table of g[l, q]; rows off the support are zero."""
        if self._table is None:
            mn = self.params.frame_len
            q = np.arange(mn)
            table = np.zeros((self.l_max + 1, mn), dtype=np.complex128)
            for p in self.paths:
                table[p.delay] += p.gain * np.exp(
                    2j * np.pi * p.doppler * (q - p.delay) / mn
                )
            self._table = table
        return self._table

    def total_power(self) -> float:
        return float(sum(abs(p.gain) ** 2 for p in self.paths))


def sample_channel(
    profile: ChannelProfile, params: ModemParams, rng: np.random.Generator
) -> DiscreteChannel:
    """Draw one channel realization: Rayleigh tap gains, Jakes-law Doppler taps.

    Gains are circularly-symmetric complex Gaussian with the profile's tap
    power; each path's Doppler index is round(k_max*cos(theta)) with theta
    uniform, drawn independently per path.
    """
    n = len(profile.delays)
    gains = np.sqrt(np.array(profile.powers) / 2.0) * (
        rng.standard_normal(n) + 1j * rng.standard_normal(n)
    )
    theta = rng.uniform(0.0, 2.0 * np.pi, size=n)
    dopplers = np.rint(profile.k_max * np.cos(theta)).astype(int)
    paths = [
        DDPath(delay=d, doppler=int(k), gain=complex(g))
        for d, k, g in zip(profile.delays, dopplers, gains)
    ]
    l_max = max(profile.max_delay, params.max_delay)
    return DiscreteChannel(paths, l_max=l_max, k_max=profile.k_max, params=params)


def apply_channel(
    ch: DiscreteChannel,
    seq: TimeSequence,
    sigma_z: float,
    rng: np.random.Generator | None = None,
) -> TimeSequence:
    """Pass a frame through the channel with frame-wise cyclic extension.

    r[q] = sum_l g[l,q] * s[(q-l) mod MN] + z[q] with z ~ CN(0, sigma_z^2).
    """
    if seq.params.frame_len != ch.params.frame_len:
        raise ValueError("sequence and channel frame sizes differ")
    if sigma_z < 0:
        raise ValueError("noise std must be non-negative")
    s = seq.samples
    table = ch.gain_table()
    r = np.zeros_like(s)
    for l in ch.support:
        r += table[l] * np.roll(s, l)
    if sigma_z > 0:
        if rng is None:
            raise ValueError("rng required when sigma_z > 0")
        mn = s.shape[0]
        r = r + (sigma_z / np.sqrt(2.0)) * (
            rng.standard_normal(mn) + 1j * rng.standard_normal(mn)
        )
    return TimeSequence(r, seq.params)


def full_matrix(ch: DiscreteChannel, max_size: int = 4096) -> np.ndarray:
    """Dense MN x MN channel matrix G[q, (q-l) mod MN] = g[l, q].

    Test oracle only: refuses frames larger than max_size samples.
    """
    mn = ch.params.frame_len
    if mn > max_size:
        raise ValueError(
            f"dense oracle refused: frame of {mn} samples exceeds cap {max_size}"
        )
    table = ch.gain_table()
    mat = np.zeros((mn, mn), dtype=np.complex128)
    q = np.arange(mn)
    for l in ch.support:
        mat[q, (q - l) % mn] = table[l]
    return mat


@dataclass
class SubChannel:
    """The (l_max+1) x (2*l_max+1) sub-channel matrix around one time index.

    Column c holds the truncated spreading vector for offset
    offsets[c] = c - l_max; the middle column is the spreading vector of the
    symbol at time index q itself.
    """

    matrix: np.ndarray
    q: int
    l_max: int

    @property
    def offsets(self) -> np.ndarray:
        return np.arange(-self.l_max, self.l_max + 1)

    def g_vector(self, dl: int) -> np.ndarray:
        """Truncated spreading vector for the interferer at offset dl."""
        return self.matrix[:, dl + self.l_max]

    @property
    def spreading_vector(self) -> np.ndarray:
        return self.matrix[:, self.l_max]


def subchannel(ch: DiscreteChannel, q: int) -> SubChannel:
    """Assemble the sub-input-output matrix for the symbol at time index q."""
    mn = ch.params.frame_len
    if not 0 <= q < mn:
        raise ValueError("time index out of range")
    table = ch.gain_table()
    lm = ch.l_max
    sup = set(ch.support)
    mat = np.zeros((lm + 1, 2 * lm + 1), dtype=np.complex128)
    for l in range(lm + 1):
        for c, dl in enumerate(range(-lm, lm + 1)):
            if (l - dl) in sup:
                mat[l, c] = table[l - dl, (q + l) % mn]
    return SubChannel(matrix=mat, q=q, l_max=lm)


def dd_reference_output(ch: DiscreteChannel, grid: DDGrid) -> DDGrid:
    """Noiseless DD-domain channel output, including the CP phase correction.

    Independent of the time-domain pipeline; used to validate it end to end.
    """
    p = grid.params
    m_ax = np.arange(p.n_delay)[:, None]
    n_ax = np.arange(p.n_doppler)[None, :]
    mn = p.frame_len
    out = np.zeros_like(grid.entries)
    for path in ch.paths:
        shifted = np.roll(grid.entries, (path.delay, path.doppler), axis=(0, 1))
        phase = np.exp(2j * np.pi * (m_ax - path.delay) * path.doppler / mn)
        cp_rows = m_ax < path.delay
        alpha = np.where(
            cp_rows,
            np.exp(-2j * np.pi * ((n_ax - path.doppler) % p.n_doppler) / p.n_doppler),
            1.0,
        )
        out += path.gain * phase * alpha * shifted
    return DDGrid(out, p)


def serialize_paths(ch: DiscreteChannel) -> str:
    """One path per line: `l k re(h) im(h)` (regression-fixture format)."""
    lines = [
        f"{p.delay} {p.doppler} {p.gain.real:.17g} {p.gain.imag:.17g}"
        for p in ch.paths
    ]
    return "\n".join(lines) + "\n"


def deserialize_paths(
    text: str,
    params: ModemParams,
    l_max: int | None = None,
    k_max: int | None = None,
) -> DiscreteChannel:
    """Parse the text format written by :func:`serialize_paths`."""
    paths = []
    for line in text.strip().splitlines():
        fields = line.split()
        if len(fields) != 4:
            raise ValueError(f"malformed path line: {line!r}")
        l, k = int(fields[0]), int(fields[1])
        paths.append(DDPath(delay=l, doppler=k, gain=float(fields[2]) + 1j * float(fields[3])))
    if not paths:
        raise ValueError("no paths in input")
    if l_max is None:
        l_max = max(params.max_delay, max(p.delay for p in paths))
    if k_max is None:
        k_max = max(abs(p.doppler) for p in paths)
    return DiscreteChannel(paths, l_max=l_max, k_max=k_max, params=params)
