"""Complex baseband primitives: DFT, preamble window, training symbols,
weighted symbol synthesis and rational resampling.

Sequences are plain numpy ``complex128`` arrays. Subcarrier ``k`` (1-based,
``k = 1..52``) sits on bin ``k`` of a 64-point DFT at 20 Msps.
"""

from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np

from .errors import InvalidArgument

N_SUBCARRIERS = 52


@dataclass(frozen=True)
class PreambleTiming:
    """Timing constants of the 20 MHz legacy preamble."""

    delta_f_hz: float = 312_500.0
    t_tr_s: float = 100e-9
    symbol_period_s: float = 8e-6
    t_gi2_s: float = 1.6e-6
    sample_rate_hz: float = 20e6
    n_subcarriers: int = N_SUBCARRIERS
    preamble_len: int = 320

    def __post_init__(self):
        if not np.isclose(self.delta_f_hz * 64, self.sample_rate_hz):
            raise InvalidArgument("delta_f_hz * 64 must equal sample_rate_hz")
        if round(2 * self.symbol_period_s * self.sample_rate_hz) != self.preamble_len:
            raise InvalidArgument("preamble_len must equal 2 * symbol_period_s * sample_rate_hz")

    @property
    def fft_size(self):
        return 64

    @property
    def symbol_samples(self):
        return int(round(self.symbol_period_s * self.sample_rate_hz))

    @property
    def gi2_samples(self):
        return int(round(self.t_gi2_s * self.sample_rate_hz))


DEFAULT_TIMING = PreambleTiming()


def as_sequence(x, name="x"):
    """Coerce to a non-empty, finite complex128 array."""
    arr = np.asarray(x, dtype=np.complex128)
    if arr.size == 0:
        raise InvalidArgument(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgument(f"{name} contains NaN or Inf")
    return arr


# --------------------------------------------------------------------- DFT


def _is_pow2(n):
    return n > 0 and (n & (n - 1)) == 0


def _bit_reverse(n):
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


def naive_dft(x, inverse=False):
    """Direct O(N^2) transform along the last axis."""
    x = np.asarray(x, dtype=np.complex128)
    n = x.shape[-1]
    if n == 0:
        raise InvalidArgument("empty input")
    sign = 1.0 if inverse else -1.0
    m = np.arange(n)
    kernel = np.exp(sign * 2j * np.pi * np.outer(m, m) / n)
    out = x @ kernel.T
    return out / n if inverse else out


def dft(x, inverse=False):
    """Discrete Fourier transform along the last axis.

    Power-of-two lengths use an iterative radix-2 transform; other lengths
    fall back to direct summation. The inverse is scaled by ``1/N``.
    """
    x = np.asarray(x, dtype=np.complex128)
    n = x.shape[-1]
    if n == 0:
        raise InvalidArgument("empty input")
    if not _is_pow2(n):
        return naive_dft(x, inverse)

    lead = x.shape[:-1]
    a = x.reshape(-1, n)[:, _bit_reverse(n)]
    sign = 1.0 if inverse else -1.0
    m = 1
    while m < n:
        tw = np.exp(sign * 1j * np.pi * np.arange(m) / m)
        a = a.reshape(a.shape[0], -1, 2 * m)
        even = a[..., :m]
        odd = a[..., m:] * tw
        a = np.concatenate([even + odd, even - odd], axis=-1)
        m *= 2
    a = a.reshape(*lead, n)
    return a / n if inverse else a


# ---------------------------------------------------------------- window


def window_value(t, timing=DEFAULT_TIMING):
    """Preamble window ``w_T(t)``: sin^2 ramps of width ``T_TR`` around a
    flat top on ``[T_TR/2, T - T_TR/2)``; zero outside
    ``(-T_TR/2, T + T_TR/2)``. Accepts scalars or arrays."""
    t = np.asarray(t, dtype=np.float64)
    tr = timing.t_tr_s
    T = timing.symbol_period_s
    rising = (t > -tr / 2) & (t < tr / 2)
    flat = (t >= tr / 2) & (t < T - tr / 2)
    falling = (t >= T - tr / 2) & (t < T + tr / 2)
    out = np.select(
        [rising, flat, falling],
        [
            np.sin(np.pi / 2 * (0.5 + t / tr)) ** 2,
            1.0,
            np.sin(np.pi / 2 * (0.5 - (t - T) / tr)) ** 2,
        ],
        default=0.0,
    )
    return float(out) if out.ndim == 0 else out


# ------------------------------------------------------- training symbols

_P = 1 + 1j
_STS_PATTERN = (
    0, 0, _P, 0, 0, 0, -_P, 0, 0, 0, _P,
    0, 0, 0, -_P, 0, 0, 0, -_P, 0, 0, 0, _P, 0, 0, 0,
    0, 0, 0, -_P, 0, 0, 0, -_P, 0, 0, 0, _P, 0, 0, 0,
    _P, 0, 0, 0, _P, 0, 0, 0, _P, 0, 0,
)

_LTS_PATTERN = (
    1, 1, -1, -1, 1, 1, -1, 1, -1, 1, 1, 1, 1, 1, 1, -1,
    -1, 1, 1, -1, 1, -1, 1, 1, 1, 1, 1, -1, -1, 1, 1, -1,
    1, -1, 1, -1, -1, -1, -1, -1, 1, 1, -1, -1, 1, -1,
    1, -1, 1, 1, 1, 1,
)


def sts_symbol():
    """Short training symbol on subcarriers 1..52, scaled by sqrt(13/6)."""
    return np.sqrt(13 / 6) * np.array(_STS_PATTERN, dtype=np.complex128)


def lts_symbol():
    """Long training symbol on subcarriers 1..52 (all +/-1)."""
    return np.array(_LTS_PATTERN, dtype=np.complex128)


# -------------------------------------------------------------- synthesis


def synthesis_basis(freq_symbol, timing=DEFAULT_TIMING, time_offset_s=0.0,
                    n_samples=160, t0_s=0.0, sample_rate_hz=None):
    """Matrix ``B`` with ``B @ weights`` equal to the windowed weighted sum

        w_T(t) * sum_k c_k w_k exp(j 2 pi k df (t - time_offset_s))

    sampled at ``t_n = t0_s + n / fs``.
    """
    freq_symbol = as_sequence(freq_symbol, "freq_symbol")
    if freq_symbol.shape != (timing.n_subcarriers,):
        raise InvalidArgument(
            f"freq_symbol must have length {timing.n_subcarriers}, got {freq_symbol.shape}")
    if n_samples <= 0:
        raise InvalidArgument("n_samples must be positive")
    fs = timing.sample_rate_hz if sample_rate_hz is None else sample_rate_hz
    t = t0_s + np.arange(n_samples) / fs
    k = np.arange(1, timing.n_subcarriers + 1)
    # phase in sample units, snapped to integers when the offsets fall on the
    # grid, then reduced modulo one cycle before the exponential
    lag = np.arange(n_samples) + (t0_s - time_offset_s) * fs
    snapped = np.round(lag)
    lag = np.where(np.abs(lag - snapped) < 1e-9, snapped, lag)
    cycles = np.mod(np.outer(lag, k) * (timing.delta_f_hz / fs), 1.0)
    return window_value(t, timing)[:, None] * np.exp(2j * np.pi * cycles) * freq_symbol[None, :]


def synthesize_weighted_symbol(freq_symbol, weights, timing=DEFAULT_TIMING,
                               time_offset_s=0.0, n_samples=160, t0_s=0.0,
                               sample_rate_hz=None):
    """Windowed weighted symbol on the sample grid ``t0_s + n/fs``.

    ``weights`` may be a single length-52 vector or a stack ``(..., 52)``.
    """
    weights = np.asarray(weights, dtype=np.complex128)
    if weights.shape[-1:] != (timing.n_subcarriers,):
        raise InvalidArgument(
            f"weights must have trailing length {timing.n_subcarriers}, got {weights.shape}")
    basis = synthesis_basis(freq_symbol, timing, time_offset_s, n_samples, t0_s, sample_rate_hz)
    return weights @ basis.T


@lru_cache(maxsize=8)
def _preamble_basis(timing, sample_rate_hz):
    fs = timing.sample_rate_hz if sample_rate_hz is None else sample_rate_hz
    n = int(round(2 * timing.symbol_period_s * fs))
    short = synthesis_basis(sts_symbol(), timing, 0.0, n, 0.0, fs)
    long_ = synthesis_basis(lts_symbol(), timing, timing.t_gi2_s, n,
                            -timing.symbol_period_s, fs)
    basis = short + long_
    basis.setflags(write=False)
    return basis


def preamble_basis(timing=DEFAULT_TIMING, sample_rate_hz=None):
    """The ``(n, 52)`` map from subcarrier weights to ``x_S(t) + x_L(t - T)``.

    The falling edge of the short symbol and the rising edge of the long one
    overlap around ``t = T`` and are summed.
    """
    return _preamble_basis(timing, sample_rate_hz)


def reference_preamble(timing=DEFAULT_TIMING, sample_rate_hz=None):
    """Unit-weight preamble (320 samples at 20 Msps)."""
    return preamble_basis(timing, sample_rate_hz).sum(axis=1)


# ------------------------------------------------------------- resampling

TAPS_PER_PHASE = 8


def design_resampling_filter(up, down, taps_per_phase=TAPS_PER_PHASE):
    """Hamming-windowed sinc at the upsampled rate, cutoff at the narrower
    of the two Nyquist bands. Length ``taps_per_phase * up + 1`` (odd, so
    the group delay is an integer number of samples)."""
    length = taps_per_phase * up + 1
    centre = (length - 1) / 2
    n = np.arange(length) - centre
    cutoff = 0.5 / max(up, down)  # cycles per upsampled sample
    return 2 * cutoff * np.sinc(2 * cutoff * n) * np.hamming(length)


def resample_rational(x, up, down, taps_per_phase=TAPS_PER_PHASE):
    """Polyphase rate change by ``up/down``; output length ``ceil(len*up/down)``.

    Each polyphase branch is normalised to unit DC gain so constant inputs
    stay constant away from the edges.
    """
    if up < 1 or down < 1:
        raise InvalidArgument("up and down must be >= 1")
    x = as_sequence(x)
    ratio = Fraction(int(up), int(down))
    up, down = ratio.numerator, ratio.denominator
    if up == down:
        return x.copy()

    h = design_resampling_filter(up, down, taps_per_phase)
    length = len(h)
    centre = (length - 1) // 2
    n_out = -(-len(x) * up // down)

    # y[m] = sum_n x[n] h[m*down - n*up + centre]
    pos = np.arange(n_out) * down + centre
    n_hi = pos // up
    n_taps = -(-length // up) + 1
    idx = n_hi[:, None] - np.arange(n_taps)[None, :]
    tap = pos[:, None] - idx * up
    valid = (tap >= 0) & (tap < length)
    coeff = np.where(valid, h[np.clip(tap, 0, length - 1)], 0.0)
    coeff /= coeff.sum(axis=1, keepdims=True)

    in_range = (idx >= 0) & (idx < len(x))
    xs = np.where(in_range, x[np.clip(idx, 0, len(x) - 1)], 0.0)
    return np.sum(xs * coeff, axis=1)
