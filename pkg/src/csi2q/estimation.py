"""Channel estimation from received preambles and burst extraction from
longer captures."""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import DetectionFailure, InvalidArgument
from .signal import DEFAULT_TIMING, as_sequence, dft, lts_symbol, preamble_basis


@dataclass
class CsiMeasurement:
    h: np.ndarray
    device_id: int = 0

    def __post_init__(self):
        self.h = np.asarray(self.h, dtype=np.complex128)
        if self.h.shape != (52,):
            raise InvalidArgument(f"CSI must have 52 entries, got {self.h.shape}")
        if not np.all(np.isfinite(self.h)):
            raise InvalidArgument("CSI contains NaN or Inf")


def lts_slice(timing=DEFAULT_TIMING):
    """Sample range of the flat-window long-symbol DFT block (192..255)."""
    start = timing.symbol_samples + timing.gi2_samples
    return slice(start, start + timing.fft_size)


def ls_estimate(rx, timing=DEFAULT_TIMING):
    """Least-squares CSI for one preamble or a stack ``(..., 320)``."""
    rx = np.asarray(rx, dtype=np.complex128)
    if rx.shape[-1] != timing.preamble_len:
        raise InvalidArgument(
            f"received preamble must have {timing.preamble_len} samples, got {rx.shape[-1]}")
    block = rx[..., lts_slice(timing)]
    spectrum = dft(block) / timing.fft_size
    return spectrum[..., 1:timing.n_subcarriers + 1] / lts_symbol()


def mmse_shrinkage(snr_linear):
    snr_linear = np.asarray(snr_linear, dtype=np.float64)
    if np.any(~(snr_linear > 0)):
        raise InvalidArgument("snr_linear must be positive")
    return snr_linear / (snr_linear + 1.0)


def estimate_csi_ls(rx_preamble, timing=DEFAULT_TIMING, device_id=0):
    rx = as_sequence(rx_preamble, "rx_preamble")
    if rx.ndim != 1:
        raise InvalidArgument("expected a single preamble")
    return CsiMeasurement(ls_estimate(rx, timing), device_id)


def estimate_csi_mmse(rx_preamble, timing=DEFAULT_TIMING, snr_linear=1.0, device_id=0):
    """LS estimate shrunk by ``snr/(snr+1)`` (unit-variance channel prior).

    ``snr_linear`` is the per-subcarrier SNR of the LS estimate.
    """
    shrink = mmse_shrinkage(snr_linear)
    ls = estimate_csi_ls(rx_preamble, timing, device_id)
    return CsiMeasurement(ls.h * shrink, device_id)


# ------------------------------------------------------- burst extraction


class ExtractedPreamble(NamedTuple):
    samples: np.ndarray
    offset: int


ENERGY_WINDOW = 16
THRESHOLD_DB = 6.0
NOISE_PERCENTILE = 10.0


def window_energy(x, window=ENERGY_WINDOW):
    p = np.abs(x) ** 2
    c = np.concatenate([[0.0], np.cumsum(p)])
    return c[window:] - c[:-window]


def detection_threshold(energy, threshold_db=THRESHOLD_DB):
    peak = energy.max()
    if not peak > 0:
        raise DetectionFailure("capture carries no energy")
    floor = np.percentile(energy, NOISE_PERCENTILE)
    return max(floor * 10 ** (threshold_db / 10), 1e-9 * peak)


def _align(capture, coarse, timing, window):
    """Refine a coarse burst start by correlating against the short symbol."""
    sts = preamble_basis(timing)[: timing.symbol_samples].sum(axis=1)
    n_ref = len(sts)
    lo = max(coarse - window, 0)
    hi = min(coarse + 2 * window, len(capture) - n_ref)
    if hi < lo:
        raise InvalidArgument("capture too short after burst detection")
    lags = np.arange(lo, hi + 1)
    segs = np.lib.stride_tricks.sliding_window_view(capture, n_ref)[lags]
    corr = np.abs(segs @ np.conj(sts))
    return int(lags[np.argmax(corr)])


def find_bursts(capture, timing=DEFAULT_TIMING, threshold_db=THRESHOLD_DB,
                window=ENERGY_WINDOW):
    """Offsets of every preamble in ``capture`` (already at 20 Msps).

    Detection is a sliding-window energy crossing ``threshold_db`` above a
    percentile noise floor; after each burst the energy must fall back below
    the threshold before the next one is accepted.
    """
    capture = as_sequence(capture, "capture")
    n = timing.preamble_len
    if len(capture) < n:
        raise InvalidArgument("capture shorter than one preamble")
    energy = window_energy(capture, window)
    thresh = detection_threshold(energy, threshold_db)
    above = energy > thresh

    offsets = []
    pos = 0
    while True:
        hits = np.flatnonzero(above[pos:])
        if hits.size == 0:
            break
        coarse = pos + int(hits[0])
        try:
            offset = _align(capture, coarse, timing, window)
        except InvalidArgument:
            break
        if offset + n > len(capture):
            break
        offsets.append(offset)
        pos = offset + n
        quiet = np.flatnonzero(~above[pos:])
        if quiet.size == 0:
            break
        pos += int(quiet[0])
    return offsets


def extract_preamble(capture, timing=DEFAULT_TIMING, threshold_db=THRESHOLD_DB,
                     window=ENERGY_WINDOW):
    """First aligned 320-sample preamble in ``capture``."""
    capture = as_sequence(capture, "capture")
    n = timing.preamble_len
    if len(capture) < n:
        raise InvalidArgument("capture shorter than one preamble")
    energy = window_energy(capture, window)
    thresh = detection_threshold(energy, threshold_db)
    hits = np.flatnonzero(energy > thresh)
    if hits.size == 0:
        raise DetectionFailure("no burst above the energy threshold")
    offset = _align(capture, int(hits[0]), timing, window)
    if offset + n > len(capture):
        raise InvalidArgument(
            f"capture too short: burst at {offset} needs {offset + n} samples, have {len(capture)}")
    return ExtractedPreamble(capture[offset:offset + n].copy(), offset)
