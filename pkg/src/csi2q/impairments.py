"""Transmitter impairments and the propagation channel.

The transmitter chain is applied in a fixed order: IQ imbalance, memoryless
PA polynomial, carrier frequency offset, DC offset. The channel is an FIR
filter followed by additive circularly-symmetric Gaussian noise.
"""

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import InvalidArgument
from .signal import DEFAULT_TIMING, as_sequence, reference_preamble

CARRIER_HZ = 2.412e9

# Parameter ranges for sampled device populations.
CFO_PPM_RANGE = (-20.0, 20.0)
IQ_GAIN_RANGE = (0.9, 1.1)
IQ_PHASE_RANGE_RAD = (math.radians(-5.0), math.radians(5.0))
PA_A3_MAX = 0.05
DC_MAX = 0.01


@dataclass(frozen=True)
class DeviceImpairment:
    device_id: int
    cfo_ppm: float = 0.0
    iq_gain_mismatch: float = 1.0
    iq_phase_mismatch_rad: float = 0.0
    pa_a1: complex = 1.0 + 0.0j
    pa_a3: complex = 0.0j
    dc_offset: complex = 0.0j

    def __post_init__(self):
        if abs(self.pa_a1) == 0:
            raise InvalidArgument("pa_a1 must be nonzero")

    @classmethod
    def identity(cls, device_id=1):
        return cls(device_id=device_id)

    @property
    def cfo_hz(self):
        return self.cfo_ppm * 1e-6 * CARRIER_HZ

    def as_vector(self):
        """Real parameter vector (device id excluded)."""
        return np.array([
            self.cfo_ppm, self.iq_gain_mismatch, self.iq_phase_mismatch_rad,
            self.pa_a1.real, self.pa_a1.imag, self.pa_a3.real, self.pa_a3.imag,
            self.dc_offset.real, self.dc_offset.imag,
        ])

    def to_dict(self):
        d = asdict(self)
        for key in ("pa_a1", "pa_a3", "dc_offset"):
            d[key] = [d[key].real, d[key].imag]
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for key in ("pa_a1", "pa_a3", "dc_offset"):
            if key in d:
                re, im = d[key]
                d[key] = complex(re, im)
        return cls(**d)


@dataclass(frozen=True)
class ChannelModel:
    taps: tuple
    snr_db: float = math.inf
    rng_seed: int = 0

    def __post_init__(self):
        taps = np.asarray(self.taps, dtype=np.complex128)
        if taps.size == 0:
            raise InvalidArgument("channel needs at least one tap")
        if not np.sum(np.abs(taps) ** 2) > 0:
            raise InvalidArgument("channel tap energy must be positive")
        object.__setattr__(self, "taps", tuple(complex(t) for t in taps))

    @property
    def noiseless(self):
        return math.isinf(self.snr_db) and self.snr_db > 0


def iq_imbalance_coefficients(gain, phase_rad):
    """``(mu, nu)`` such that the imbalanced signal is ``mu*x + nu*conj(x)``."""
    mu = (1 + gain * np.exp(-1j * phase_rad)) / 2
    nu = (1 - gain * np.exp(1j * phase_rad)) / 2
    return mu, nu


def apply_impairments(x, imp, sample_rate_hz, drive_power=1.0):
    """Pass ``x`` through the transmitter model of device ``imp``.

    ``drive_power`` sets the input power at which the cubic PA term is
    referenced: ``y = a1*x + a3*x*|x|^2 / drive_power``.
    """
    if sample_rate_hz is None or not sample_rate_hz > 0:
        raise InvalidArgument("a positive sample rate is required")
    x = as_sequence(x)
    y = x.copy()

    if imp.iq_gain_mismatch != 1.0 or imp.iq_phase_mismatch_rad != 0.0:
        mu, nu = iq_imbalance_coefficients(imp.iq_gain_mismatch, imp.iq_phase_mismatch_rad)
        y = mu * y + nu * np.conj(y)

    if imp.pa_a1 != 1.0 or imp.pa_a3 != 0.0:
        y = imp.pa_a1 * y + imp.pa_a3 * y * (np.abs(y) ** 2 / drive_power)

    if imp.cfo_ppm != 0.0:
        n = np.arange(y.shape[-1])
        y = y * np.exp(2j * np.pi * imp.cfo_hz * n / sample_rate_hz)

    if imp.dc_offset != 0.0:
        y = y + imp.dc_offset
    return y


def apply_channel(x, ch):
    """FIR channel (output truncated to the input length) plus AWGN.

    Noise power is the mean power of the filtered signal divided by the
    linear SNR. ``snr_db = inf`` disables noise.
    """
    x = as_sequence(x)
    taps = np.asarray(ch.taps, dtype=np.complex128)
    y = np.convolve(x, taps)[: len(x)]
    if ch.noiseless:
        return y
    rng = np.random.default_rng(ch.rng_seed)
    noise_power = np.mean(np.abs(y) ** 2) / 10 ** (ch.snr_db / 10)
    noise = rng.standard_normal(len(y)) + 1j * rng.standard_normal(len(y))
    return y + noise * np.sqrt(noise_power / 2)


def simulate_received_preamble(device, ch, timing=DEFAULT_TIMING):
    """Reference preamble -> device impairments -> channel (320 samples)."""
    ref = reference_preamble(timing)
    tx = apply_impairments(ref, device, timing.sample_rate_hz,
                           drive_power=reference_power(timing))
    return apply_channel(tx, ch)


def reference_power(timing=DEFAULT_TIMING):
    """Mean sample power of the unit-weight reference preamble."""
    return float(np.mean(np.abs(reference_preamble(timing)) ** 2))


def sample_device_population(n_devices, rng_seed):
    """Draw ``n_devices`` impairment sets (ids ``1..n_devices``)."""
    if n_devices < 1:
        raise InvalidArgument("n_devices must be >= 1")
    rng = np.random.default_rng(rng_seed)
    devices = []
    for device_id in range(1, n_devices + 1):
        a3 = rng.uniform(0, PA_A3_MAX) * np.exp(1j * rng.uniform(-np.pi, np.pi))
        dc = rng.uniform(0, DC_MAX) * np.exp(1j * rng.uniform(-np.pi, np.pi))
        devices.append(DeviceImpairment(
            device_id=device_id,
            cfo_ppm=float(rng.uniform(*CFO_PPM_RANGE)),
            iq_gain_mismatch=float(rng.uniform(*IQ_GAIN_RANGE)),
            iq_phase_mismatch_rad=float(rng.uniform(*IQ_PHASE_RANGE_RAD)),
            pa_a1=1.0 + 0.0j,
            pa_a3=complex(a3),
            dc_offset=complex(dc),
        ))
    return devices


def rayleigh_taps(rng, n_taps=3, decay_db_per_tap=3.0):
    """Exponentially decaying Rayleigh profile with unit expected energy."""
    if n_taps < 1:
        raise InvalidArgument("n_taps must be >= 1")
    power = 10 ** (-decay_db_per_tap * np.arange(n_taps) / 10)
    power /= power.sum()
    g = rng.standard_normal(n_taps) + 1j * rng.standard_normal(n_taps)
    return g * np.sqrt(power / 2)
