"""Labeled sample sets: synthetic generation, stratified splits, the binary
on-disk format and raw-capture ingestion.

Binary layout (little-endian)::

    magic "C2QD" | version u16 | kind u8 | device_count u32 | total u32
    per sample: device_id u32 | sample_len u32 | sample_len x (f32 re, f32 im)

A UTF-8 JSON manifest is written next to the payload as ``<path>.json``.
"""

import json
import logging
import math
import struct
import warnings
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import FormatError, InvalidArgument
from .estimation import find_bursts, ls_estimate, mmse_shrinkage
from .impairments import (ChannelModel, DeviceImpairment, rayleigh_taps, reference_power,
                          sample_device_population, simulate_received_preamble)
from .signal import DEFAULT_TIMING, resample_rational

log = logging.getLogger(__name__)

MAGIC = b"C2QD"
FORMAT_VERSION = 1
KINDS = {"iq": 0, "csi": 1, "feature": 2}
KIND_LENGTHS = {"iq": 320, "csi": 52, "feature": 320}
_HEADER = struct.Struct("<4sHBII")
_SAMPLE_HEADER = struct.Struct("<II")


@dataclass
class LabeledSampleSet:
    """Uniform-kind samples with 1-based device labels."""

    kind: str
    labels: np.ndarray
    data: np.ndarray
    device_count: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidArgument(f"unknown sample kind {self.kind!r}")
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        self.data = np.asarray(self.data, dtype=np.complex128)
        if self.data.size == 0:
            self.data = self.data.reshape(0, KIND_LENGTHS[self.kind])
        expected = KIND_LENGTHS[self.kind]
        if self.data.ndim != 2 or self.data.shape[1] != expected:
            raise InvalidArgument(f"{self.kind} samples must have length {expected}, "
                                  f"got shape {self.data.shape}")
        if len(self.labels) != len(self.data):
            raise InvalidArgument("labels and samples differ in count")
        if len(self.labels) and (self.labels.min() < 1 or self.labels.max() > self.device_count):
            raise InvalidArgument(f"device ids must lie in [1, {self.device_count}]")

    def __len__(self):
        return len(self.labels)

    def subset(self, idx):
        return LabeledSampleSet(self.kind, self.labels[idx], self.data[idx],
                                self.device_count, dict(self.meta))

    def counts(self):
        return np.bincount(self.labels, minlength=self.device_count + 1)[1:]

    def equals(self, other):
        return (self.kind == other.kind and self.device_count == other.device_count
                and np.array_equal(self.labels, other.labels)
                and np.array_equal(self.data, other.data))


# ---------------------------------------------------------- generation


@dataclass
class ChannelConfig:
    """Per-packet channel draws for synthetic data.

    ``taps`` pins a fixed FIR response instead of Rayleigh draws;
    ``snr_db_range = None`` disables noise.
    """

    n_taps: int = 3
    decay_db_per_tap: float = 3.0
    snr_db_range: tuple = (15.0, 25.0)
    taps: tuple = None

    def __post_init__(self):
        if self.taps is None and self.n_taps < 1:
            raise InvalidArgument("n_taps must be >= 1")
        if self.snr_db_range is not None:
            lo, hi = self.snr_db_range
            if hi < lo:
                raise InvalidArgument("snr_db_range must be (low, high)")
            self.snr_db_range = (float(lo), float(hi))
        if self.taps is not None:
            self.taps = tuple(complex(t) for t in self.taps)

    def draw(self, rng):
        taps = np.asarray(self.taps) if self.taps is not None else rayleigh_taps(
            rng, self.n_taps, self.decay_db_per_tap)
        snr_db = math.inf if self.snr_db_range is None else float(rng.uniform(*self.snr_db_range))
        return ChannelModel(tuple(taps), snr_db, int(rng.integers(2 ** 63)))

    def to_dict(self):
        d = asdict(self)
        if self.taps is not None:
            d["taps"] = [[t.real, t.imag] for t in self.taps]
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if d.get("taps") is not None:
            d["taps"] = tuple(complex(re, im) for re, im in d["taps"])
        if d.get("snr_db_range") is not None:
            d["snr_db_range"] = tuple(d["snr_db_range"])
        return cls(**d)


def subcarrier_snr(snr_db, timing=DEFAULT_TIMING):
    """Per-subcarrier SNR of the LS estimate for a per-sample SNR, assuming
    a unit-energy channel."""
    return 10 ** (snr_db / 10) * timing.fft_size / reference_power(timing)


def estimate_batch(rx, snr_db, estimator, timing=DEFAULT_TIMING):
    """CSI for a stack of received preambles."""
    h = ls_estimate(rx, timing)
    if estimator == "ls":
        return h
    if estimator != "mmse":
        raise InvalidArgument(f"unknown estimator {estimator!r}")
    snr_db = np.asarray(snr_db, dtype=np.float64)
    shrink = np.where(np.isinf(snr_db), 1.0,
                      mmse_shrinkage(subcarrier_snr(np.where(np.isinf(snr_db), 0.0, snr_db), timing)))
    return h * shrink[..., None]


def generate_synthetic_pair(n_devices, samples_per_device, channel_cfg=None, estimator="mmse",
                            seed=0, timing=DEFAULT_TIMING, devices=None):
    """Paired IQ and CSI sets; the n-th IQ and CSI samples of a device come
    from the same simulated packet.

    Each device uses its own generator seeded from ``(seed, device_id)``.
    """
    if n_devices < 2:
        raise InvalidArgument("need at least two devices")
    if samples_per_device < 1:
        raise InvalidArgument("samples_per_device must be >= 1")
    channel_cfg = channel_cfg or ChannelConfig()
    if devices is None:
        devices = sample_device_population(n_devices, seed)
    if len(devices) != n_devices:
        raise InvalidArgument("device list length differs from n_devices")

    labels, iq, snrs = [], [], []
    for dev in devices:
        rng = np.random.default_rng([seed, dev.device_id])
        for _ in range(samples_per_device):
            ch = channel_cfg.draw(rng)
            iq.append(simulate_received_preamble(dev, ch, timing))
            snrs.append(ch.snr_db)
            labels.append(dev.device_id)
    iq = np.array(iq)
    csi = estimate_batch(iq, np.array(snrs), estimator, timing)
    meta = {
        "generator": "synthetic",
        "seed": seed,
        "estimator": estimator,
        "channel": channel_cfg.to_dict(),
        "devices": [d.to_dict() for d in devices],
        "snr_db": [s if math.isfinite(s) else None for s in snrs],
    }
    return (LabeledSampleSet("iq", labels, iq, n_devices, dict(meta)),
            LabeledSampleSet("csi", labels, csi, n_devices, dict(meta)))


def split(samples, train_fraction, seed=0):
    """Per-device stratified random split; each device contributes
    ``floor(train_fraction * n_device)`` samples to the training part."""
    if not 0 < train_fraction < 1:
        raise InvalidArgument("train_fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for dev in range(1, samples.device_count + 1):
        idx = np.flatnonzero(samples.labels == dev)
        if len(idx) < 2:
            raise InvalidArgument(f"device {dev} has fewer than two samples")
        idx = idx[rng.permutation(len(idx))]
        n_train = int(math.floor(train_fraction * len(idx)))
        train_idx.append(idx[:n_train])
        test_idx.append(idx[n_train:])
    train_idx = np.sort(np.concatenate(train_idx))
    test_idx = np.sort(np.concatenate(test_idx))
    return samples.subset(train_idx), samples.subset(test_idx)


# --------------------------------------------------------------- file I/O


def manifest_for(samples):
    counts = samples.counts()
    per_device = int(counts[0]) if len(counts) and np.all(counts == counts[0]) else None
    return {
        "format_version": FORMAT_VERSION,
        "kind": samples.kind,
        "device_count": samples.device_count,
        "total_samples": len(samples),
        "samples_per_device": per_device,
        "generation": samples.meta,
    }


def to_bytes(samples):
    parts = [_HEADER.pack(MAGIC, FORMAT_VERSION, KINDS[samples.kind],
                          samples.device_count, len(samples))]
    n = samples.data.shape[1]
    for label, row in zip(samples.labels, samples.data):
        parts.append(_SAMPLE_HEADER.pack(int(label), n))
        inter = np.empty(2 * n, dtype="<f4")
        inter[0::2] = row.real
        inter[1::2] = row.imag
        parts.append(inter.tobytes())
    return b"".join(parts)


def from_bytes(blob):
    if len(blob) < _HEADER.size:
        raise FormatError(f"truncated header: expected {_HEADER.size} bytes, got {len(blob)}",
                          offset=len(blob))
    magic, version, kind_code, device_count, total = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}", offset=0)
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported version {version}", offset=4)
    kinds = {v: k for k, v in KINDS.items()}
    if kind_code not in kinds:
        raise FormatError(f"unknown kind code {kind_code}", offset=6)
    kind = kinds[kind_code]
    pos = _HEADER.size
    labels, rows = [], []
    for i in range(total):
        if pos + _SAMPLE_HEADER.size > len(blob):
            raise FormatError(f"truncated sample {i} header: expected {pos + _SAMPLE_HEADER.size} "
                              f"bytes, got {len(blob)}", offset=len(blob))
        label, n = _SAMPLE_HEADER.unpack_from(blob, pos)
        pos += _SAMPLE_HEADER.size
        if n != KIND_LENGTHS[kind]:
            raise FormatError(f"sample {i} has length {n}, {kind} requires {KIND_LENGTHS[kind]}",
                              offset=pos - 4)
        end = pos + 8 * n
        if end > len(blob):
            raise FormatError(f"truncated sample {i}: expected {end} bytes, got {len(blob)}",
                              offset=len(blob))
        inter = np.frombuffer(blob, dtype="<f4", count=2 * n, offset=pos).astype(np.float64)
        rows.append(inter[0::2] + 1j * inter[1::2])
        labels.append(label)
        pos = end
    if pos != len(blob):
        raise FormatError(f"{len(blob) - pos} trailing bytes after {total} samples", offset=pos)
    data = np.array(rows) if rows else np.zeros((0, KIND_LENGTHS[kind]), dtype=np.complex128)
    try:
        return LabeledSampleSet(kind, labels, data, device_count)
    except InvalidArgument as exc:
        raise FormatError(str(exc)) from None


def save(samples, path):
    """Write the payload and its ``.json`` manifest."""
    path = Path(path)
    path.write_bytes(to_bytes(samples))
    Path(str(path) + ".json").write_text(
        json.dumps(manifest_for(samples), indent=2, sort_keys=True), encoding="utf-8")


def load(path):
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from None
    samples = from_bytes(blob)
    mpath = Path(str(path) + ".json")
    if mpath.exists():
        try:
            manifest = json.loads(mpath.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise FormatError(f"bad manifest {mpath}: {exc}") from None
        if (manifest.get("kind") != samples.kind
                or manifest.get("total_samples") != len(samples)
                or manifest.get("device_count") != samples.device_count):
            raise FormatError(f"manifest {mpath} does not match payload")
        samples.meta = manifest.get("generation", {}) or {}
    return samples


# --------------------------------------------------------------- ingestion


def read_raw_capture(path):
    """Headerless interleaved little-endian float32 I/Q pairs."""
    blob = Path(path).read_bytes()
    if len(blob) == 0:
        raise FormatError(f"{path} is empty", offset=0)
    if len(blob) % 8:
        raise FormatError(f"{path} size {len(blob)} is not a whole number of I/Q pairs",
                          offset=len(blob) - len(blob) % 8)
    inter = np.frombuffer(blob, dtype="<f4").astype(np.float64)
    if not np.all(np.isfinite(inter)):
        raise FormatError(f"{path} contains non-finite samples")
    return inter[0::2] + 1j * inter[1::2]


def rate_ratio(capture_rate_hz, target_hz=DEFAULT_TIMING.sample_rate_hz):
    """``(up, down)`` taking ``capture_rate_hz`` to ``target_hz``."""
    if capture_rate_hz < target_hz:
        raise InvalidArgument("capture rate must be at least 20 MHz")
    r = Fraction(target_hz / capture_rate_hz).limit_denominator(1000)
    return r.numerator, r.denominator


def ingest_capture(path, capture_rate_hz, label, timing=DEFAULT_TIMING):
    """One labeled 320-sample IQ preamble per burst found in a raw capture."""
    if label < 1:
        raise InvalidArgument("label must be >= 1")
    capture = read_raw_capture(path)
    up, down = rate_ratio(capture_rate_hz, timing.sample_rate_hz)
    if (up, down) != (1, 1):
        capture = resample_rational(capture, up, down)
    offsets = find_bursts(capture, timing) if np.any(capture) else []
    if not offsets:
        warnings.warn(f"no bursts found in {path}", RuntimeWarning, stacklevel=2)
    n = timing.preamble_len
    data = np.array([capture[o:o + n] for o in offsets]).reshape(-1, n)
    meta = {"source": str(path), "capture_rate_hz": capture_rate_hz, "resample": [up, down],
            "offsets": [int(o) for o in offsets]}
    return LabeledSampleSet("iq", [label] * len(offsets), data, label, meta)
