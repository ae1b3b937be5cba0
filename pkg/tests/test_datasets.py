import json
import math
import warnings

import numpy as np
import pytest

from csi2q.datasets import (ChannelConfig, LabeledSampleSet, estimate_batch, from_bytes,
                            generate_synthetic_pair, ingest_capture, load, rate_ratio, save,
                            split, to_bytes)
from csi2q.errors import FormatError, InvalidArgument
from csi2q.estimation import extract_preamble
from csi2q.impairments import DeviceImpairment
from csi2q.signal import reference_preamble, resample_rational


@pytest.fixture(scope="module")
def pair():
    return generate_synthetic_pair(3, 10, seed=2)


def test_pair_counts_and_alignment():
    iq, csi = generate_synthetic_pair(2, 3, seed=0)
    assert len(iq) == len(csi) == 6
    assert iq.labels.tolist() == csi.labels.tolist() == [1, 1, 1, 2, 2, 2]
    assert iq.data.shape == (6, 320) and csi.data.shape == (6, 52)


def test_csi_regenerates_from_stored_iq(pair):
    iq, csi = pair
    snr = np.array(iq.meta["snr_db"], dtype=float)
    assert np.array_equal(estimate_batch(iq.data, snr, "mmse"), csi.data)


def test_generation_deterministic(pair):
    iq, csi = generate_synthetic_pair(3, 10, seed=2)
    assert iq.equals(pair[0]) and csi.equals(pair[1])
    other, _ = generate_synthetic_pair(3, 10, seed=3)
    assert not other.equals(iq)


def test_ideal_link_gives_unit_csi():
    devs = [DeviceImpairment.identity(1), DeviceImpairment.identity(2)]
    cfg = ChannelConfig(taps=(1,), snr_db_range=None)
    _, csi = generate_synthetic_pair(2, 4, cfg, estimator="ls", devices=devs)
    assert np.max(np.abs(csi.data - 1)) < 1e-6
    _, csi = generate_synthetic_pair(2, 4, cfg, estimator="mmse", devices=devs)
    assert np.max(np.abs(csi.data - 1)) < 1e-6


def test_generation_argument_checks():
    with pytest.raises(InvalidArgument):
        generate_synthetic_pair(1, 5)
    with pytest.raises(InvalidArgument):
        generate_synthetic_pair(2, 0)
    with pytest.raises(InvalidArgument):
        generate_synthetic_pair(2, 2, estimator="zf")


def test_channel_config_round_trip():
    cfg = ChannelConfig(taps=(1, 0.5j), snr_db_range=(10, 12))
    assert ChannelConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(InvalidArgument):
        ChannelConfig(snr_db_range=(20, 10))


# ----------------------------------------------------------------- split


def labeled(n_dev, per_dev, kind="csi"):
    rng = np.random.default_rng(0)
    length = 52 if kind == "csi" else 320
    labels = np.repeat(np.arange(1, n_dev + 1), per_dev)
    data = rng.standard_normal((len(labels), length)) + 1j * rng.standard_normal((len(labels), length))
    return LabeledSampleSet(kind, labels, data, n_dev)


def test_split_counts_per_device():
    s = labeled(10, 300)
    train, test = split(s, 0.8, seed=0)
    assert train.counts().tolist() == [240] * 10
    assert test.counts().tolist() == [60] * 10


def test_split_is_partition():
    s = labeled(4, 13)
    train, test = split(s, 0.7, seed=1)
    rows = {r.tobytes() for r in s.data}
    tr = {r.tobytes() for r in train.data}
    te = {r.tobytes() for r in test.data}
    assert not tr & te and tr | te == rows
    assert train.counts().tolist() == [math.floor(0.7 * 13)] * 4


def test_split_deterministic_and_seeded():
    s = labeled(3, 20)
    a, _ = split(s, 0.5, seed=4)
    b, _ = split(s, 0.5, seed=4)
    c, _ = split(s, 0.5, seed=5)
    assert a.equals(b)
    assert not a.equals(c)


def test_split_rejects_tiny_device():
    s = LabeledSampleSet("csi", [1, 1, 2], np.ones((3, 52)), 2)
    with pytest.raises(InvalidArgument):
        split(s, 0.5)


def test_sample_set_validation():
    with pytest.raises(InvalidArgument):
        LabeledSampleSet("csi", [1], np.ones((1, 51)), 1)
    with pytest.raises(InvalidArgument):
        LabeledSampleSet("iq", [3], np.ones((1, 320)), 2)
    with pytest.raises(InvalidArgument):
        LabeledSampleSet("audio", [1], np.ones((1, 52)), 1)


# --------------------------------------------------------------- file I/O


@pytest.mark.parametrize("kind", ["iq", "csi", "feature"])
def test_save_load_round_trip(tmp_path, kind):
    s = labeled(3, 4, "csi" if kind == "csi" else "iq")
    s = LabeledSampleSet(kind, s.labels, s.data, 3)
    path = tmp_path / "set.c2q"
    save(s, path)
    back = load(path)
    assert back.kind == kind and back.device_count == 3
    assert np.array_equal(back.labels, s.labels)
    stored = s.data.real.astype(np.float32) + 1j * s.data.imag.astype(np.float32)
    assert np.array_equal(back.data, stored)
    assert to_bytes(back) == path.read_bytes()


def test_round_trip_exact_at_storage_precision(tmp_path):
    s = labeled(2, 3)
    s = LabeledSampleSet("csi", s.labels, s.data.astype(np.complex64), 2)
    save(s, tmp_path / "a")
    assert load(tmp_path / "a").equals(s)


def test_truncated_file_reports_sizes():
    blob = to_bytes(labeled(2, 2))
    with pytest.raises(FormatError, match=rf"expected {len(blob)} bytes, got {len(blob) - 5}"):
        from_bytes(blob[:-5])
    with pytest.raises(FormatError):
        from_bytes(blob[:7])


def test_bad_magic_and_version():
    blob = bytearray(to_bytes(labeled(2, 2)))
    with pytest.raises(FormatError, match="magic"):
        from_bytes(b"XXXX" + bytes(blob[4:]))
    blob[4] = 9
    with pytest.raises(FormatError, match="version"):
        from_bytes(bytes(blob))


def test_trailing_bytes_rejected():
    with pytest.raises(FormatError, match="trailing"):
        from_bytes(to_bytes(labeled(2, 2)) + b"\0")


def test_manifest_mismatch(tmp_path):
    save(labeled(2, 2), tmp_path / "a")
    save(labeled(2, 3), tmp_path / "b")
    (tmp_path / "a.json").write_bytes((tmp_path / "b.json").read_bytes())
    with pytest.raises(FormatError, match="manifest"):
        load(tmp_path / "a")


def test_manifest_contents(tmp_path, pair):
    save(pair[1], tmp_path / "csi")
    m = json.loads((tmp_path / "csi.json").read_text())
    assert m["kind"] == "csi" and m["device_count"] == 3
    assert m["total_samples"] == 30 and m["samples_per_device"] == 10
    assert m["generation"]["seed"] == 2


# -------------------------------------------------------------- ingestion


def write_capture(path, x):
    inter = np.empty(2 * len(x), dtype="<f4")
    inter[0::2] = x.real
    inter[1::2] = x.imag
    path.write_bytes(inter.tobytes())


def test_ingest_five_bursts_at_25_msps(tmp_path):
    ref = reference_preamble()
    gap = np.zeros(200)
    at20 = np.concatenate([np.r_[gap, g * ref] for g in (1, 0.8, 1.2, 0.9j, -1)] + [gap])
    at25 = resample_rational(at20, 5, 4)
    write_capture(tmp_path / "cap.bin", at25)
    s = ingest_capture(tmp_path / "cap.bin", 25e6, label=4)
    assert len(s) == 5
    assert s.labels.tolist() == [4] * 5 and s.data.shape == (5, 320)
    assert s.meta["resample"] == [4, 5]


def test_ingest_at_native_rate_matches_direct_extraction(tmp_path):
    rng = np.random.default_rng(1)
    x = np.r_[np.zeros(150), reference_preamble(), np.zeros(150)]
    x = x + 0.01 * (rng.standard_normal(len(x)) + 1j * rng.standard_normal(len(x)))
    write_capture(tmp_path / "cap.bin", x)
    s = ingest_capture(tmp_path / "cap.bin", 20e6, label=1)
    stored = x.real.astype(np.float32) + 1j * x.imag.astype(np.float32)
    assert s.meta["resample"] == [1, 1]
    np.testing.assert_array_equal(s.data[0], extract_preamble(stored).samples)


def test_ingest_empty_and_malformed(tmp_path):
    (tmp_path / "empty.bin").write_bytes(b"")
    with pytest.raises(FormatError):
        ingest_capture(tmp_path / "empty.bin", 20e6, 1)
    (tmp_path / "odd.bin").write_bytes(b"\0" * 12)
    with pytest.raises(FormatError):
        ingest_capture(tmp_path / "odd.bin", 20e6, 1)


def test_ingest_without_bursts_warns(tmp_path):
    write_capture(tmp_path / "z.bin", np.zeros(1000, dtype=complex))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        s = ingest_capture(tmp_path / "z.bin", 20e6, 2)
    assert len(s) == 0
    assert any("no bursts" in str(w.message) for w in caught)


def test_rate_ratio():
    assert rate_ratio(25e6) == (4, 5)
    assert rate_ratio(20e6) == (1, 1)
    assert rate_ratio(40e6) == (1, 2)
    with pytest.raises(InvalidArgument):
        rate_ratio(10e6)
