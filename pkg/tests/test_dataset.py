import collections
import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from epsfp.dataset import (HEADER_BYTES, RECORD_HEADER_BYTES, DatasetHeader, PayloadKind, Record, ScenarioSpec,
                           build_scenario, day_cfo_factor, iter_dataset, iter_scenario, load_manifest,
                           manifest_path, read_dataset, save_scenario, write_dataset)
from epsfp.errors import DatasetFormatError, ValidationError
from epsfp.waveform import FRAME_LEN, SAMPLE_RATE_HZ, ChannelKind, DomainLabel, IQFrame


def iq_record(dev=1, n=FRAME_LEN, seed=0, domain=DomainLabel(1, 2)):
    rng = np.random.default_rng(seed)
    return Record.from_frame(IQFrame(rng.standard_normal(n) + 1j * rng.standard_normal(n), device_id=dev,
                                     domain=domain))


def test_layout_sizes():
    assert HEADER_BYTES == 25 and RECORD_HEADER_BYTES == 5
    h = DatasetHeader(SAMPLE_RATE_HZ, FRAME_LEN, 1, PayloadKind.IQ)
    assert h.record_bytes == 5 + 8 * FRAME_LEN


def test_single_iq_record_file_size(tmp_path):
    p = tmp_path / "one.epsf"
    write_dataset(p, DatasetHeader(SAMPLE_RATE_HZ, FRAME_LEN, 0, PayloadKind.IQ), [iq_record()])
    assert p.stat().st_size == 25 + 5 + 25170 * 8


def test_header_bytes_exact(tmp_path):
    p = tmp_path / "h.epsf"
    write_dataset(p, DatasetHeader(20e6, 4, 0, PayloadKind.EPS), [Record(7, DomainLabel(2, 1, ChannelKind.WIRED),
                                                                         np.arange(8))])
    raw = p.read_bytes()
    assert raw[:4] == b"EPSF"
    assert struct.unpack_from("<IdIIB", raw, 4) == (1, 20e6, 4, 1, 1)
    assert struct.unpack_from("<HBBB", raw, 25) == (7, 2, 1, int(ChannelKind.WIRED))
    assert np.array_equal(np.frombuffer(raw, "<f4", offset=30), np.arange(8, dtype=np.float32))


@pytest.mark.parametrize("n_records", [0, 1, 3])
def test_round_trip_bit_identical_iq(tmp_path, n_records):
    recs = [iq_record(dev=i, seed=i) for i in range(n_records)]
    p1, p2 = tmp_path / "a.epsf", tmp_path / "b.epsf"
    h = write_dataset(p1, DatasetHeader(SAMPLE_RATE_HZ, FRAME_LEN, 0, PayloadKind.IQ), recs)
    h2, back = read_dataset(p1)
    assert h2 == h and h.record_count == n_records
    write_dataset(p2, h2, back)
    assert p1.read_bytes() == p2.read_bytes()
    for a, b in zip(recs, back):
        assert a.device_id == b.device_id and a.domain == b.domain and np.array_equal(a.payload, b.payload)


@settings(max_examples=25, deadline=None)
@given(rows=st.lists(st.tuples(st.integers(0, 0xFFFF), st.integers(0, 255), st.integers(0, 255),
                               st.sampled_from(list(ChannelKind))), max_size=6),
       seed=st.integers(0, 2 ** 32 - 1))
def test_round_trip_bit_identical_eps(tmp_path_factory, rows, seed):
    rng = np.random.default_rng(seed)
    recs = [Record(d, DomainLabel(day, loc, ck), rng.random(2 * 16)) for d, day, loc, ck in rows]
    tmp = tmp_path_factory.mktemp("eps")
    h = write_dataset(tmp / "a", DatasetHeader(1e6, 16, 0, PayloadKind.EPS), recs)
    h2, back = read_dataset(tmp / "a")
    write_dataset(tmp / "b", h2, back)
    assert (tmp / "a").read_bytes() == (tmp / "b").read_bytes()
    assert h2 == h


def test_iq_record_frame_round_trip():
    r = iq_record(seed=4)
    fr = r.to_frame()
    assert np.array_equal(Record.from_frame(fr).payload, r.payload)


def test_record_needs_id_and_u16():
    with pytest.raises(ValidationError):
        Record.from_frame(IQFrame(np.ones(4, dtype=complex)))
    with pytest.raises(ValidationError):
        Record(70000, DomainLabel(), np.zeros(2))


def test_payload_length_mismatch_rejected(tmp_path):
    with pytest.raises(ValidationError):
        write_dataset(tmp_path / "x", DatasetHeader(1.0, 4, 0, PayloadKind.EPS), [Record(1, DomainLabel(), np.ones(6))])


def _small(tmp_path, n=2):
    p = tmp_path / "s.epsf"
    write_dataset(p, DatasetHeader(1e6, 4, 0, PayloadKind.EPS),
                  [Record(i, DomainLabel(), np.arange(8) + i) for i in range(n)])
    return p


@pytest.mark.parametrize("offset,value,where", [(0, b"XXXX", 0), (4, struct.pack("<I", 2), 4),
                                                (8, struct.pack("<d", -1.0), 8), (16, struct.pack("<I", 0), 16),
                                                (24, b"\x09", 24)])
def test_corrupt_header_offsets(tmp_path, offset, value, where):
    p = _small(tmp_path)
    raw = bytearray(p.read_bytes())
    raw[offset:offset + len(value)] = value
    p.write_bytes(bytes(raw))
    with pytest.raises(DatasetFormatError) as info:
        read_dataset(p)
    assert info.value.offset == where
    assert f"byte offset {where}" in str(info.value)


def test_truncated_file(tmp_path):
    p = _small(tmp_path, 3)
    raw = p.read_bytes()
    p.write_bytes(raw[:-5])
    with pytest.raises(DatasetFormatError) as info:
        read_dataset(p)
    assert info.value.offset == 25 + 2 * (5 + 32)
    with pytest.raises(DatasetFormatError):
        read_dataset_via_stream(p)


def test_count_disagrees_with_length(tmp_path):
    p = _small(tmp_path, 2)
    raw = bytearray(p.read_bytes())
    raw[20:24] = struct.pack("<I", 1)
    p.write_bytes(bytes(raw))
    with pytest.raises(DatasetFormatError):
        read_dataset(p)
    with pytest.raises(DatasetFormatError):
        read_dataset_via_stream(p)


def test_short_header(tmp_path):
    (tmp_path / "x").write_bytes(b"EPSF")
    with pytest.raises(DatasetFormatError):
        read_dataset(tmp_path / "x")


def test_bad_channel_kind(tmp_path):
    p = _small(tmp_path, 1)
    raw = bytearray(p.read_bytes())
    raw[29] = 9
    p.write_bytes(bytes(raw))
    with pytest.raises(DatasetFormatError) as info:
        read_dataset(p)
    assert info.value.offset == 29


def read_dataset_via_stream(p):
    h, it = iter_dataset(p)
    return h, list(it)


def test_stream_matches_bulk(tmp_path):
    p = _small(tmp_path, 4)
    h1, a = read_dataset(p)
    h2, b = read_dataset_via_stream(p)
    assert h1 == h2 and all(np.array_equal(x.payload, y.payload) and x.domain == y.domain for x, y in zip(a, b))


# scenarios

def test_fixed_location_counts_and_labels(population):
    spec = ScenarioSpec("fixed-location")
    metas = [m for _, m in iter_scenario(population, spec, 100, seed=1)]
    assert len(metas) == 4500
    hist = collections.Counter((m.device_id, m.domain.location) for m in metas)
    assert set(hist.values()) == {100} and len(hist) == 45
    scales = {m.domain.location: m.amplitude_scale for m in metas}
    assert scales == {0: 1.0, 1: 0.6, 2: 0.35}


def test_build_scenario_deterministic(tmp_path, population):
    spec = ScenarioSpec("random-location")
    for name in ("a", "b"):
        save_scenario(tmp_path / f"{name}.epsf", build_scenario(population[:3], spec, 4, seed=5))
    assert (tmp_path / "a.epsf").read_bytes() == (tmp_path / "b.epsf").read_bytes()
    assert manifest_path(tmp_path / "a.epsf").read_bytes() == manifest_path(tmp_path / "b.epsf").read_bytes()
    m = load_manifest(tmp_path / "a.epsf")
    assert m["seed"] == 5 and len(m["devices"]) == 3 and len(m["frames"]) == 12
    assert ScenarioSpec.from_dict(m["scenario"]) == spec


def test_random_location_ranges(population):
    spec = ScenarioSpec("random-location")
    metas = [m for _, m in iter_scenario(population, spec, 40, seed=2)]
    scales = np.array([m.amplitude_scale for m in metas])
    delays = np.array([m.delay_samples for m in metas])
    assert scales.min() >= 0.3 and scales.max() <= 1.0 and np.ptp(scales) > 0.5
    assert delays.min() >= 0 and delays.max() <= 200
    assert all(m.domain.location == 3 for m in metas)


def test_cross_day_proxy(population):
    spec = ScenarioSpec("cross-day")
    metas = [m for _, m in iter_scenario(population[:4], spec, 2, seed=3)]
    days = collections.Counter(m.domain.day for m in metas)
    assert days == {0: 8, 1: 8, 2: 8}
    for m in metas:
        dev = population[m.device_id]
        if m.domain.day == 0:
            assert m.cfo_hz == dev.cfo_hz
        else:
            assert 0 < abs(m.cfo_hz / dev.cfo_hz - 1) <= 0.01
    assert day_cfo_factor(3, 0, 1, 0.01) == day_cfo_factor(3, 0, 1, 0.01)


def test_loc_a_equals_day_zero(population):
    a = [f for f, _ in iter_scenario(population[:2], ScenarioSpec("fixed-location"), 2, 9,
                                     [DomainLabel(0, 0)])]
    d = [f for f, _ in iter_scenario(population[:2], ScenarioSpec("cross-day"), 2, 9, [DomainLabel(0, 0)])]
    assert all(np.array_equal(x.samples, y.samples) for x, y in zip(a, d))


def test_snr_follows_scale(population):
    spec = ScenarioSpec("fixed-location")
    m = next(m for _, m in iter_scenario(population[:1], spec, 1, 0, [spec.domains()[2]]))
    assert m.snr_db == pytest.approx(30 + 20 * np.log10(0.35))


def test_random_phase_keeps_other_draws(population):
    a = [m for _, m in iter_scenario(population[:2], ScenarioSpec("random-location"), 3, 4)]
    b = [m for _, m in iter_scenario(population[:2], ScenarioSpec("random-location", random_phase=True), 3, 4)]
    for x, y in zip(a, b):
        assert (x.amplitude_scale, x.delay_samples, x.noise_seed) == (y.amplitude_scale, y.delay_samples, y.noise_seed)
        assert x.phase_rad == 0.0 and 0 <= y.phase_rad < 2 * np.pi


def test_scenario_errors(population):
    with pytest.raises(ValidationError):
        ScenarioSpec("mars")
    with pytest.raises(ValidationError):
        list(iter_scenario([], ScenarioSpec(), 1, 0))
    with pytest.raises(ValidationError):
        list(iter_scenario(population[:1], ScenarioSpec(), 1, 0, [DomainLabel(1, 0)]))
    with pytest.raises(ValidationError):
        list(iter_scenario(population[:1] * 2, ScenarioSpec(), 1, 0))
    with pytest.raises(ValidationError):
        ScenarioSpec.from_dict({"name": "fixed-location", "colour": 1})


def test_scenario_spec_json_round_trip():
    spec = ScenarioSpec("cross-day", random_phase=True, n_days=2)
    assert ScenarioSpec.from_dict(json.loads(json.dumps(spec.to_dict()))) == spec


def test_records_labelled_from_population(population):
    spec = ScenarioSpec("fixed-location")
    ds = build_scenario(population[:2], spec, 1, seed=0)
    ids = {d.device_id for d in population[:2]}
    assert all(r.device_id in ids and r.domain in spec.domains() for r in ds.records)
