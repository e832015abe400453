"""Binary IQ/EPS datasets and builders for the synthetic evaluation scenarios.

File layout (all little-endian)::

    header   magic "EPSF" | version u32 | sample_rate f64 | frame_len u32 |
             record_count u32 | payload_kind u8                     (25 bytes)
    record   device_id u16 | day u8 | location u8 | channel_kind u8 |
             payload f32[2 * frame_len]

For IQ payloads ``frame_len`` is the number of complex samples and the payload
interleaves ``I0, Q0, I1, Q1, ...``. For EPS payloads ``frame_len`` is the row
length (``n_fft``) and the payload is ``eps_i`` followed by ``eps_q``.
"""

from __future__ import annotations

import enum
import json
import math
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .errors import DatasetFormatError, ValidationError
from .waveform import (FRAME_LEN, SAMPLE_RATE_HZ, ChannelKind, ChannelProfile, DeviceProfile,
                       DomainLabel, IQFrame, apply_channel, apply_impairments, generate_dsss_baseband)

MAGIC = b"EPSF"
VERSION = 1
_HEADER = struct.Struct("<4sIdIIB")
_RECORD = struct.Struct("<HBBB")
HEADER_BYTES = _HEADER.size
RECORD_HEADER_BYTES = _RECORD.size


class PayloadKind(enum.IntEnum):
    IQ = 0
    EPS = 1


@dataclass(frozen=True)
class DatasetHeader:
    sample_rate_hz: float
    frame_len: int
    record_count: int
    payload_kind: PayloadKind
    version: int = VERSION

    @property
    def payload_bytes(self) -> int:
        return 8 * self.frame_len

    @property
    def record_bytes(self) -> int:
        return RECORD_HEADER_BYTES + self.payload_bytes


@dataclass
class Record:
    """One labelled payload, stored as float32 exactly as it sits on disk."""

    device_id: int
    domain: DomainLabel
    payload: np.ndarray

    def __post_init__(self):
        if not 0 <= self.device_id <= 0xFFFF:
            raise ValidationError(f"device_id {self.device_id} does not fit in u16")
        self.payload = np.ascontiguousarray(self.payload, dtype="<f4").ravel()

    @classmethod
    def from_frame(cls, frame: IQFrame) -> Record:
        inter = np.empty(2 * len(frame), dtype="<f4")
        inter[0::2] = frame.samples.real
        inter[1::2] = frame.samples.imag
        return cls(_require_id(frame.device_id), frame.domain or DomainLabel(), inter)

    @classmethod
    def from_eps(cls, eps) -> Record:
        return cls(_require_id(eps.source_device), eps.source_domain or DomainLabel(),
                   np.concatenate([eps.eps_i, eps.eps_q]))

    def to_frame(self, sample_rate_hz: float = SAMPLE_RATE_HZ) -> IQFrame:
        p = self.payload.astype(np.float64)
        return IQFrame(p[0::2] + 1j * p[1::2], sample_rate_hz, self.device_id, self.domain)

    def eps_rows(self) -> np.ndarray:
        return self.payload.reshape(2, -1)


def _require_id(device_id):
    if device_id is None:
        raise ValidationError("records need a device_id")
    return int(device_id)


def _encode_header(h: DatasetHeader) -> bytes:
    return _HEADER.pack(MAGIC, h.version, h.sample_rate_hz, h.frame_len, h.record_count, int(h.payload_kind))


def write_dataset(path: str | Path, header: DatasetHeader, records: Iterable[Record]) -> DatasetHeader:
    """Write a dataset; the header's record_count is fixed up to the records written.

    Returns the header actually stored.
    """
    count = 0
    with open(path, "wb") as fh:
        fh.write(_encode_header(replace(header, record_count=0)))
        for rec in records:
            if rec.payload.size != 2 * header.frame_len:
                raise ValidationError(
                    f"record {count} has {rec.payload.size} values, header expects {2 * header.frame_len}")
            d = rec.domain
            fh.write(_RECORD.pack(rec.device_id, d.day, d.location, int(d.channel_kind)))
            fh.write(rec.payload.tobytes())
            count += 1
        final = replace(header, record_count=count)
        fh.seek(0)
        fh.write(_encode_header(final))
    return final


def read_header(data: bytes) -> DatasetHeader:
    if len(data) < HEADER_BYTES:
        raise DatasetFormatError("file shorter than the header", len(data))
    magic, version, fs, frame_len, count, kind = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise DatasetFormatError(f"bad magic {magic!r}", 0)
    if version != VERSION:
        raise DatasetFormatError(f"unsupported version {version}", 4)
    if not (math.isfinite(fs) and fs > 0):
        raise DatasetFormatError(f"invalid sample rate {fs}", 8)
    if frame_len == 0:
        raise DatasetFormatError("frame_len is zero", 16)
    try:
        kind = PayloadKind(kind)
    except ValueError:
        raise DatasetFormatError(f"unknown payload kind {kind}", 24) from None
    return DatasetHeader(fs, frame_len, count, kind, version)


def read_dataset(path: str | Path) -> tuple[DatasetHeader, list[Record]]:
    """Parse a dataset file, rejecting any inconsistency with its byte offset."""
    data = Path(path).read_bytes()
    header = read_header(data)
    expected = HEADER_BYTES + header.record_count * header.record_bytes
    if len(data) != expected:
        # point at the first record that is incomplete or superfluous
        n_full = (len(data) - HEADER_BYTES) // header.record_bytes
        offset = HEADER_BYTES + min(n_full, header.record_count) * header.record_bytes
        raise DatasetFormatError(
            f"declared {header.record_count} records ({expected} bytes) but file has {len(data)} bytes",
            offset)
    records = []
    pos = HEADER_BYTES
    for _ in range(header.record_count):
        dev, day, loc, ck = _RECORD.unpack_from(data, pos)
        try:
            domain = DomainLabel(day, loc, ChannelKind(ck))
        except ValueError:
            raise DatasetFormatError(f"unknown channel kind {ck}", pos + 4) from None
        payload = np.frombuffer(data, dtype="<f4", count=2 * header.frame_len, offset=pos + RECORD_HEADER_BYTES)
        records.append(Record(dev, domain, payload.copy()))
        pos += header.record_bytes
    return header, records


def iter_dataset(path: str | Path) -> tuple[DatasetHeader, Iterator[Record]]:
    """Header plus a lazy record iterator that holds one record in memory at a time.

    Truncation is reported (with its byte offset) when the iterator reaches it.
    """
    fh = open(path, "rb")
    try:
        header = read_header(fh.read(HEADER_BYTES))
    except Exception:
        fh.close()
        raise

    def records() -> Iterator[Record]:
        with fh:
            pos = HEADER_BYTES
            for _ in range(header.record_count):
                buf = fh.read(header.record_bytes)
                if len(buf) != header.record_bytes:
                    raise DatasetFormatError("record truncated", pos + len(buf))
                dev, day, loc, ck = _RECORD.unpack_from(buf, 0)
                try:
                    domain = DomainLabel(day, loc, ChannelKind(ck))
                except ValueError:
                    raise DatasetFormatError(f"unknown channel kind {ck}", pos + 4) from None
                payload = np.frombuffer(buf, dtype="<f4", offset=RECORD_HEADER_BYTES).copy()
                yield Record(dev, domain, payload)
                pos += header.record_bytes
            if fh.read(1):
                raise DatasetFormatError("trailing bytes after the last record", pos)

    return header, records()


# scenarios

LOCATION_NAMES = ("A", "B", "C")
RANDOM_LOCATION = 3


@dataclass(frozen=True)
class LocationSpec:
    name: str
    amplitude_scale: float
    delay_range: tuple[int, int]


DEFAULT_LOCATIONS = (
    LocationSpec("A", 1.0, (0, 8)),
    LocationSpec("B", 0.6, (64, 128)),
    LocationSpec("C", 0.35, (136, 200)),
)

SCENARIOS = ("fixed-location", "random-location", "cross-day")


@dataclass(frozen=True)
class ScenarioSpec:
    """Channel and day proxies for one experimental scenario.

    Received SNR is ``reference_snr_db + 20 log10(scale)`` when
    ``snr_follows_scale`` (a fixed receiver noise floor), otherwise constant.
    Days after day 0 shift every device's CFO by a per-(device, day) factor
    drawn uniformly from ``+-cfo_jitter_frac``.
    """

    name: str = "fixed-location"
    locations: tuple[LocationSpec, ...] = DEFAULT_LOCATIONS
    random_scale_range: tuple[float, float] = (0.3, 1.0)
    random_delay_range: tuple[int, int] = (0, 200)
    n_days: int = 3
    day_location: int = 0
    random_phase: bool = False
    cfo_jitter_frac: float = 0.01
    reference_snr_db: float | None = 30.0
    snr_follows_scale: bool = True
    payload_bits: int = 1300
    payload_seed: int = 11
    samples_per_chip: float = SAMPLE_RATE_HZ / 11e6
    frame_len: int = FRAME_LEN
    sample_rate_hz: float = SAMPLE_RATE_HZ
    channel_kind: ChannelKind = ChannelKind.WIRELESS

    def __post_init__(self):
        if self.name not in SCENARIOS:
            raise ValidationError(f"unknown scenario {self.name!r}; expected one of {SCENARIOS}")
        object.__setattr__(self, "locations", tuple(
            l if isinstance(l, LocationSpec) else LocationSpec(l["name"], l["amplitude_scale"],
                                                               tuple(l["delay_range"]))
            for l in self.locations))
        object.__setattr__(self, "channel_kind", ChannelKind(self.channel_kind))
        lo, hi = self.random_scale_range
        if not 0 < lo <= hi:
            raise ValidationError("random_scale_range must satisfy 0 < lo <= hi")
        for lo_d, hi_d in [self.random_delay_range] + [l.delay_range for l in self.locations]:
            if not 0 <= lo_d <= hi_d:
                raise ValidationError("delay ranges must satisfy 0 <= lo <= hi")
        if self.n_days < 1 or not 0 <= self.day_location < len(self.locations):
            raise ValidationError("invalid day settings")

    def domains(self) -> list[DomainLabel]:
        ck = self.channel_kind
        if self.name == "fixed-location":
            return [DomainLabel(0, i, ck) for i in range(len(self.locations))]
        if self.name == "random-location":
            return [DomainLabel(0, RANDOM_LOCATION, ck)]
        return [DomainLabel(d, self.day_location, ck) for d in range(self.n_days)]

    def payload(self) -> np.ndarray:
        return np.random.default_rng(self.payload_seed).integers(0, 2, self.payload_bits)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["locations"] = [asdict(l) for l in self.locations]
        d["channel_kind"] = self.channel_kind.name.lower()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> ScenarioSpec:
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValidationError(f"unknown scenario keys: {sorted(unknown)}")
        if isinstance(d.get("channel_kind"), str):
            d["channel_kind"] = ChannelKind[d["channel_kind"].upper()]
        for k in ("random_scale_range", "random_delay_range"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


@dataclass(frozen=True)
class FrameMeta:
    device_id: int
    domain: DomainLabel
    index: int
    amplitude_scale: float
    delay_samples: int
    snr_db: float | None
    phase_rad: float
    cfo_hz: float
    impairment_seed: int
    noise_seed: int

    def to_dict(self) -> dict:
        d = asdict(self)
        d["domain"] = [self.domain.day, self.domain.location, int(self.domain.channel_kind)]
        return d


def day_cfo_factor(seed: int, device_id: int, day: int, jitter_frac: float) -> float:
    if day == 0 or jitter_frac == 0:
        return 1.0
    rng = np.random.default_rng([seed, device_id, day, 0xDA7])
    return 1.0 + float(rng.uniform(-jitter_frac, jitter_frac))


def frame_meta(spec: ScenarioSpec, device: DeviceProfile, domain: DomainLabel, index: int,
               seed: int) -> FrameMeta:
    """Channel draw for one frame; depends only on its labels and the seed."""
    rng = np.random.default_rng([seed, device.device_id, domain.day, domain.location, index])
    if domain.location == RANDOM_LOCATION:
        scale = float(rng.uniform(*spec.random_scale_range))
        delay = int(rng.integers(spec.random_delay_range[0], spec.random_delay_range[1] + 1))
    else:
        loc = spec.locations[domain.location]
        scale = float(loc.amplitude_scale)
        delay = int(rng.integers(loc.delay_range[0], loc.delay_range[1] + 1))
    snr = spec.reference_snr_db
    if snr is not None and spec.snr_follows_scale:
        snr = snr + 20.0 * math.log10(scale)
    phase = float(rng.uniform(0.0, 2.0 * np.pi))
    if not spec.random_phase:
        phase = 0.0
    imp_seed, noise_seed = (int(s) for s in rng.integers(0, 2 ** 63, 2))
    cfo = device.cfo_hz * day_cfo_factor(seed, device.device_id, domain.day, spec.cfo_jitter_frac)
    return FrameMeta(device.device_id, domain, index, scale, delay, snr, phase, cfo, imp_seed, noise_seed)


def synthesize(spec: ScenarioSpec, device: DeviceProfile, meta: FrameMeta,
               baseband: IQFrame | None = None) -> IQFrame:
    s = baseband if baseband is not None else scenario_baseband(spec)
    dev = replace(device, cfo_hz=meta.cfo_hz)
    r = apply_impairments(s, dev, seed=meta.impairment_seed)
    r = apply_channel(r, ChannelProfile(meta.snr_db, meta.amplitude_scale, meta.delay_samples, meta.noise_seed,
                                        meta.phase_rad))
    return replace(r, domain=meta.domain)


def scenario_baseband(spec: ScenarioSpec) -> IQFrame:
    """Every device sends the same packet."""
    return generate_dsss_baseband(spec.payload(), spec.samples_per_chip, spec.frame_len, spec.sample_rate_hz)


def iter_scenario(population: list[DeviceProfile], spec: ScenarioSpec, frames_per_device_per_domain: int,
                  seed: int, domains: list[DomainLabel] | None = None) -> Iterator[tuple[IQFrame, FrameMeta]]:
    """Yield ``(frame, meta)`` in domain, device, index order."""
    if not population:
        raise ValidationError("population is empty")
    if frames_per_device_per_domain < 1:
        raise ValidationError("frames_per_device_per_domain must be positive")
    ids = [d.device_id for d in population]
    if len(set(ids)) != len(ids):
        raise ValidationError("duplicate device ids in population")
    allowed = spec.domains()
    domains = allowed if domains is None else domains
    for dom in domains:
        if dom not in allowed:
            raise ValidationError(f"domain {dom.name()} is not part of scenario {spec.name}")
    base = scenario_baseband(spec)
    for dom in domains:
        for dev in population:
            for k in range(frames_per_device_per_domain):
                meta = frame_meta(spec, dev, dom, k, seed)
                yield synthesize(spec, dev, meta, base), meta


@dataclass
class ScenarioDataset:
    header: DatasetHeader
    records: list[Record]
    metas: list[FrameMeta]
    manifest: dict = field(default_factory=dict)


def build_manifest(population, spec: ScenarioSpec, frames: int, seed: int, metas=None) -> dict:
    from . import __version__

    m = {
        "tool": "epsfp",
        "version": __version__,
        "seed": seed,
        "frames_per_device_per_domain": frames,
        "scenario": spec.to_dict(),
        "domains": [[d.day, d.location, int(d.channel_kind)] for d in spec.domains()],
        "devices": [d.to_dict() for d in population],
    }
    if metas is not None:
        m["frames"] = [x.to_dict() for x in metas]
    return m


def build_scenario(population: list[DeviceProfile], spec: ScenarioSpec, frames_per_device_per_domain: int,
                   seed: int) -> ScenarioDataset:
    """Materialise a scenario as IQ records (float32) with per-frame metadata."""
    records, metas = [], []
    for frame, meta in iter_scenario(population, spec, frames_per_device_per_domain, seed):
        records.append(Record.from_frame(frame))
        metas.append(meta)
    header = DatasetHeader(spec.sample_rate_hz, spec.frame_len, len(records), PayloadKind.IQ)
    return ScenarioDataset(header, records, metas,
                           build_manifest(population, spec, frames_per_device_per_domain, seed, metas))


def manifest_path(path: str | Path) -> Path:
    p = Path(path)
    return p.with_name(p.name + ".json")


def save_scenario(path: str | Path, ds: ScenarioDataset) -> None:
    write_dataset(path, ds.header, ds.records)
    manifest_path(path).write_text(json.dumps(ds.manifest, indent=1, sort_keys=True) + "\n")


def load_manifest(path: str | Path) -> dict:
    return json.loads(manifest_path(path).read_text())
