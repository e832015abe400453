"""Synthetic 802.11b-like transmitters, hardware impairments and channels.

The baseband is DBPSK spread by the 11-chip Barker code. Chips are laid on
the sample grid by ``floor(n / samples_per_chip)``, so non-integer ratios
(the default is the true 11 Mchip/s rate at 20 MS/s) are supported.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np
from scipy.signal import find_peaks

from .dsp import RealSequence, decimate, envelope, lowpass_smooth
from .errors import ValidationError
from .filters import FirFilter, default_hilbert, default_lowpass

SAMPLE_RATE_HZ = 20e6
FRAME_LEN = 25170
CHIP_RATE_HZ = 11e6
DEFAULT_SAMPLES_PER_CHIP = SAMPLE_RATE_HZ / CHIP_RATE_HZ
BARKER_11 = np.array([+1, -1, +1, +1, -1, +1, +1, +1, -1, -1, -1], dtype=np.float64)


class ChannelKind(enum.IntEnum):
    WIRED = 0
    WIRELESS = 1


@dataclass(frozen=True, order=True)
class DomainLabel:
    day: int = 0
    location: int = 0
    channel_kind: ChannelKind = ChannelKind.WIRELESS

    def __post_init__(self):
        for name in ("day", "location"):
            v = getattr(self, name)
            if not (0 <= int(v) <= 255):
                raise ValidationError(f"{name} must fit in an unsigned byte, got {v}")
        object.__setattr__(self, "channel_kind", ChannelKind(self.channel_kind))

    def name(self) -> str:
        return f"day{self.day}-loc{self.location}-{self.channel_kind.name.lower()}"


@dataclass
class IQFrame:
    """One complex baseband burst ``I + jQ``."""

    samples: np.ndarray
    sample_rate_hz: float = SAMPLE_RATE_HZ
    device_id: int | None = None
    domain: DomainLabel | None = None

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=np.complex128)
        if x.ndim != 1:
            raise ValidationError("IQ samples must be one-dimensional")
        if not np.all(np.isfinite(x)):
            raise ValidationError("IQ samples must be finite")
        if not self.sample_rate_hz > 0:
            raise ValidationError("sample_rate_hz must be positive")
        self.samples = x

    def __len__(self) -> int:
        return self.samples.size

    def rail(self, which: str) -> RealSequence:
        if which == "I":
            return RealSequence(self.samples.real, self.sample_rate_hz)
        if which == "Q":
            return RealSequence(self.samples.imag, self.sample_rate_hz)
        raise ValidationError(f"rail must be 'I' or 'Q', got {which!r}")

    def scaled(self, alpha: float) -> IQFrame:
        return replace(self, samples=self.samples * alpha)


@dataclass(frozen=True)
class DeviceProfile:
    """Hardware identity of one synthetic transmitter.

    A device that is not ``stabilized`` (still warming up) gets a random CFO
    excursion with standard deviation ``warmup_drift_hz`` on every frame.
    """

    device_id: int
    cfo_hz: float = 0.0
    iq_gain_imbalance_db: float = 0.0
    iq_phase_imbalance_rad: float = 0.0
    dc_offset: complex = 0j
    phase_noise_std_rad: float = 0.0
    stabilized: bool = True
    warmup_drift_hz: float = 0.0

    def __post_init__(self):
        if self.device_id < 0:
            raise ValidationError("device_id must be nonnegative")
        if self.phase_noise_std_rad < 0:
            raise ValidationError("phase_noise_std_rad must be nonnegative")
        if self.warmup_drift_hz < 0:
            raise ValidationError("warmup_drift_hz must be nonnegative")

    def to_dict(self) -> dict:
        return {
            "device_id": self.device_id,
            "cfo_hz": self.cfo_hz,
            "iq_gain_imbalance_db": self.iq_gain_imbalance_db,
            "iq_phase_imbalance_rad": self.iq_phase_imbalance_rad,
            "dc_offset": [self.dc_offset.real, self.dc_offset.imag],
            "phase_noise_std_rad": self.phase_noise_std_rad,
            "stabilized": self.stabilized,
            "warmup_drift_hz": self.warmup_drift_hz,
        }

    @classmethod
    def from_dict(cls, d: dict) -> DeviceProfile:
        d = dict(d)
        re, im = d.pop("dc_offset", (0.0, 0.0))
        return cls(dc_offset=complex(re, im), **d)


@dataclass(frozen=True)
class ChannelProfile:
    """Propagation between transmitter and receiver.

    ``snr_db`` is per-sample SNR relative to the (scaled) signal power; ``None``
    means noiseless. ``phase_rad`` is the carrier phase of the complex channel
    gain. ``multipath`` optionally holds complex FIR taps.
    """

    snr_db: float | None = None
    amplitude_scale: float = 1.0
    delay_samples: int = 0
    seed: int = 0
    phase_rad: float = 0.0
    multipath: tuple[complex, ...] | None = None

    def __post_init__(self):
        if not self.amplitude_scale > 0:
            raise ValidationError("amplitude_scale must be positive")
        if self.delay_samples < 0:
            raise ValidationError("delay_samples must be nonnegative")


def barker_autocorrelation() -> np.ndarray:
    """Aperiodic autocorrelation of the Barker-11 sequence, lags -10..10."""
    return np.correlate(BARKER_11, BARKER_11, mode="full")


def dbpsk_symbols(payload_bits) -> np.ndarray:
    """Differentially encode bits: a 1 flips the phase by pi, a 0 keeps it."""
    bits = np.asarray(payload_bits, dtype=np.int64).ravel()
    if bits.size == 0:
        raise ValidationError("payload must contain at least one bit")
    if np.any((bits != 0) & (bits != 1)):
        raise ValidationError("payload bits must be 0 or 1")
    return np.cumprod(1.0 - 2.0 * bits)


def generate_dsss_baseband(
    payload_bits,
    samples_per_chip: float = DEFAULT_SAMPLES_PER_CHIP,
    target_len: int = FRAME_LEN,
    sample_rate_hz: float = SAMPLE_RATE_HZ,
    pulse_filter: FirFilter | None = None,
) -> IQFrame:
    """DBPSK + Barker-11 baseband, repeated or truncated to ``target_len`` samples.

    Rectangular chips give ``|s(n)| = 1``. With ``pulse_filter`` the chips are
    smoothed by a lowpass FIR and the frame is rescaled to unit mean power.
    """
    if not samples_per_chip > 0:
        raise ValidationError("samples_per_chip must be positive")
    if target_len < samples_per_chip * BARKER_11.size:
        raise ValidationError("target_len must cover at least one Barker period")
    chips = (dbpsk_symbols(payload_bits)[:, None] * BARKER_11[None, :]).ravel()

    extra = 0 if pulse_filter is None else len(pulse_filter) - 1
    # exact rational arithmetic keeps chip boundaries on the right sample
    ratio = Fraction(samples_per_chip).limit_denominator(1_000_000)
    n = np.arange(target_len + extra, dtype=np.int64)
    idx = (n * ratio.denominator // ratio.numerator) % chips.size
    s = chips[idx]
    if pulse_filter is not None:
        if pulse_filter.kind != "lowpass":
            raise ValidationError("pulse_filter must be a lowpass filter")
        s = np.convolve(s, pulse_filter.taps, mode="valid")
        s = s / math.sqrt(np.mean(s * s))
    return IQFrame(s.astype(np.complex128), sample_rate_hz)


def _imbalance_epsilon(gain_db: float) -> float:
    # (1 + e/2) / (1 - e/2) equals the linear amplitude ratio.
    g = 10.0 ** (gain_db / 20.0)
    return 2.0 * (g - 1.0) / (g + 1.0)


def apply_impairments(s: IQFrame, d: DeviceProfile, seed: int | None = None) -> IQFrame:
    """Apply CFO, phase noise, IQ imbalance and DC offset of device ``d``."""
    fs = s.sample_rate_hz
    rng = np.random.default_rng(seed)
    cfo = d.cfo_hz
    if not d.stabilized and d.warmup_drift_hz > 0:
        cfo += rng.normal(0.0, d.warmup_drift_hz)
    if abs(cfo) >= fs / 4:
        raise ValidationError(f"|CFO| {abs(cfo):.1f} Hz must stay below fs/4 = {fs / 4:.1f} Hz")

    y = s.samples.copy()
    n = y.size
    if cfo != 0.0 or d.phase_noise_std_rad > 0.0:
        phase = 2.0 * np.pi * cfo * np.arange(n) / fs
        if d.phase_noise_std_rad > 0.0:
            walk = np.empty(n)
            walk[0] = 0.0
            np.cumsum(rng.normal(0.0, d.phase_noise_std_rad, n - 1), out=walk[1:])
            phase = phase + walk
        y = y * np.exp(1j * phase)

    eps = _imbalance_epsilon(d.iq_gain_imbalance_db)
    theta = d.iq_phase_imbalance_rad
    if eps != 0.0 or theta != 0.0:
        i, q = y.real, y.imag
        y = (1.0 + eps / 2) * i + 1j * ((1.0 - eps / 2) * (q * math.cos(theta) + i * math.sin(theta)))
    if d.dc_offset != 0:
        y = y + d.dc_offset
    return replace(s, samples=y, device_id=d.device_id)


def apply_channel(r: IQFrame, c: ChannelProfile) -> IQFrame:
    """Scale and rotate, optionally filter, delay (zero-prefix, tail trimmed) and add AWGN."""
    y = r.samples
    n = y.size
    if c.amplitude_scale != 1.0:
        y = y * c.amplitude_scale
    if c.phase_rad != 0.0:
        y = y * np.exp(1j * c.phase_rad)
    if c.multipath is not None:
        y = np.convolve(y, np.asarray(c.multipath, dtype=np.complex128))[:n]
    signal_power = float(np.mean(np.abs(y) ** 2))
    if c.delay_samples:
        d = min(c.delay_samples, n)
        y = np.concatenate([np.zeros(d, dtype=np.complex128), y[: n - d]])
    if c.snr_db is not None:
        rng = np.random.default_rng(c.seed)
        noise_var = signal_power / 10.0 ** (c.snr_db / 10.0)
        noise = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        y = y + math.sqrt(noise_var / 2.0) * noise
    elif y is r.samples:
        y = y.copy()
    return replace(r, samples=y)


@dataclass
class HumpAnalysis:
    """Smoothed envelope of one rail and the humps found on it.

    ``peak_samples`` are positions in the original (undecimated) sample grid.
    """

    envelope: np.ndarray
    envelope_times_s: np.ndarray
    peak_samples: np.ndarray
    raw_count: int
    count: int
    estimate: float = field(default=0.0)


def analyze_humps(
    component: RealSequence,
    h: FirFilter | None = None,
    smoother: FirFilter | None = None,
    decimation: int = 15,
    max_cfo_hz: float = 25e3,
    dip_level: float = 0.1,
) -> HumpAnalysis:
    """Find the CFO-induced humps on the envelope of one IQ rail.

    A hump is a local maximum of the smoothed envelope that reaches half the
    global maximum and rises at least half the global maximum above the
    surrounding dips. Peaks closer than ``1 / (4 max_cfo_hz)`` are merged.

    Filtering trims both ends of the frame, which hides partial humps there.
    The reported ``count`` therefore scales the mean hump period measured
    between the outermost peaks to the full frame. Long, slow beats may show
    fewer than two peaks; then the zeros between humps (dips reaching below
    ``dip_level`` of the maximum) supply the period instead, and a lone peak or
    dip counts as one hump.
    """
    h = h or default_hilbert()
    smoother = smoother or default_lowpass()
    env = lowpass_smooth(decimate(envelope(component, h), decimation), smoother)
    e = env.samples
    first_sample = h.group_delay_samples + decimation * smoother.group_delay_samples
    times = (first_sample + decimation * np.arange(e.size)) / component.sample_rate_hz

    top = float(np.max(e))
    peaks = dips = np.empty(0, dtype=np.int64)
    if top > 0:
        distance = max(1, int(env.sample_rate_hz / (4.0 * max_cfo_hz)))
        peaks, _ = find_peaks(e, height=0.5 * top, prominence=0.5 * top, distance=distance)
        if peaks.size < 2:
            dips, _ = find_peaks(-e, height=-dip_level * top, prominence=0.5 * top, distance=distance)
    n = len(component)
    if peaks.size >= 2:
        estimate = n * (peaks.size - 1) / (decimation * float(peaks[-1] - peaks[0]))
    elif dips.size >= 2:
        estimate = n * (dips.size - 1) / (decimation * float(dips[-1] - dips[0]))
    elif peaks.size + dips.size == 2:
        # one peak and one dip are half a hump apart
        estimate = n / (2.0 * decimation * abs(float(peaks[0] - dips[0])))
    else:
        estimate = float(peaks.size + dips.size)
    return HumpAnalysis(envelope=e, envelope_times_s=times,
                        peak_samples=first_sample + decimation * peaks,
                        raw_count=int(peaks.size), count=int(round(estimate)), estimate=estimate)


def count_envelope_humps(
    component: RealSequence,
    h: FirFilter | None = None,
    smoother: FirFilter | None = None,
    decimation: int = 15,
    max_cfo_hz: float = 25e3,
) -> int:
    """Number of envelope humps on an IQ rail; estimates ``round(2 |cfo| T)``."""
    return analyze_humps(component, h, smoother, decimation, max_cfo_hz).count


def cfo_magnitude_grid(lo_hz: float = 2e3, hi_hz: float = 25e3, step_hz: float = 1.5e3) -> np.ndarray:
    return np.arange(lo_hz, hi_hz + 1e-9, step_hz)


def _draw_device(rng, device_id, cfo_magnitude_hz, gain_imbalance_db, phase_imbalance_deg,
                 max_dc_offset, phase_noise_std_rad) -> DeviceProfile:
    sign = 1.0 if rng.random() < 0.5 else -1.0
    dc = max_dc_offset * math.sqrt(rng.random()) * np.exp(2j * np.pi * rng.random())
    return DeviceProfile(
        device_id=device_id,
        cfo_hz=float(sign * cfo_magnitude_hz),
        iq_gain_imbalance_db=float(rng.uniform(-gain_imbalance_db, gain_imbalance_db)),
        iq_phase_imbalance_rad=float(np.deg2rad(rng.uniform(-phase_imbalance_deg, phase_imbalance_deg))),
        dc_offset=complex(dc),
        phase_noise_std_rad=phase_noise_std_rad,
    )


def default_population(
    n_devices: int = 15,
    seed: int = 2024,
    cfo_grid_hz: np.ndarray | None = None,
    gain_imbalance_db: float = 0.5,
    phase_imbalance_deg: float = 2.0,
    max_dc_offset: float = 0.01,
    phase_noise_std_rad: float = 1e-4,
    first_id: int = 0,
) -> list[DeviceProfile]:
    """Synthetic fleet with distinct CFO magnitudes drawn from a grid.

    The envelope spectrum cannot tell ``+f`` from ``-f``, so the grid holds CFO
    magnitudes and each device gets a random sign on top.
    """
    grid = cfo_magnitude_grid() if cfo_grid_hz is None else np.asarray(cfo_grid_hz, dtype=float)
    if n_devices > grid.size:
        raise ValidationError(f"CFO grid has {grid.size} slots for {n_devices} devices")
    rng = np.random.default_rng(seed)
    mags = rng.choice(grid, size=n_devices, replace=False)
    return [_draw_device(rng, first_id + i, mag, gain_imbalance_db, phase_imbalance_deg,
                         max_dc_offset, phase_noise_std_rad)
            for i, mag in enumerate(mags)]


def rogue_population(
    enrolled: list[DeviceProfile],
    n_devices: int = 5,
    min_separation_hz: float = 3e3,
    cfo_range_hz: tuple[float, float] = (2e3, 45e3),
    seed: int = 7,
    first_id: int = 1000,
) -> list[DeviceProfile]:
    """Devices whose CFO magnitude sits at least ``min_separation_hz`` away from
    every enrolled device and from each other."""
    rng = np.random.default_rng(seed)
    taken = [abs(d.cfo_hz) for d in enrolled]
    candidates = np.arange(cfo_range_hz[0], cfo_range_hz[1] + 1e-9, 250.0)
    rng.shuffle(candidates)
    mags: list[float] = []
    for c in candidates:
        if all(abs(c - t) >= min_separation_hz for t in taken + mags):
            mags.append(float(c))
        if len(mags) == n_devices:
            break
    if len(mags) < n_devices:
        raise ValidationError("CFO range too crowded for the requested rogue devices")
    return [_draw_device(rng, first_id + i, mag, 0.5, 2.0, 0.01, 1e-4) for i, mag in enumerate(mags)]


FIGURE3_CFOS_HZ = (0.0, 50.0, 100.0, 200.0)
FIGURE3_DURATION_S = 10e-3


def cfo_demo_frame(cfo_hz: float, duration_s: float = FIGURE3_DURATION_S,
                   sample_rate_hz: float = SAMPLE_RATE_HZ, device: DeviceProfile | None = None) -> IQFrame:
    """Constant-modulus burst (all-zero payload) of ``duration_s`` with a given CFO.

    ``device`` overrides the impairments; its ``cfo_hz`` is replaced by ``cfo_hz``.
    """
    n = int(round(duration_s * sample_rate_hz))
    bits_needed = int(math.ceil(n / (DEFAULT_SAMPLES_PER_CHIP * BARKER_11.size))) + 1
    s = generate_dsss_baseband(np.zeros(bits_needed, dtype=np.int64), DEFAULT_SAMPLES_PER_CHIP, n, sample_rate_hz)
    d = replace(device, cfo_hz=cfo_hz) if device is not None else DeviceProfile(0, cfo_hz=cfo_hz)
    return apply_impairments(s, d, seed=0)


def figure3_humps(cfos_hz=FIGURE3_CFOS_HZ, duration_s: float = FIGURE3_DURATION_S,
                  sample_rate_hz: float = SAMPLE_RATE_HZ) -> list[tuple[float, HumpAnalysis]]:
    """Hump analysis of the I rail for each CFO of the long-duration sweep.

    The minimum peak spacing assumes CFOs up to 1.25 times the largest one swept.
    """
    max_cfo = 1.25 * max(max(abs(c) for c in cfos_hz), 1.0)
    out = []
    for c in cfos_hz:
        fr = cfo_demo_frame(c, duration_s, sample_rate_hz)
        out.append((float(c), analyze_humps(fr.rail("I"), max_cfo_hz=max_cfo)))
    return out
