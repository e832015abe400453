"""Double-sided envelope power spectrum (EPS) of an IQ frame.

Each rail goes through Hilbert envelope -> decimation -> lowpass smoothing ->
normalised periodogram, and the two rows are stacked into a ``2 x n_fft``
tensor. Every row sums to one, so the tensor does not change when the frame is
scaled.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dsp import decimate, envelope, lowpass_smooth, power_spectrum
from .errors import ValidationError
from .filters import FirFilter, default_hilbert, default_lowpass
from .waveform import FRAME_LEN, DomainLabel, IQFrame


@dataclass(frozen=True)
class EpsConfig:
    frame_len: int | None = FRAME_LEN
    decimation: int = 15
    n_fft: int = 4096
    hilbert: FirFilter | None = field(default=None, compare=False)
    lowpass: FirFilter | None = field(default=None, compare=False)

    def hilbert_filter(self) -> FirFilter:
        return self.hilbert or default_hilbert()

    def lowpass_filter(self) -> FirFilter:
        return self.lowpass or default_lowpass()


DEFAULT_CONFIG = EpsConfig()


@dataclass
class EpsTensor:
    eps_i: np.ndarray
    eps_q: np.ndarray
    resolution_hz: float
    source_device: int | None = None
    source_domain: DomainLabel | None = None

    def as_array(self) -> np.ndarray:
        return np.stack([self.eps_i, self.eps_q])

    def vector(self) -> np.ndarray:
        return np.concatenate([self.eps_i, self.eps_q])

    @property
    def n_fft(self) -> int:
        return self.eps_i.size

    def freq_axis_hz(self) -> np.ndarray:
        n = self.n_fft
        return (np.arange(n) - n // 2) * self.resolution_hz


def rail_eps(x, cfg: EpsConfig = DEFAULT_CONFIG):
    """EPS row of a single real rail; returns the :class:`PowerSpectrum`."""
    env = envelope(x, cfg.hilbert_filter())
    env = lowpass_smooth(decimate(env, cfg.decimation), cfg.lowpass_filter())
    return power_spectrum(env, cfg.n_fft)


def eps_of_frame(r: IQFrame, cfg: EpsConfig = DEFAULT_CONFIG) -> EpsTensor:
    """Compute the 2 x n_fft EPS tensor of an IQ frame.

    Raises:
        ValidationError: wrong frame length, or a rail that is constant after
            envelope extraction (its spectrum is undefined).
    """
    if cfg.frame_len is not None and len(r) != cfg.frame_len:
        raise ValidationError(f"frame has {len(r)} samples, pipeline expects {cfg.frame_len}")
    ps_i = rail_eps(r.rail("I"), cfg)
    ps_q = rail_eps(r.rail("Q"), cfg)
    return EpsTensor(eps_i=ps_i.bins, eps_q=ps_q.bins, resolution_hz=ps_i.resolution_hz,
                     source_device=r.device_id, source_domain=r.domain)


def eps_similarity(a: EpsTensor, b: EpsTensor) -> float:
    """Cosine similarity of the concatenated I/Q rows."""
    if a.eps_i.shape != b.eps_i.shape or a.eps_q.shape != b.eps_q.shape:
        raise ValidationError("EPS tensors have different shapes")
    if not np.isclose(a.resolution_hz, b.resolution_hz, rtol=1e-12):
        raise ValidationError("EPS tensors have different frequency resolution")
    return cosine(a.vector(), b.vector())


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise ValidationError("cosine similarity of a zero vector is undefined")
    return float(np.dot(u, v) / (nu * nv))


def dominant_peak_hz(eps_row: np.ndarray, resolution_hz: float, guard_bins: int = 5) -> float:
    """Frequency of the strongest bin at least ``guard_bins`` away from DC."""
    n = eps_row.size
    offsets = np.arange(n) - n // 2
    masked = np.where(np.abs(offsets) >= guard_bins, eps_row, -np.inf)
    return float(offsets[int(np.argmax(masked))] * resolution_hz)


def raw_iq_representation(r: IQFrame, window_len: int = 4096, offset: int = 0) -> np.ndarray:
    """Standardised ``2 x window_len`` raw I/Q window (the IQ-CNN input).

    Raises:
        ValidationError: the window does not fit, or a rail is constant over it
            (standardisation would divide by zero).
    """
    if window_len < 1 or offset < 0 or offset + window_len > len(r):
        raise ValidationError(f"window [{offset}, {offset + window_len}) exceeds frame of {len(r)}")
    w = r.samples[offset:offset + window_len]
    rails = np.stack([w.real, w.imag])
    mean = rails.mean(axis=1, keepdims=True)
    std = rails.std(axis=1, keepdims=True)
    if np.any(std <= 1e-12 * np.maximum(np.abs(mean), 1.0)):
        raise ValidationError("cannot standardise a constant rail")
    return (rails - mean) / std


def write_eps_table(path: str | Path, t: EpsTensor) -> None:
    """Plot-friendly text table with ``freq_hz eps_i eps_q`` columns."""
    freqs = t.freq_axis_hz()
    with open(path, "w") as fh:
        fh.write("# freq_hz eps_i eps_q\n")
        if t.source_device is not None:
            fh.write(f"# device {t.source_device}\n")
        for f, a, b in zip(freqs, t.eps_i, t.eps_q):
            fh.write(f"{f:.6f} {a:.9e} {b:.9e}\n")
