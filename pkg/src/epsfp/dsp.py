"""Deterministic signal-processing primitives for envelope spectra.

All functions are pure. Filtering uses full-overlap ("valid") convolution so no
zero-padded edge transients ever reach the spectrum.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .filters import FirFilter


@dataclass(frozen=True)
class RealSequence:
    """A real-valued sampled signal (one IQ rail, or an envelope)."""

    samples: np.ndarray
    sample_rate_hz: float

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=np.float64)
        if x.ndim != 1:
            raise ValidationError("samples must be one-dimensional")
        if not np.all(np.isfinite(x)):
            raise ValidationError("samples must be finite")
        if not self.sample_rate_hz > 0:
            raise ValidationError(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")
        object.__setattr__(self, "samples", x)

    def __len__(self) -> int:
        return self.samples.size


class EnvelopeSignal(RealSequence):
    """Magnitude of an analytic signal, possibly decimated and smoothed."""


@dataclass(frozen=True)
class PowerSpectrum:
    """Double-sided, zero-centred spectrum; ``bins[n_fft // 2]`` is DC.

    ``total_power`` is the bin sum before normalisation, kept for energy checks.
    """

    bins: np.ndarray
    freq_axis_hz: np.ndarray
    resolution_hz: float
    total_power: float

    def __len__(self) -> int:
        return self.bins.size


def _require_kind(h: FirFilter, kind: str) -> None:
    if h.kind != kind:
        raise ValidationError(f"expected a {kind} filter, got {h.kind}")


def analytic_signal(x: RealSequence, h: FirFilter) -> np.ndarray:
    """``x(n - D) + j (h * x)(n)`` over the full-overlap region.

    The result has ``len(x) - 2 D`` samples, ``D`` being the Hilbert group delay.
    """
    _require_kind(h, "hilbert")
    if len(x) <= len(h):
        raise ValidationError(f"input of {len(x)} samples is not longer than the {len(h)}-tap filter")
    d = h.group_delay_samples
    quad = np.convolve(x.samples, h.taps, mode="valid")
    return x.samples[d:len(x) - d] + 1j * quad


def envelope(x: RealSequence, h: FirFilter) -> EnvelopeSignal:
    return EnvelopeSignal(np.abs(analytic_signal(x, h)), x.sample_rate_hz)


def decimate(e: EnvelopeSignal, factor: int) -> EnvelopeSignal:
    """Keep every ``factor``-th sample from index 0; a trailing partial block is dropped."""
    if int(factor) != factor or factor < 1:
        raise ValidationError(f"decimation factor must be a positive integer, got {factor}")
    factor = int(factor)
    if len(e) < factor:
        raise ValidationError(f"envelope of {len(e)} samples is shorter than factor {factor}")
    n = (len(e) // factor) * factor
    return EnvelopeSignal(e.samples[:n:factor], e.sample_rate_hz / factor)


def lowpass_smooth(e: EnvelopeSignal, h: FirFilter) -> EnvelopeSignal:
    """Zero-phase smoothing with a symmetric FIR.

    The taps are rescaled to unit DC gain, and the ``(L - 1) / 2``-sample delay
    is removed by keeping only the full-overlap region, so the output is
    ``L - 1`` samples shorter than the input.
    """
    _require_kind(h, "lowpass")
    if len(e) < len(h):
        raise ValidationError(f"envelope of {len(e)} samples is shorter than the {len(h)}-tap filter")
    taps = h.taps / np.sum(h.taps)
    return EnvelopeSignal(np.convolve(e.samples, taps, mode="valid"), e.sample_rate_hz)


def power_spectrum(e: RealSequence, n_fft: int = 4096) -> PowerSpectrum:
    """Normalised double-sided periodogram of a mean-removed, Hann-windowed sequence.

    Raises:
        ValidationError: ``n_fft`` is not a power of two, the input is longer than
            ``n_fft``, or the input is constant (nothing left after centring).
    """
    if n_fft < 2 or n_fft & (n_fft - 1):
        raise ValidationError(f"n_fft must be a power of two, got {n_fft}")
    if len(e) > n_fft:
        raise ValidationError(
            f"sequence of {len(e)} samples exceeds n_fft={n_fft}; decimate or trim it first"
        )
    x = e.samples
    centred = x - np.mean(x)
    scale = np.max(np.abs(x)) if x.size else 0.0
    if x.size == 0 or np.max(np.abs(centred)) <= 1e-12 * max(scale, np.finfo(float).tiny):
        raise ValidationError("sequence is constant after centring; spectrum undefined")
    windowed = centred * np.hanning(x.size)
    raw = np.abs(np.fft.fft(windowed, n_fft)) ** 2
    total = float(np.sum(raw))
    bins = np.fft.fftshift(raw) / total
    res = e.sample_rate_hz / n_fft
    freqs = (np.arange(n_fft) - n_fft // 2) * res
    return PowerSpectrum(bins=bins, freq_axis_hz=freqs, resolution_hz=res, total_power=total)
