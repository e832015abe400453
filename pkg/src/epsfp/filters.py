"""Equiripple FIR design by Remez exchange.

Two linear-phase families are supported:

* ``lowpass`` -- type I (odd length, symmetric taps), amplitude
  ``A(w) = sum_k a_k cos(k w)``.
* ``hilbert`` -- type III (odd length, antisymmetric taps), amplitude
  ``A(w) = sum_k b_k sin(k w)``; with desired amplitude 1 the filter maps
  ``cos(w0 n)`` to ``sin(w0 (n - D))``, ``D = (L - 1) / 2``.

Band edges are normalised to Nyquist, i.e. ``1.0`` is ``fs / 2``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .errors import RemezConvergenceError, ValidationError

FILTER_KINDS = ("hilbert", "lowpass")

# Design grid density: grid points per basis function over [0, pi].
GRID_DENSITY = 256
# The reported ripple is measured on a grid this many times finer than the design grid.
VERIFY_REFINEMENT = 16


@dataclass(frozen=True)
class FirDesign:
    """Band specification handed to :func:`design_fir_remez`."""

    numtaps: int
    bands: tuple[tuple[float, float], ...]
    desired: tuple[float, ...]
    weights: tuple[float, ...]
    kind: str

    def validate(self) -> None:
        if self.kind not in FILTER_KINDS:
            raise ValidationError(f"unknown filter kind {self.kind!r}")
        if self.numtaps < 3 or self.numtaps % 2 == 0:
            raise ValidationError(f"numtaps must be odd and >= 3, got {self.numtaps}")
        if not self.bands:
            raise ValidationError("at least one band is required")
        if not (len(self.bands) == len(self.desired) == len(self.weights)):
            raise ValidationError("bands, desired and weights must have equal length")
        prev_hi = -np.inf
        for lo, hi in self.bands:
            if not (0.0 <= lo < hi <= 1.0):
                raise ValidationError(f"band ({lo}, {hi}) must satisfy 0 <= lo < hi <= 1")
            if lo <= prev_hi:
                raise ValidationError(
                    f"band ({lo}, {hi}) overlaps or touches the previous band: "
                    "transition band is empty"
                )
            prev_hi = hi
        if any(w <= 0 for w in self.weights):
            raise ValidationError("band weights must be positive")
        if self.kind == "hilbert" and (self.bands[0][0] <= 0.0 or self.bands[-1][1] >= 1.0):
            raise ValidationError("type-III amplitude vanishes at 0 and Nyquist; keep bands inside (0, 1)")

    @property
    def half_order(self) -> int:
        return (self.numtaps - 1) // 2

    def to_dict(self) -> dict:
        return {
            "numtaps": self.numtaps,
            "bands": [list(b) for b in self.bands],
            "desired": list(self.desired),
            "weights": list(self.weights),
            "kind": self.kind,
        }

    @classmethod
    def from_dict(cls, d: dict) -> FirDesign:
        return cls(
            numtaps=int(d["numtaps"]),
            bands=tuple((float(lo), float(hi)) for lo, hi in d["bands"]),
            desired=tuple(float(x) for x in d["desired"]),
            weights=tuple(float(x) for x in d["weights"]),
            kind=str(d["kind"]),
        )


@dataclass(frozen=True)
class FirFilter:
    """A designed linear-phase FIR filter.

    ``ripple`` is the achieved maximum weighted error; in band ``i`` the
    amplitude deviates from the desired value by at most ``ripple / weights[i]``.
    """

    taps: np.ndarray
    kind: str
    group_delay_samples: int
    design: FirDesign
    ripple: float = 0.0
    iterations: int = 0
    extremal_freqs: np.ndarray = field(default_factory=lambda: np.empty(0), repr=False)

    def __post_init__(self):
        taps = np.asarray(self.taps, dtype=np.float64)
        if taps.ndim != 1 or taps.size % 2 == 0:
            raise ValidationError("taps must be a 1-D array of odd length")
        if not np.all(np.isfinite(taps)):
            raise ValidationError("taps must be finite")
        taps.setflags(write=False)
        object.__setattr__(self, "taps", taps)

    def __len__(self) -> int:
        return self.taps.size

    def amplitude(self, omega: np.ndarray) -> np.ndarray:
        """Real zero-phase amplitude ``A(w)`` at angular frequencies ``omega`` (rad/sample)."""
        omega = np.asarray(omega, dtype=np.float64)
        m = self.group_delay_samples
        k = np.arange(1, m + 1)
        if self.kind == "lowpass":
            coef = np.concatenate([[self.taps[m]], 2.0 * self.taps[m + 1:]])
            return np.cos(np.outer(omega, np.arange(m + 1))) @ coef
        return np.sin(np.outer(omega, k)) @ (2.0 * self.taps[m + 1:])


def _basis_orders(design: FirDesign, halfband: bool) -> np.ndarray:
    m = design.half_order
    if design.kind == "lowpass":
        return np.arange(0, m + 1)
    if halfband:
        return np.arange(1, m + 1, 2)
    return np.arange(1, m + 1)


def _basis(kind: str, omega: np.ndarray, orders: np.ndarray) -> np.ndarray:
    arg = np.outer(omega, orders)
    return np.cos(arg) if kind == "lowpass" else np.sin(arg)


def _is_halfband_hilbert(design: FirDesign) -> bool:
    if design.kind != "hilbert" or len(design.bands) != 1:
        return False
    lo, hi = design.bands[0]
    return abs((lo + hi) - 1.0) < 1e-12


def _build_grid(bands, desired, weights, step):
    """Dense frequency grid (rad/sample) with per-point desired value, weight and band id."""
    omegas, ds, ws, ids = [], [], [], []
    for i, ((lo, hi), d, w) in enumerate(zip(bands, desired, weights)):
        a, b = lo * np.pi, hi * np.pi
        n = max(int(np.ceil((b - a) / step)) + 1, 2)
        g = np.linspace(a, b, n)
        omegas.append(g)
        ds.append(np.full(n, d, dtype=np.float64))
        ws.append(np.full(n, w, dtype=np.float64))
        ids.append(np.full(n, i, dtype=np.int64))
    return np.concatenate(omegas), np.concatenate(ds), np.concatenate(ws), np.concatenate(ids)


def _alternating_subset(idx: np.ndarray, err: np.ndarray) -> list[int]:
    """Collapse runs of equal sign, keeping the largest magnitude of each run."""
    out: list[int] = []
    for i in idx:
        if out and np.sign(err[i]) == np.sign(err[out[-1]]):
            if abs(err[i]) > abs(err[out[-1]]):
                out[-1] = int(i)
        else:
            out.append(int(i))
    return out


def _fast_local_extrema(err: np.ndarray, band_id: np.ndarray) -> np.ndarray:
    n = err.size
    left = np.empty(n)
    right = np.empty(n)
    left[0] = np.nan
    left[1:] = err[:-1]
    right[-1] = np.nan
    right[:-1] = err[1:]
    same_l = np.zeros(n, dtype=bool)
    same_r = np.zeros(n, dtype=bool)
    same_l[1:] = band_id[1:] == band_id[:-1]
    same_r[:-1] = band_id[:-1] == band_id[1:]
    pos = (err > 0) & (~same_l | (err >= left)) & (~same_r | (err >= right))
    neg = (err < 0) & (~same_l | (err <= left)) & (~same_r | (err <= right))
    return np.flatnonzero(pos | neg)


def design_fir_remez(design: FirDesign, max_iter: int = 100, tol: float = 1e-9) -> FirFilter:
    """Design a minimax (equiripple) linear-phase FIR filter by Remez exchange.

    Raises:
        ValidationError: the band specification is infeasible.
        RemezConvergenceError: no convergence within ``max_iter`` exchanges.
    """
    design.validate()
    halfband = _is_halfband_hilbert(design)
    orders = _basis_orders(design, halfband)
    r = orders.size

    bands = design.bands
    if halfband:
        bands = ((bands[0][0], 0.5),)
    step = np.pi / (GRID_DENSITY * r)
    omega, dvals, wvals, band_id = _build_grid(bands, design.desired, design.weights, step)
    if omega.size < r + 2:
        raise ValidationError(f"grid of {omega.size} points cannot hold {r + 1} alternation points")

    phi = _basis(design.kind, omega, orders)
    ext = np.unique(np.round(np.linspace(0, omega.size - 1, r + 1)).astype(np.int64))
    signs = (-1.0) ** np.arange(r + 1)

    delta = np.nan
    coef = None
    for iteration in range(1, max_iter + 1):
        system = np.column_stack([phi[ext], signs / wvals[ext]])
        try:
            sol = np.linalg.solve(system, dvals[ext])
        except np.linalg.LinAlgError as exc:
            raise RemezConvergenceError("remez did not converge: singular exchange system",
                                        float(delta), iteration) from exc
        coef, delta = sol[:-1], sol[-1]
        err = wvals * (dvals - phi @ coef)
        emax = np.max(np.abs(err))

        cand = _fast_local_extrema(err, band_id)
        alt = _alternating_subset(cand, err)
        while len(alt) > r + 1:
            if abs(err[alt[0]]) < abs(err[alt[-1]]):
                alt.pop(0)
            else:
                alt.pop()
        if len(alt) < r + 1:
            raise RemezConvergenceError("remez did not converge: lost alternation",
                                        float(abs(delta)), iteration)
        new_ext = np.asarray(alt, dtype=np.int64)
        if emax - abs(delta) <= tol * emax or np.array_equal(new_ext, ext):
            ext = new_ext
            break
        ext = new_ext
    else:
        raise RemezConvergenceError("remez did not converge", float(abs(delta)), max_iter)

    m = design.half_order
    taps = np.zeros(design.numtaps)
    if design.kind == "lowpass":
        taps[m] = coef[0]
        taps[m + orders[1:]] = coef[1:] / 2.0
        taps[m - orders[1:]] = coef[1:] / 2.0
    else:
        taps[m + orders] = coef / 2.0
        taps[m - orders] = -coef / 2.0

    filt = FirFilter(taps=taps, kind=design.kind, group_delay_samples=m, design=design,
                     iterations=iteration, extremal_freqs=omega[ext] / np.pi)
    return _with_measured_ripple(filt)


def weighted_error(filt: FirFilter, n_points: int | None = None):
    """Weighted error ``W (D - A)`` on a uniform grid restricted to the design bands.

    Returns ``(omega, error, band_id)``; ``omega`` in rad/sample.
    """
    d = filt.design
    if n_points is None:
        n_points = GRID_DENSITY * VERIFY_REFINEMENT * filt.taps.size
    step = np.pi / n_points
    omega, dvals, wvals, band_id = _build_grid(d.bands, d.desired, d.weights, step)
    return omega, wvals * (dvals - filt.amplitude(omega)), band_id


def _with_measured_ripple(filt: FirFilter) -> FirFilter:
    _, err, _ = weighted_error(filt)
    return FirFilter(taps=filt.taps, kind=filt.kind, group_delay_samples=filt.group_delay_samples,
                     design=filt.design, ripple=float(np.max(np.abs(err))),
                     iterations=filt.iterations, extremal_freqs=filt.extremal_freqs)


def alternation_count(filt: FirFilter, n_points: int | None = None, rtol: float = 1e-3) -> int:
    """Number of alternating extrema of the weighted error reaching the ripple level."""
    omega, err, band_id = weighted_error(filt, n_points)
    level = (1.0 - rtol) * np.max(np.abs(err))
    idx = _fast_local_extrema(err, band_id)
    idx = idx[np.abs(err[idx]) >= level]
    return len(_alternating_subset(idx, err))


def num_basis_functions(design: FirDesign) -> int:
    """Number of cosine/sine terms in the amplitude (``r`` in the alternation theorem)."""
    m = design.half_order
    return m + 1 if design.kind == "lowpass" else m


# Fixed pipeline filters. Designed once per process and shared.
HILBERT_DESIGN = FirDesign(numtaps=101, bands=((0.03, 0.97),), desired=(1.0,), weights=(1.0,),
                           kind="hilbert")
LOWPASS_DESIGN = FirDesign(numtaps=31, bands=((0.0, 0.2), (0.3, 1.0)), desired=(1.0, 0.0),
                           weights=(1.0, 10.0), kind="lowpass")


@lru_cache(maxsize=None)
def default_hilbert() -> FirFilter:
    return design_fir_remez(HILBERT_DESIGN)


@lru_cache(maxsize=None)
def default_lowpass() -> FirFilter:
    return design_fir_remez(LOWPASS_DESIGN)


def save_filter(filt: FirFilter, path: str | Path) -> None:
    """Write taps and design to a JSON file; floats round-trip exactly."""
    payload = {
        "format": "epsfp-fir",
        "version": 1,
        "design": filt.design.to_dict(),
        "kind": filt.kind,
        "group_delay_samples": filt.group_delay_samples,
        "ripple": filt.ripple,
        "iterations": filt.iterations,
        "taps": [float(t) for t in filt.taps],
    }
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")


def load_filter(path: str | Path) -> FirFilter:
    payload = json.loads(Path(path).read_text())
    if payload.get("format") != "epsfp-fir" or payload.get("version") != 1:
        raise ValidationError(f"{path}: not a version-1 epsfp filter file")
    return FirFilter(taps=np.asarray(payload["taps"], dtype=np.float64), kind=payload["kind"],
                     group_delay_samples=int(payload["group_delay_samples"]),
                     design=FirDesign.from_dict(payload["design"]), ripple=float(payload["ripple"]),
                     iterations=int(payload["iterations"]))
