"""Zero-trust device registry: enrollment, verification, rogue screening and
per-frame continuous authentication on EPS fingerprints.

Registry file layout (little-endian)::

    magic "EPSR" | version u32 | count u32
    per template: device_id u16 | n_enroll_frames u32 | enrolled_at f64 |
                  dispersion f64 | mean_similarity f64 | threshold f64 |
                  dim u32 | centroid f64[dim]
"""

from __future__ import annotations

import enum
import hashlib
import json
import os
import struct
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Iterator

import numpy as np

from .eps import EpsConfig, EpsTensor, eps_of_frame
from .errors import DatasetFormatError, ValidationError
from .waveform import IQFrame

MIN_ENROLL_FRAMES = 20
THRESHOLD_RANGE = (0.9, 0.999)
REG_MAGIC = b"EPSR"
REG_VERSION = 1
_REG_HEAD = struct.Struct("<4sII")
_TEMPLATE = struct.Struct("<HIddddI")


class Verdict(enum.Enum):
    ACCEPTED = "accepted"
    REJECTED = "rejected"
    ALERT = "alert"


@dataclass(frozen=True)
class FingerprintTemplate:
    device_id: int
    centroid: np.ndarray          # unit L2 norm
    dispersion: float             # mean cosine distance of enrollment frames to the centroid
    mean_similarity: float
    threshold: float              # calibrated acceptance threshold
    enrolled_at: float
    n_enroll_frames: int


@dataclass(frozen=True)
class AuthDecision:
    verdict: Verdict
    claimed_id: int | None
    matched_id: int | None
    score: float
    threshold_used: float


def calibrate_threshold(mean_similarity: float, dispersion: float,
                        k: float = 3.0, bounds: tuple[float, float] = THRESHOLD_RANGE) -> float:
    """``mean_similarity - k * dispersion`` clipped to ``bounds``."""
    return float(np.clip(mean_similarity - k * dispersion, *bounds))


def _vec(x, cfg: EpsConfig) -> np.ndarray:
    if isinstance(x, EpsTensor):
        return x.vector()
    if isinstance(x, IQFrame):
        return eps_of_frame(x, cfg).vector()
    v = np.asarray(x, dtype=np.float64).ravel()
    return v


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    if n == 0:
        raise ValidationError("fingerprint vector is zero")
    return v / n


def _digest(x) -> str:
    if isinstance(x, IQFrame):
        data = x.samples.tobytes()
    elif isinstance(x, EpsTensor):
        data = x.vector().tobytes()
    else:
        data = np.asarray(x).tobytes()
    return hashlib.sha256(data).hexdigest()[:16]


class Registry:
    """In-memory registry with optional atomic persistence and an append-only audit log.

    Mutations are expected from a single writer. ``clock`` supplies the
    timestamps that go into templates and log lines.
    """

    def __init__(self, path: str | Path | None = None, audit_log: str | Path | None = None,
                 eps_config: EpsConfig = EpsConfig(), clock: Callable[[], float] = time.time,
                 min_enroll_frames: int = MIN_ENROLL_FRAMES):
        self.path = Path(path) if path is not None else None
        self.audit_log = Path(audit_log) if audit_log is not None else None
        self.eps_config = eps_config
        self.clock = clock
        self.min_enroll_frames = min_enroll_frames
        self.templates: dict[int, FingerprintTemplate] = {}
        self.sessions: dict[str, int] = {}
        self._session_seq = 0
        if self.path is not None and self.path.exists():
            self.templates = load_registry(self.path)

    def __len__(self) -> int:
        return len(self.templates)

    def __contains__(self, device_id) -> bool:
        return device_id in self.templates

    # audit

    def _log(self, event: str, **fields) -> None:
        if self.audit_log is None:
            return
        rec = {"ts": self.clock(), "event": event, **fields}
        with open(self.audit_log, "a") as fh:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")

    def _persist(self) -> None:
        if self.path is not None:
            save_registry(self.path, self.templates)

    # enrollment

    def enroll(self, device_id: int, frames: Iterable, labels_from_frames: bool = True) -> FingerprintTemplate:
        """Fingerprint a device from at least ``min_enroll_frames`` frames.

        Re-enrolling an id replaces its template.
        """
        frames = list(frames)
        if len(frames) < self.min_enroll_frames:
            raise ValidationError(f"need at least {self.min_enroll_frames} frames, got {len(frames)}")
        if labels_from_frames:
            for f in frames:
                dev = getattr(f, "device_id", None) if isinstance(f, IQFrame) else getattr(f, "source_device", None)
                if dev is not None and dev != device_id:
                    raise ValidationError(f"frame labelled device {dev} offered for enrollment of {device_id}")
        vecs = np.stack([_unit(_vec(f, self.eps_config)) for f in frames])
        centroid = _unit(vecs.mean(axis=0))
        sims = vecs @ centroid
        dispersion = float(np.clip(np.mean(1.0 - sims), 0.0, 2.0))
        mean_sim = float(np.mean(sims))
        t = FingerprintTemplate(int(device_id), centroid, dispersion, mean_sim,
                                calibrate_threshold(mean_sim, dispersion), float(self.clock()), len(frames))
        replaced = device_id in self.templates
        self.templates[int(device_id)] = t
        self._persist()
        self._log("enroll", device_id=int(device_id), n_frames=len(frames), replaced=replaced,
                  dispersion=dispersion, threshold=t.threshold,
                  inputs=hashlib.sha256("".join(_digest(f) for f in frames).encode()).hexdigest()[:16])
        return t

    # scoring

    def _ordered(self):
        ids = sorted(self.templates)
        return ids, np.stack([self.templates[i].centroid for i in ids])

    def scores(self, x) -> dict[int, float]:
        """Cosine similarity of a frame's fingerprint to every template."""
        if not self.templates:
            raise ValidationError("registry is empty")
        ids, cents = self._ordered()
        s = cents @ _unit(_vec(x, self.eps_config))
        return dict(zip(ids, s.tolist()))

    def screen_rogue(self, frame, tau_rogue: float | None = None) -> tuple[bool, int, float]:
        """``(legitimate, best_id, best_score)``.

        Legitimate iff the best template similarity reaches ``tau_rogue``; with
        ``tau_rogue=None`` the best template's own calibrated threshold is used.
        """
        s = self.scores(frame)
        best = max(s, key=lambda i: (s[i], -i))
        tau = self.templates[best].threshold if tau_rogue is None else tau_rogue
        ok = s[best] >= tau
        self._log("screen", best_id=best, score=s[best], threshold=tau, legitimate=bool(ok), input=_digest(frame))
        return bool(ok), best, s[best]

    def verify(self, frame, claimed_id: int, tau_verify: float | None = None) -> AuthDecision:
        """Accept iff the claimed template scores at least ``tau_verify`` and is the best match."""
        if claimed_id not in self.templates:
            d = AuthDecision(Verdict.REJECTED, claimed_id, None, float("nan"),
                             float("nan") if tau_verify is None else tau_verify)
        else:
            s = self.scores(frame)
            best = max(s, key=lambda i: (s[i], -i))
            tau = self.templates[claimed_id].threshold if tau_verify is None else tau_verify
            score = s[claimed_id]
            ok = score >= tau and best == claimed_id
            d = AuthDecision(Verdict.ACCEPTED if ok else Verdict.REJECTED, claimed_id, best, score, tau)
        self._log("verify", claimed_id=claimed_id, matched_id=d.matched_id, score=d.score,
                  threshold=d.threshold_used, verdict=d.verdict.value, input=_digest(frame))
        return d

    def open_session(self, decision: AuthDecision) -> str:
        """Bind a session to an accepted verification."""
        if decision.verdict is not Verdict.ACCEPTED:
            raise ValidationError("sessions require an accepted verification")
        self._session_seq += 1
        sid = f"s{self._session_seq}-{decision.claimed_id}"
        self.sessions[sid] = decision.claimed_id
        self._log("session", session_id=sid, device_id=decision.claimed_id)
        return sid

    def continuous_auth(self, stream: Iterable, session_id: str, window: int,
                        tau: float | None = None) -> Iterator[AuthDecision]:
        """Per-frame decisions on the sliding mean of the last ``window`` scores.

        The verdict is ``alert`` while the sliding mean is below ``tau`` and
        ``accepted`` otherwise. Decisions are yielded in input order.
        """
        if window < 1:
            raise ValidationError("window must be at least 1")
        if session_id not in self.sessions:
            raise ValidationError(f"unknown session {session_id!r}")
        claimed = self.sessions[session_id]
        tau = self.templates[claimed].threshold if tau is None else tau
        recent: list[float] = []
        for n, frame in enumerate(stream):
            s = self.scores(frame)
            score = s[claimed]
            recent.append(score)
            if len(recent) > window:
                recent.pop(0)
            mean = float(np.mean(recent))
            best = max(s, key=lambda i: (s[i], -i))
            verdict = Verdict.ACCEPTED if mean >= tau else Verdict.ALERT
            if verdict is Verdict.ALERT:
                self._log("alert", session_id=session_id, frame=n, mean_score=mean, threshold=tau,
                          matched_id=best, input=_digest(frame))
            yield AuthDecision(verdict, claimed, best, mean, tau)


def roc_sweep(genuine_scores, rogue_scores, taus=None) -> np.ndarray:
    """Rows of ``(tau, genuine_accept_rate, rogue_accept_rate)``; tau 0.5..1.0 step 0.005 by default."""
    g = np.asarray(genuine_scores, dtype=np.float64)
    r = np.asarray(rogue_scores, dtype=np.float64)
    if taus is None:
        taus = np.round(np.arange(0.5, 1.0 + 1e-9, 0.005), 3)
    taus = np.asarray(taus, dtype=np.float64)
    gar = (g[None, :] >= taus[:, None]).mean(axis=1) if g.size else np.full(taus.size, np.nan)
    rar = (r[None, :] >= taus[:, None]).mean(axis=1) if r.size else np.full(taus.size, np.nan)
    return np.column_stack([taus, gar, rar])


def save_registry(path: str | Path, templates: dict[int, FingerprintTemplate]) -> None:
    """Write the registry to a temporary file and rename it over ``path``."""
    path = Path(path)
    parts = [_REG_HEAD.pack(REG_MAGIC, REG_VERSION, len(templates))]
    for i in sorted(templates):
        t = templates[i]
        c = np.ascontiguousarray(t.centroid, dtype="<f8")
        parts.append(_TEMPLATE.pack(t.device_id, t.n_enroll_frames, t.enrolled_at, t.dispersion,
                                    t.mean_similarity, t.threshold, c.size))
        parts.append(c.tobytes())
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(b"".join(parts))
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_registry(path: str | Path) -> dict[int, FingerprintTemplate]:
    data = Path(path).read_bytes()
    if len(data) < _REG_HEAD.size:
        raise DatasetFormatError("registry shorter than its header", len(data))
    magic, version, count = _REG_HEAD.unpack_from(data, 0)
    if magic != REG_MAGIC:
        raise DatasetFormatError(f"bad registry magic {magic!r}", 0)
    if version != REG_VERSION:
        raise DatasetFormatError(f"unsupported registry version {version}", 4)
    pos = _REG_HEAD.size
    out = {}
    for _ in range(count):
        if pos + _TEMPLATE.size > len(data):
            raise DatasetFormatError("registry truncated inside a template header", pos)
        dev, n, at, disp, msim, thr, dim = _TEMPLATE.unpack_from(data, pos)
        pos += _TEMPLATE.size
        if pos + 8 * dim > len(data):
            raise DatasetFormatError("registry truncated inside a centroid", pos)
        c = np.frombuffer(data, dtype="<f8", count=dim, offset=pos).copy()
        pos += 8 * dim
        out[dev] = FingerprintTemplate(dev, c, disp, msim, thr, at, n)
    if pos != len(data):
        raise DatasetFormatError("trailing bytes after last template", pos)
    return out
