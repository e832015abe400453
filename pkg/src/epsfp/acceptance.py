"""Acceptance suite A1-A12 on the synthetic population.

The ``default`` profile runs every criterion with the nearest-centroid
classifier standing in for the CNNs in A8/A9. The ``extended`` profile trains
the EPS-CNN and IQ-CNN.
"""

from __future__ import annotations

import io
import itertools
import math
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import cnn
from .dataset import (DatasetHeader, PayloadKind, Record, ScenarioSpec, iter_scenario, read_dataset,
                      write_dataset)
from .dsp import RealSequence, analytic_signal, power_spectrum
from .eps import dominant_peak_hz, eps_of_frame
from .evaluation import (EvalConfig, FeatureSet, assert_no_leakage, evaluate_cross_domain,
                         evaluate_same_domain, kfold_split, named_features)
from .errors import ValidationError
from .filters import alternation_count, default_hilbert, default_lowpass, num_basis_functions, weighted_error
from .registry import Registry, Verdict, roc_sweep
from .waveform import (FRAME_LEN, SAMPLE_RATE_HZ, ChannelProfile, DeviceProfile, IQFrame,
                       apply_channel, apply_impairments, count_envelope_humps, default_population,
                       figure3_humps, cfo_demo_frame, generate_dsss_baseband, rogue_population)

PROFILES = ("default", "extended")

# thresholds
HILBERT_MAX_RIPPLE = 0.01
LOWPASS_MIN_ATTEN_DB = 40.0
TONE_MODULUS_TOL = 0.01
PARSEVAL_RTOL = 1e-9
SYMMETRY_RTOL = 1e-9
SUM_TOL = 1e-12
SCALE_TOL = 1e-9
SCALE_FACTORS = (0.1, 0.35, 3.0)
FIG3_EXPECTED = {0.0: 0, 50.0: 1, 100.0: 2, 200.0: 4}
PEAK_MIN_FRAMES = 95
INTRA_MIN_COS = 0.99
INTER_MAX_COS = 0.8
INTER_MIN_SEP_HZ = 2e3
SAME_DOMAIN_MIN_ACC = 0.99
CROSS_MIN_ACC = 0.93
CROSS_MIN_GAP = 0.20
IQ_RANDOM_MAX_ACC = 0.70
DAY_MIN_ACC = 0.90
GENUINE_MIN = 0.98
ROGUE_MAX = 0.02
IMPERSONATION_MIN = 0.98
GRADCHECK_MAX_REL = 1e-4
CHANCE_BAND = 0.05
# CNN epochs in the acceptance run; keeps A8 and A9 within their runtime budgets
ACCEPT_EPOCHS = 3


@dataclass
class CriterionResult:
    cid: str
    title: str
    passed: bool
    detail: str
    metrics: dict = field(default_factory=dict)
    seconds: float = 0.0
    budget_s: float | None = None

    def line(self) -> str:
        timing = f"{self.seconds:.1f}s"
        if self.budget_s is not None and self.seconds > self.budget_s:
            timing += f", over the {self.budget_s:.0f}s budget"
        return f"{self.cid} {'PASS' if self.passed else 'FAIL'} {self.title}: {self.detail} ({timing})"


class Context:
    """Shared population, scenario features and settings for one acceptance run."""

    def __init__(self, profile: str = "default", jobs: int = 1, frames: int = 100, seed: int = 1,
                 log: Callable[[str], None] | None = None):
        if profile not in PROFILES:
            raise ValidationError(f"unknown profile {profile!r}; expected one of {PROFILES}")
        self.profile = profile
        self.extended = profile == "extended"
        self.jobs = jobs
        self.frames = frames
        self.seed = seed
        self.log = log or (lambda s: None)
        self.population = default_population()
        self.rogues = rogue_population(self.population)
        self._features: dict[str, FeatureSet] = {}

    def features(self, name: str) -> FeatureSet:
        """Loc A/B/C, random-location and day 1/2 feature sets (Loc A is day 0)."""
        if name not in self._features:
            t = time.perf_counter()
            self._features[name] = named_features(name, self.population, self.frames, self.seed, jobs=self.jobs)
            self.log(f"features {name}: {len(self._features[name])} frames in {time.perf_counter() - t:.1f}s")
        return self._features[name]

    def eval_config(self) -> EvalConfig:
        return EvalConfig(k=5, seed=0, train=cnn.TrainConfig(epochs=ACCEPT_EPOCHS))


def _res(cid, title, passed, detail, **metrics):
    return CriterionResult(cid, title, bool(passed), detail, metrics)


# individual criteria

def check_a1(ctx: Context) -> CriterionResult:
    h, lp = default_hilbert(), default_lowpass()
    alt_h, need_h = alternation_count(h), num_basis_functions(h.design) + 1
    alt_l, need_l = alternation_count(lp), num_basis_functions(lp.design) + 1
    _, err_h, _ = weighted_error(h)
    ripple_h = float(np.max(np.abs(err_h)))
    om = np.linspace(0.3 * np.pi, np.pi, 16 * 31 * 64)
    atten = -20 * math.log10(float(np.max(np.abs(lp.amplitude(om)))))
    n = np.arange(FRAME_LEN)
    tone = RealSequence(np.cos(2 * np.pi * 0.25 * n), SAMPLE_RATE_HZ)
    modulus_err = float(np.max(np.abs(np.abs(analytic_signal(tone, h)) - 1.0)))
    ok = (alt_h >= need_h and alt_l >= need_l and ripple_h <= HILBERT_MAX_RIPPLE
          and atten >= LOWPASS_MIN_ATTEN_DB and modulus_err <= TONE_MODULUS_TOL)
    return _res("A1", "Remez correctness", ok,
                f"alternations hilbert {alt_h}/{need_h} lowpass {alt_l}/{need_l}; hilbert ripple {ripple_h:.2e}; "
                f"stopband {atten:.1f} dB; tone modulus error {modulus_err:.2e}",
                alternations_hilbert=alt_h, alternations_lowpass=alt_l, hilbert_ripple=ripple_h,
                stopband_db=atten, tone_modulus_error=modulus_err)


def check_a2(ctx: Context) -> CriterionResult:
    rng = np.random.default_rng(5)
    t = np.arange(1641)
    x = 1.0 + 0.6 * np.abs(np.cos(2 * np.pi * 0.013 * t)) + 0.05 * rng.standard_normal(t.size)
    ps = power_spectrum(RealSequence(x, 20e6 / 15), 4096)
    c = x - x.mean()
    energy = float(np.sum((c * np.hanning(x.size)) ** 2))
    parseval = abs(ps.total_power / 4096 - energy) / energy
    raw = ps.bins * ps.total_power
    half = 2048
    m = np.arange(1, half)
    sym = float(np.max(np.abs(raw[half + m] - raw[half - m]) / np.maximum(np.abs(raw[half + m]), 1e-300)))
    total = abs(float(np.sum(ps.bins)) - 1.0)
    ok = parseval <= PARSEVAL_RTOL and sym <= SYMMETRY_RTOL and total <= SUM_TOL
    return _res("A2", "Spectrum correctness", ok,
                f"Parseval rel {parseval:.1e}; symmetry rel {sym:.1e}; |sum-1| {total:.1e}",
                parseval=parseval, symmetry=sym, sum_error=total)


def _sample_frame(device: DeviceProfile, snr_db=20.0, seed=0) -> IQFrame:
    base = generate_dsss_baseband(np.random.default_rng(11).integers(0, 2, 1300))
    r = apply_impairments(base, device, seed=seed)
    return apply_channel(r, ChannelProfile(snr_db=snr_db, seed=seed + 1))


def check_a3(ctx: Context) -> CriterionResult:
    fr = _sample_frame(ctx.population[0])
    t = eps_of_frame(fr)
    expected = SAMPLE_RATE_HZ / 15 / 4096
    ok = (len(fr) == FRAME_LEN and t.as_array().shape == (2, 4096)
          and abs(t.resolution_hz - expected) <= 1e-12 * expected)
    return _res("A3", "Pipeline shape", ok,
                f"input 1x{len(fr)} -> {t.as_array().shape[0]}x{t.as_array().shape[1]}, "
                f"resolution {t.resolution_hz:.4f} Hz (expected {expected:.4f})",
                resolution_hz=t.resolution_hz)


def check_a4(ctx: Context) -> CriterionResult:
    worst = 0.0
    for dev in ctx.population[:5]:
        fr = _sample_frame(dev)
        ref = eps_of_frame(fr).as_array()
        for a in SCALE_FACTORS:
            worst = max(worst, float(np.max(np.abs(eps_of_frame(fr.scaled(a)).as_array() - ref))))
    return _res("A4", "Scale invariance", worst <= SCALE_TOL,
                f"max |EPS(a r) - EPS(r)| = {worst:.2e} over a in {SCALE_FACTORS}", max_diff=worst)


def check_a5(ctx: Context) -> CriterionResult:
    counts = {c: h.count for c, h in figure3_humps()}
    ok = all(abs(counts[c] - k) <= (0 if c == 0 else 1) for c, k in FIG3_EXPECTED.items())
    rng = np.random.default_rng(3)
    imp_counts = []
    for i in range(5):
        d = DeviceProfile(i, 0.0, float(rng.uniform(-0.5, 0.5)), float(np.deg2rad(rng.uniform(-2, 2))),
                          complex(*rng.uniform(-0.007, 0.007, 2)), 1e-4)
        imp_counts.append(count_envelope_humps(cfo_demo_frame(0.0, device=d).rail("I"), max_cfo_hz=250.0))
    ok = ok and all(c == 0 for c in imp_counts)
    return _res("A5", "Figure 3 hump counts", ok,
                f"counts {[counts[c] for c in FIG3_EXPECTED]} for CFO {list(FIG3_EXPECTED)} Hz; "
                f"non-CFO impairments {imp_counts}", counts=counts, impairment_counts=imp_counts)


def _zt_spec() -> ScenarioSpec:
    # 20 dB at every scale, random delay and amplitude
    return ScenarioSpec("random-location", reference_snr_db=20.0, snr_follows_scale=False)


def check_a6(ctx: Context) -> CriterionResult:
    spec = _zt_spec()
    dom = spec.domains()[0]
    hits: dict[int, int] = {}
    for dev in ctx.population:
        n_ok = 0
        for fr, meta in iter_scenario([dev], spec, 100, seed=ctx.seed + 500, domains=[dom]):
            t = eps_of_frame(fr)
            peak = abs(dominant_peak_hz(t.eps_i, t.resolution_hz))
            n_ok += abs(peak - 2 * abs(dev.cfo_hz)) <= t.resolution_hz * (1 + 1e-9)
        hits[dev.device_id] = n_ok
    worst = min(hits.values())
    return _res("A6", "Peak law", worst >= PEAK_MIN_FRAMES,
                f"worst device has {worst}/100 frames with peak at 2|cfo| +- 1 bin (need {PEAK_MIN_FRAMES})",
                hits=hits)


def robustness_frames(dev: DeviceProfile, n: int, seed: int) -> list[np.ndarray]:
    """EPS vectors of ``dev`` under random SNR 15-30 dB, scale 0.3-1, delay 0-200."""
    base = generate_dsss_baseband(np.random.default_rng(11).integers(0, 2, 1300))
    out = []
    for k in range(n):
        rng = np.random.default_rng([seed, dev.device_id, k])
        ch = ChannelProfile(snr_db=float(rng.uniform(15, 30)), amplitude_scale=float(rng.uniform(0.3, 1.0)),
                            delay_samples=int(rng.integers(0, 201)), seed=int(rng.integers(2 ** 62)))
        r = apply_impairments(base, dev, seed=int(rng.integers(2 ** 62)))
        out.append(eps_of_frame(apply_channel(r, ch)).vector())
    return out


def check_a7(ctx: Context) -> CriterionResult:
    vecs = {d.device_id: np.stack(robustness_frames(d, 20, ctx.seed + 700)) for d in ctx.population}
    unit = {k: v / np.linalg.norm(v, axis=1, keepdims=True) for k, v in vecs.items()}
    intra = min(float(np.min(u @ u.T)) for u in unit.values())
    inter, inter_close = 0.0, 0.0
    for a, b in itertools.combinations(ctx.population, 2):
        s = float(np.max(unit[a.device_id] @ unit[b.device_id].T))
        if abs(abs(a.cfo_hz) - abs(b.cfo_hz)) >= INTER_MIN_SEP_HZ:
            inter = max(inter, s)
        else:
            inter_close = max(inter_close, s)
    ok = intra >= INTRA_MIN_COS and inter <= INTER_MAX_COS
    return _res("A7", "EPS robustness", ok,
                f"min intra-device cosine {intra:.4f}; max inter-device cosine {inter:.4f} "
                f"(|cfo| separation >= 2 kHz; closer pairs reach {inter_close:.4f})",
                intra_min=intra, inter_max=inter, inter_close_max=inter_close)


def check_a8(ctx: Context) -> CriterionResult:
    fs = ctx.features("A")
    cfg = ctx.eval_config()
    nc = evaluate_same_domain(fs, "nearest_centroid", cfg)
    metrics = {"nearest_centroid": nc.mean_accuracy}
    ok = nc.mean_accuracy >= SAME_DOMAIN_MIN_ACC
    detail = f"nearest-centroid {nc.mean_accuracy:.4f}"
    if ctx.extended:
        rep = evaluate_same_domain(fs, "eps_cnn", cfg, log=ctx.log)
        metrics["eps_cnn"] = rep.mean_accuracy
        metrics["eps_cnn_folds"] = rep.fold_accuracies
        ok = ok and rep.mean_accuracy >= SAME_DOMAIN_MIN_ACC
        detail += f"; EPS-CNN {rep.mean_accuracy:.4f} (folds {', '.join(f'{a:.3f}' for a in rep.fold_accuracies)})"
    return _res("A8", "Same-domain identification", ok, detail + f" (need {SAME_DOMAIN_MIN_ACC})", **metrics)


def check_a9(ctx: Context) -> CriterionResult:
    train = ctx.features("A")
    tests = [ctx.features(n) for n in ("C", "random", "day1", "day2")]
    cfg = ctx.eval_config()
    if ctx.extended:
        eps_kind, iq_kind, label = "eps_cnn", "iq_cnn", "CNN"
    else:
        eps_kind, iq_kind, label = "nearest_centroid", "iq_centroid", "centroid"
    eps = {r.test_domain: r.mean_accuracy for r in evaluate_cross_domain(train, tests, eps_kind, cfg, ctx.log)}
    if iq_kind == "iq_centroid":
        iq = {t.name: _iq_centroid_accuracy(train, t) for t in tests[:2]}
    else:
        iq = {r.test_domain: r.mean_accuracy
              for r in evaluate_cross_domain(train, tests[:2], iq_kind, cfg, ctx.log)}
    checks = [eps["C"] >= CROSS_MIN_ACC, eps["random"] >= CROSS_MIN_ACC,
              eps["C"] - iq["C"] >= CROSS_MIN_GAP, eps["random"] - iq["random"] >= CROSS_MIN_GAP,
              iq["random"] <= IQ_RANDOM_MAX_ACC, eps["day1"] >= DAY_MIN_ACC, eps["day2"] >= DAY_MIN_ACC]
    detail = (f"EPS-{label} A->C {eps['C']:.4f}, A->random {eps['random']:.4f}, "
              f"day0->day1 {eps['day1']:.4f}, day0->day2 {eps['day2']:.4f}; "
              f"IQ-{label} A->C {iq['C']:.4f}, A->random {iq['random']:.4f}")
    return _res("A9", "Cross-domain superiority", all(checks), detail, eps=eps, iq=iq,
                checks=[bool(c) for c in checks])


def _iq_centroid_accuracy(train: FeatureSet, test: FeatureSet) -> float:
    from .centroid import nearest_centroid_fit, nearest_centroid_predict_batch

    m = nearest_centroid_fit(train.iq, train.device_ids)
    return float(np.mean(nearest_centroid_predict_batch(m, test.iq)[0] == test.device_ids))


def check_a10(ctx: Context) -> CriterionResult:
    spec = _zt_spec()
    dom = spec.domains()[0]
    reg = Registry(clock=lambda: 0.0)
    for dev in ctx.population:
        frames = [eps_of_frame(f) for f, _ in iter_scenario([dev], spec, 20, ctx.seed + 1000, [dom])]
        reg.enroll(dev.device_id, frames)
    genuine = {dev.device_id: [eps_of_frame(f) for f, _ in iter_scenario([dev], spec, 50, ctx.seed + 2000, [dom])]
               for dev in ctx.population}
    accepted = [reg.verify(e, dev_id).verdict is Verdict.ACCEPTED for dev_id, es in genuine.items() for e in es]
    gar = float(np.mean(accepted))
    screened = [reg.screen_rogue(eps_of_frame(f))
                for f, _ in iter_scenario(ctx.rogues, spec, 50, ctx.seed + 3000, [dom])]
    rar = float(np.mean([s[0] for s in screened]))
    genuine_scores = [reg.scores(e)[dev_id] for dev_id, es in genuine.items() for e in es]
    roc = roc_sweep(genuine_scores, [s[2] for s in screened])
    imp_ok = []
    for b, es in genuine.items():
        for a in genuine:
            if a == b:
                continue
            for e in es[:3]:
                d = reg.verify(e, a)
                imp_ok.append(d.verdict is Verdict.REJECTED and d.matched_id == b)
    imp = float(np.mean(imp_ok))
    window = 5
    ids = sorted(genuine)
    first, second = ids[0], ids[1]
    stream = genuine[first][:50] + genuine[second][:50]
    sid = reg.open_session(reg.verify(genuine[first][0], first))
    verdicts = [d.verdict for d in reg.continuous_auth(stream, sid, window)]
    alerts = [i for i, v in enumerate(verdicts) if v is Verdict.ALERT]
    swap_ok = bool(alerts) and alerts[0] >= 50 and alerts[0] < 50 + window
    ok = gar >= GENUINE_MIN and rar <= ROGUE_MAX and imp >= IMPERSONATION_MIN and swap_ok
    return _res("A10", "Zero-trust flows", ok,
                f"genuine-accept {gar:.4f}; rogue-accept {rar:.4f}; impersonation rejected as true id {imp:.4f}; "
                f"swap at frame 50 first alert at {alerts[0] if alerts else None} (window {window})",
                genuine_accept=gar, rogue_accept=rar, impersonation=imp, roc=roc.tolist(),
                first_alert=alerts[0] if alerts else None)


def gradient_check(seed: int = 0, h: float = 1e-6) -> dict[str, float]:
    """Blockwise relative error of analytic vs central-difference gradients.

    Runs in float64 on the miniature network. Steps much larger than ``h`` can
    cross a pooling or activation kink and report a spurious mismatch.
    """
    arch = cnn.miniature(n_classes=2, width=64)
    mp = cnn.init_params(arch, seed, head_scale=1.0)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((4, 2, 64))
    y = np.array([0, 1, 1, 0])
    _, grads = cnn.loss_and_grads(mp.copy(), x, y)
    out = {}
    for name, w in mp.params.items():
        num = np.zeros_like(w)
        for i in np.ndindex(w.shape):
            old = w[i]
            w[i] = old + h
            lp, _ = cnn.loss_and_grads(mp.copy(), x, y)
            w[i] = old - h
            lm, _ = cnn.loss_and_grads(mp.copy(), x, y)
            w[i] = old
            num[i] = (lp - lm) / (2 * h)
        denom = max(np.linalg.norm(num) + np.linalg.norm(grads[name]), 1e-30)
        out[name] = float(np.linalg.norm(num - grads[name]) / denom)
    return out


def check_a11(ctx: Context) -> CriterionResult:
    errs = {f"seed{s}/{k}": v for s in range(3) for k, v in gradient_check(s).items()}
    worst = max(errs.values())
    fs = ctx.features("A")
    idx = [int(np.flatnonzero(fs.device_ids == d.device_id)[0]) for d in ctx.population]
    x = fs.eps[idx] * np.float32(fs.eps.shape[-1])
    y = np.arange(len(idx))
    arch = cnn.CnnArchitecture(n_classes=len(idx))
    res = cnn.train(x, y, arch, cnn.TrainConfig(epochs=200, batch_size=len(idx), patience=200, seed=0))
    acc = float(np.mean(cnn.predict_batch(res.params, x)[0] == y))
    ok = worst <= GRADCHECK_MAX_REL and acc == 1.0
    return _res("A11", "Numerics", ok,
                f"gradient check worst block rel. error {worst:.1e}; single-sample overfit accuracy {acc:.3f} "
                f"after {len(res.epoch_losses)} steps", gradcheck=errs, overfit_accuracy=acc,
                overfit_steps=len(res.epoch_losses))


def check_a12(ctx: Context) -> CriterionResult:
    notes = []
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        fs = ctx.features("A")
        spec = ScenarioSpec("fixed-location")
        recs = [Record.from_frame(f) for f, _ in iter_scenario(ctx.population[:2], spec, 2, ctx.seed,
                                                              [spec.domains()[0]])]
        eps_recs = [Record(int(d), dom, e.reshape(-1)) for d, dom, e in zip(fs.device_ids[:5], fs.domains[:5],
                                                                            fs.eps[:5])]
        rt = True
        for kind, rs, flen in ((PayloadKind.IQ, recs, FRAME_LEN), (PayloadKind.EPS, eps_recs, 4096)):
            p1, p2 = tmp / f"{kind.name}1.epsf", tmp / f"{kind.name}2.epsf"
            hdr = write_dataset(p1, DatasetHeader(SAMPLE_RATE_HZ, flen, 0, kind), rs)
            h2, back = read_dataset(p1)
            write_dataset(p2, h2, back)
            rt &= p1.read_bytes() == p2.read_bytes() and h2 == hdr
        notes.append(f"dataset round-trip {'ok' if rt else 'MISMATCH'}")
        arch = cnn.CnnArchitecture(n_classes=15)
        mp = cnn.init_params(arch, 3)
        c1, c2 = tmp / "m1.ckpt", tmp / "m2.ckpt"
        cnn.save_checkpoint(c1, mp)
        back = cnn.load_checkpoint(c1)
        cnn.save_checkpoint(c2, back)
        ck = c1.read_bytes() == c2.read_bytes() and all(np.array_equal(mp.params[k], back.params[k])
                                                        for k in mp.params)
        notes.append(f"checkpoint round-trip {'ok' if ck else 'MISMATCH'}")
    split = kfold_split(fs.device_ids, 5, 0)
    allidx = np.concatenate(split.folds)
    disjoint = len(allidx) == len(np.unique(allidx))
    exhaustive = set(allidx.tolist()) == set(range(len(fs)))
    sizes = [[int(np.sum(fs.device_ids[f] == d)) for f in split.folds] for d in np.unique(fs.device_ids)]
    balanced = all(max(s) - min(s) <= 1 for s in sizes)
    notes.append(f"folds disjoint={disjoint} exhaustive={exhaustive} balanced={balanced}")
    try:
        assert_no_leakage(fs.subset([0, 1]), fs.subset([1, 2]))
        guard = False
    except ValidationError:
        guard = True
    shuffled = evaluate_same_domain(fs, "nearest_centroid", EvalConfig(k=5, seed=0), shuffle_labels=True)
    chance = 1.0 / len(np.unique(fs.device_ids))
    chance_ok = abs(shuffled.mean_accuracy - chance) <= CHANCE_BAND
    notes.append(f"shuffled-label accuracy {shuffled.mean_accuracy:.4f} vs chance {chance:.4f}; "
                 f"overlap guard {'raises' if guard else 'SILENT'}")
    ok = rt and ck and disjoint and exhaustive and balanced and guard and chance_ok
    return _res("A12", "Plumbing", ok, "; ".join(notes), shuffled_accuracy=shuffled.mean_accuracy)


CRITERIA: dict[str, Callable[[Context], CriterionResult]] = {
    "A1": check_a1, "A2": check_a2, "A3": check_a3, "A4": check_a4, "A5": check_a5, "A6": check_a6,
    "A7": check_a7, "A8": check_a8, "A9": check_a9, "A10": check_a10, "A11": check_a11, "A12": check_a12,
}


# wall-clock budgets per profile; reported, not part of pass/fail
BUDGETS_S = {"default": {"A9": 60.0}, "extended": {"A8": 600.0, "A9": 600.0}}


def run_criterion(cid: str, ctx: Context) -> CriterionResult:
    t = time.perf_counter()
    res = CRITERIA[cid](ctx)
    res.seconds = time.perf_counter() - t
    res.budget_s = BUDGETS_S[ctx.profile].get(cid)
    return res


def run_acceptance(profile: str = "default", jobs: int = 1, only: list[str] | None = None,
                   log: Callable[[str], None] | None = None, echo: Callable[[str], None] | None = None
                   ) -> list[CriterionResult]:
    ctx = Context(profile, jobs, log=log)
    results = []
    for cid in (only or list(CRITERIA)):
        if cid not in CRITERIA:
            raise ValidationError(f"unknown criterion {cid!r}")
        r = run_criterion(cid, ctx)
        results.append(r)
        if echo is not None:
            echo(r.line())
    return results


def format_results(results: list[CriterionResult]) -> str:
    buf = io.StringIO()
    for r in results:
        buf.write(r.line() + "\n")
    n_pass = sum(r.passed for r in results)
    buf.write(f"{n_pass}/{len(results)} criteria passed\n")
    return buf.getvalue()
