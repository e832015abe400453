"""Cross-validation, same- and cross-domain evaluation, and report tables."""

from __future__ import annotations

import csv
import io
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from . import cnn
from .centroid import nearest_centroid_fit, nearest_centroid_predict_batch
from .dataset import (RANDOM_LOCATION, DatasetHeader, PayloadKind, Record, ScenarioSpec, frame_meta,
                      scenario_baseband, synthesize)
from .eps import EpsConfig, eps_of_frame, raw_iq_representation
from .errors import ValidationError
from .waveform import DeviceProfile, DomainLabel

MODEL_KINDS = ("nearest_centroid", "eps_cnn", "iq_cnn")


def domain_name(d: DomainLabel, spec: ScenarioSpec | None = None) -> str:
    if d.location == RANDOM_LOCATION:
        loc = "random"
    elif spec is not None and d.location < len(spec.locations):
        loc = spec.locations[d.location].name
    else:
        loc = str(d.location)
    return f"day{d.day}-loc{loc}"


@dataclass
class FeatureSet:
    """Model inputs for a set of frames: EPS tensors and raw I/Q windows.

    ``keys`` identify the underlying frames (seed, device, day, location,
    index) and are what the leakage guard compares.
    """

    eps: np.ndarray            # (n, 2, n_fft) float32
    iq: np.ndarray             # (n, 2, window) float32
    device_ids: np.ndarray     # (n,)
    domains: list[DomainLabel]
    keys: list[tuple]
    name: str = ""

    def __len__(self) -> int:
        return len(self.device_ids)

    def subset(self, idx) -> FeatureSet:
        idx = np.asarray(idx, dtype=np.int64)
        return FeatureSet(self.eps[idx], self.iq[idx], self.device_ids[idx],
                          [self.domains[i] for i in idx], [self.keys[i] for i in idx], self.name)

    @staticmethod
    def concat(sets: list[FeatureSet], name: str = "") -> FeatureSet:
        return FeatureSet(np.concatenate([s.eps for s in sets]), np.concatenate([s.iq for s in sets]),
                          np.concatenate([s.device_ids for s in sets]),
                          [d for s in sets for d in s.domains], [k for s in sets for k in s.keys], name)


def _features_chunk(args):
    spec, device, domain, indices, seed, cfg, window = args
    base = scenario_baseband(spec)
    eps, iq = [], []
    for k in indices:
        meta = frame_meta(spec, device, domain, k, seed)
        fr = synthesize(spec, device, meta, base)
        eps.append(eps_of_frame(fr, cfg).as_array())
        iq.append(raw_iq_representation(fr, window))
    return np.asarray(eps, dtype=np.float32), np.asarray(iq, dtype=np.float32)


def extract_features(population: list[DeviceProfile], spec: ScenarioSpec, frames_per_device: int, seed: int,
                     domain: DomainLabel, cfg: EpsConfig = EpsConfig(), window: int = 4096,
                     jobs: int = 1, name: str | None = None) -> FeatureSet:
    """Synthesise one domain of a scenario and compute both model inputs.

    Every frame depends only on its labels and ``seed``, so the result does not
    depend on ``jobs``.
    """
    if domain not in spec.domains():
        raise ValidationError(f"domain {domain.name()} is not part of scenario {spec.name}")
    tasks = [(spec, dev, domain, range(frames_per_device), seed, cfg, window) for dev in population]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            parts = list(ex.map(_features_chunk, tasks))
    else:
        parts = [_features_chunk(t) for t in tasks]
    n = frames_per_device
    ids = np.repeat([d.device_id for d in population], n)
    keys = [(seed, d.device_id, domain.day, domain.location, k) for d in population for k in range(n)]
    return FeatureSet(np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts]), ids,
                      [domain] * len(ids), keys, name or domain_name(domain, spec))


# Short names for the evaluation domains; Loc A doubles as day 0.
NAMED_DOMAINS = {
    "A": ("fixed-location", 0), "B": ("fixed-location", 1), "C": ("fixed-location", 2),
    "random": ("random-location", 0),
    "day0": ("cross-day", 0), "day1": ("cross-day", 1), "day2": ("cross-day", 2),
}


def named_domain(name: str, base: ScenarioSpec | None = None) -> tuple[ScenarioSpec, DomainLabel]:
    """Scenario and domain label for a short name such as ``"C"`` or ``"day1"``.

    Settings other than the scenario name are taken from ``base``.
    """
    if name not in NAMED_DOMAINS:
        raise ValidationError(f"unknown domain {name!r}; expected one of {sorted(NAMED_DOMAINS)}")
    scenario, i = NAMED_DOMAINS[name]
    spec = replace(base or ScenarioSpec(), name=scenario)
    return spec, spec.domains()[i]


def named_features(name: str, population: list[DeviceProfile], frames_per_device: int, seed: int,
                   base: ScenarioSpec | None = None, jobs: int = 1) -> FeatureSet:
    spec, dom = named_domain(name, base)
    return extract_features(population, spec, frames_per_device, seed, dom, jobs=jobs, name=name)


def features_from_records(header: DatasetHeader, records: Iterable[Record], name: str = "",
                          cfg: EpsConfig = EpsConfig(), window: int = 4096) -> FeatureSet:
    """Model inputs from a stored dataset.

    IQ datasets yield both representations; EPS datasets carry no raw I/Q, so
    ``iq`` is empty. Keys are the record positions in the file.
    """
    eps, iq, ids, doms = [], [], [], []
    for rec in records:
        if header.payload_kind is PayloadKind.IQ:
            fr = rec.to_frame(header.sample_rate_hz)
            eps.append(eps_of_frame(fr, cfg).as_array())
            iq.append(raw_iq_representation(fr, window))
        else:
            eps.append(rec.eps_rows())
        ids.append(rec.device_id)
        doms.append(rec.domain)
    if not ids:
        raise ValidationError("dataset has no records")
    keys = [(name, i) for i in range(len(ids))]
    iq_arr = np.asarray(iq, dtype=np.float32) if iq else np.zeros((len(ids), 2, 0), dtype=np.float32)
    return FeatureSet(np.asarray(eps, dtype=np.float32), iq_arr, np.asarray(ids), doms, keys, name)


# folds

@dataclass(frozen=True)
class FoldSplit:
    folds: tuple[np.ndarray, ...]

    @property
    def k(self) -> int:
        return len(self.folds)

    def train_test(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        train = np.sort(np.concatenate([f for j, f in enumerate(self.folds) if j != i]).astype(np.int64)) \
            if self.k > 1 else self.folds[0]
        return train, self.folds[i]


def kfold_split(device_ids, k: int, seed: int) -> FoldSplit:
    """Stratified split: each device's records are shuffled, then dealt round-robin."""
    device_ids = np.asarray(device_ids)
    if k < 1:
        raise ValidationError("k must be at least 1")
    buckets: list[list[int]] = [[] for _ in range(k)]
    for dev in np.unique(device_ids):
        idx = np.flatnonzero(device_ids == dev)
        if idx.size < k:
            raise ValidationError(f"device {dev} has {idx.size} records, fewer than k={k}")
        idx = idx[np.random.default_rng([seed, int(dev)]).permutation(idx.size)]
        for j, r in enumerate(idx):
            buckets[j % k].append(int(r))
    return FoldSplit(tuple(np.sort(np.array(b, dtype=np.int64)) for b in buckets))


# models

@dataclass(frozen=True)
class EvalConfig:
    k: int = 5
    seed: int = 0
    train: cnn.TrainConfig = cnn.TrainConfig()
    channels: tuple[int, ...] = (8, 16, 32, 64, 64, 128)
    fc_widths: tuple[int, ...] = (512, 128)
    cross_domain_models: int = 5


Predictor = Callable[[FeatureSet], np.ndarray]


def model_input(fs: FeatureSet, model_kind: str) -> np.ndarray:
    if model_kind == "iq_cnn":
        return fs.iq
    if model_kind == "eps_cnn":
        # rows sum to one; rescale so the average bin is one
        return fs.eps * np.float32(fs.eps.shape[-1])
    if model_kind == "nearest_centroid":
        return fs.eps
    raise ValidationError(f"unknown model kind {model_kind!r}; expected one of {MODEL_KINDS}")


def fit_model(train: FeatureSet, model_kind: str, cfg: EvalConfig, seed: int, labels=None,
              log=None) -> Predictor:
    """Train ``model_kind`` and return a function mapping features to device ids."""
    x = model_input(train, model_kind)
    y = train.device_ids if labels is None else np.asarray(labels)
    if len(x) == 0:
        raise ValidationError("training set is empty")
    if model_kind == "nearest_centroid":
        m = nearest_centroid_fit(x, y)
        return lambda fs: nearest_centroid_predict_batch(m, model_input(fs, model_kind))[0]
    class_ids = np.unique(y)
    index = {int(c): i for i, c in enumerate(class_ids)}
    yi = np.array([index[int(v)] for v in y])
    arch = cnn.CnnArchitecture(n_classes=class_ids.size, input_width=x.shape[-1], channels=cfg.channels,
                               fc_widths=cfg.fc_widths)
    tcfg = cnn.TrainConfig(**{**cfg.train.__dict__, "seed": seed})
    res = cnn.train(x, yi, arch, tcfg, log=log)
    return lambda fs: class_ids[cnn.predict_batch(res.params, model_input(fs, model_kind))[0]]


# reports

@dataclass
class EvalReport:
    train_domain: str
    test_domain: str
    model_kind: str
    fold_accuracies: list[float]
    class_ids: list[int]
    confusion: np.ndarray = field(default_factory=lambda: np.zeros((0, 0), dtype=np.int64))

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean(self.fold_accuracies)) if self.fold_accuracies else float("nan")

    @property
    def pooled_accuracy(self) -> float:
        """Confusion trace over total: accuracy over every evaluated prediction."""
        total = self.confusion.sum()
        return float(np.trace(self.confusion) / total) if total else float("nan")


def _confusion(class_ids, y_true, y_pred) -> np.ndarray:
    index = {int(c): i for i, c in enumerate(class_ids)}
    cm = np.zeros((len(class_ids), len(class_ids)), dtype=np.int64)
    for t, p in zip(y_true, y_pred):
        cm[index[int(t)], index[int(p)]] += 1
    return cm


def assert_no_leakage(train: FeatureSet, test: FeatureSet) -> None:
    shared = set(train.keys) & set(test.keys)
    if shared:
        raise ValidationError(f"{len(shared)} records appear in both training and test sets")


def evaluate_same_domain(fs: FeatureSet, model_kind: str, cfg: EvalConfig = EvalConfig(),
                         shuffle_labels: bool = False, log=None) -> EvalReport:
    """k-fold cross-validation within one feature set.

    With ``shuffle_labels`` the training labels are permuted (seeded), which
    should drive accuracy to chance; it guards against leakage.
    """
    split = kfold_split(fs.device_ids, cfg.k, cfg.seed)
    class_ids = [int(c) for c in np.unique(fs.device_ids)]
    report = EvalReport(fs.name, fs.name, model_kind, [], class_ids,
                        np.zeros((len(class_ids),) * 2, dtype=np.int64))
    for i in range(split.k):
        tr, te = split.train_test(i)
        train, test = fs.subset(tr), fs.subset(te)
        if split.k > 1:
            assert_no_leakage(train, test)
        labels = train.device_ids
        if shuffle_labels:
            labels = np.random.default_rng([cfg.seed, i, 0x5EED]).permutation(labels)
        pred = fit_model(train, model_kind, cfg, cfg.seed + i, labels, log)(test)
        report.fold_accuracies.append(float(np.mean(pred == test.device_ids)))
        report.confusion += _confusion(class_ids, test.device_ids, pred)
    return report


def evaluate_cross_domain(train: FeatureSet, tests: FeatureSet | list[FeatureSet], model_kind: str,
                          cfg: EvalConfig = EvalConfig(), log=None) -> list[EvalReport]:
    """Train on all of ``train`` and test on each set in ``tests``.

    ``cfg.cross_domain_models`` models with seeds ``cfg.seed + i`` play the role
    of folds; the confusion matrix accumulates over all of them.
    """
    tests = [tests] if isinstance(tests, FeatureSet) else list(tests)
    class_ids = [int(c) for c in np.unique(train.device_ids)]
    for t in tests:
        if set(np.unique(t.device_ids).tolist()) != set(class_ids):
            raise ValidationError(f"device set of {t.name!r} differs from training set {train.name!r}")
        assert_no_leakage(train, t)
    reports = [EvalReport(train.name, t.name, model_kind, [], class_ids,
                          np.zeros((len(class_ids),) * 2, dtype=np.int64)) for t in tests]
    for i in range(max(1, cfg.cross_domain_models)):
        predict = fit_model(train, model_kind, cfg, cfg.seed + i, log=log)
        for rep, t in zip(reports, tests):
            pred = predict(t)
            rep.fold_accuracies.append(float(np.mean(pred == t.device_ids)))
            rep.confusion += _confusion(class_ids, t.device_ids, pred)
    return reports


def evaluate_matrix(sets: dict[str, FeatureSet], train_names: list[str], test_names: list[str],
                    model_kind: str, cfg: EvalConfig = EvalConfig(), log=None) -> list[EvalReport]:
    """Train-domain x test-domain accuracy matrix; diagonal cells use k-fold CV."""
    out = []
    for tr in train_names:
        off = [sets[t] for t in test_names if t != tr]
        reps = {r.test_domain: r for r in (evaluate_cross_domain(sets[tr], off, model_kind, cfg, log)
                                           if off else [])}
        if tr in test_names:
            reps[tr] = evaluate_same_domain(sets[tr], model_kind, cfg, log=log)
        out.extend(reps[t] for t in test_names)
    return out


REPORT_COLUMNS = ("train_domain", "test_domain", "model", "fold", "accuracy")


def format_reports(reports: list[EvalReport]) -> str:
    """Accuracy table followed by one confusion block per report."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for r in reports:
        for f, acc in enumerate(r.fold_accuracies):
            w.writerow([r.train_domain, r.test_domain, r.model_kind, f, repr(float(acc))])
    for r in reports:
        buf.write(f"\n# confusion {r.train_domain} -> {r.test_domain} ({r.model_kind})\n")
        w.writerow(["true\\pred"] + [str(c) for c in r.class_ids])
        for c, row in zip(r.class_ids, r.confusion):
            w.writerow([str(c)] + [str(int(v)) for v in row])
    return buf.getvalue()


def emit_report(reports: EvalReport | list[EvalReport], path: str | Path) -> None:
    if isinstance(reports, EvalReport):
        reports = [reports]
    Path(path).write_text(format_reports(reports))


def parse_reports(path: str | Path) -> list[EvalReport]:
    text = Path(path).read_text()
    table, *blocks = text.split("\n# confusion ")
    rows = list(csv.reader(io.StringIO(table)))
    if not rows or tuple(rows[0]) != REPORT_COLUMNS:
        raise ValidationError("report does not start with the expected header")
    order: list[tuple] = []
    accs: dict[tuple, list[float]] = {}
    for row in rows[1:]:
        if not row:
            continue
        key = (row[0], row[1], row[2])
        if key not in accs:
            order.append(key)
            accs[key] = []
        accs[key].append(float(row[4]))
    conf = {}
    for b in blocks:
        head, body = b.split("\n", 1)
        names, model = head.rsplit(" (", 1)
        tr, te = names.split(" -> ")
        crow = [r for r in csv.reader(io.StringIO(body)) if r]
        ids = [int(c) for c in crow[0][1:]]
        conf[(tr, te, model.rstrip(")"))] = (ids, np.array([[int(v) for v in r[1:]] for r in crow[1:]],
                                                          dtype=np.int64).reshape(len(ids), len(ids)))
    out = []
    for key in order:
        ids, cm = conf.get(key, ([], np.zeros((0, 0), dtype=np.int64)))
        out.append(EvalReport(key[0], key[1], key[2], accs[key], ids, cm))
    return out
