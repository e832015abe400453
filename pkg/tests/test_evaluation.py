import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from epsfp import evaluation as ev
from epsfp.errors import ValidationError
from epsfp.evaluation import (EvalConfig, EvalReport, FeatureSet, emit_report, evaluate_cross_domain,
                              evaluate_same_domain, kfold_split, named_domain, parse_reports)
from epsfp.waveform import DomainLabel


def toy_set(ids, name="toy", width=8, seed=0, offset=0):
    ids = np.asarray(ids)
    rng = np.random.default_rng(seed)
    eps = rng.random((len(ids), 2, width)).astype(np.float32)
    eps[np.arange(len(ids)), 0, ids % width] += 10
    eps /= eps.sum(axis=2, keepdims=True)
    keys = [(name, offset + i) for i in range(len(ids))]
    return FeatureSet(eps, np.zeros((len(ids), 2, 4), np.float32), ids, [DomainLabel()] * len(ids), keys, name)


# folds

@settings(max_examples=50, deadline=None)
@given(counts=st.lists(st.integers(5, 12), min_size=1, max_size=6), k=st.integers(1, 5), seed=st.integers(0, 99))
def test_kfold_partition_and_stratification(counts, k, seed):
    ids = np.concatenate([np.full(c, 100 + i) for i, c in enumerate(counts)])
    split = kfold_split(ids, k, seed)
    allidx = np.concatenate(split.folds)
    assert sorted(allidx.tolist()) == list(range(len(ids)))
    for f in split.folds:
        for i, c in enumerate(counts):
            n = int(np.sum(ids[f] == 100 + i))
            assert c // k <= n <= -(-c // k)
    for i in range(split.k):
        tr, te = split.train_test(i)
        if k > 1:
            assert not set(tr) & set(te) and len(tr) + len(te) == len(ids)
    assert all(np.array_equal(a, b) for a, b in zip(split.folds, kfold_split(ids, k, seed).folds))


def test_kfold_seven_records_brute_force():
    ids = np.array([0, 0, 0, 0, 1, 1, 1])
    split = kfold_split(ids, 3, seed=2)
    sizes = sorted(len(f) for f in split.folds)
    assert sizes == [2, 2, 3]
    # every record in exactly one fold, every pair of folds disjoint
    for a, b in itertools.combinations(split.folds, 2):
        assert not set(a) & set(b)
    for i in range(7):
        assert sum(i in f for f in split.folds) == 1


def test_kfold_single_fold_trains_on_everything():
    split = kfold_split([3, 3, 4], 1, 0)
    tr, te = split.train_test(0)
    assert tr.tolist() == te.tolist() == [0, 1, 2]


def test_kfold_errors():
    with pytest.raises(ValidationError):
        kfold_split([1, 1, 2], 2, 0)
    with pytest.raises(ValidationError):
        kfold_split([1, 1], 0, 0)


# stub models

def _stub(monkeypatch, kind):
    def fit(train, model_kind, cfg, seed, labels=None, log=None):
        y = train.device_ids if labels is None else np.asarray(labels)
        if kind == "perfect":
            return lambda fs: fs.device_ids.copy()
        vals, counts = np.unique(y, return_counts=True)
        return lambda fs: np.full(len(fs), vals[np.argmax(counts)])
    monkeypatch.setattr(ev, "fit_model", fit)


def test_perfect_stub_scores_one(monkeypatch):
    _stub(monkeypatch, "perfect")
    r = evaluate_same_domain(toy_set(np.repeat([1, 2, 3], 5)), "nearest_centroid")
    assert r.fold_accuracies == [1.0] * 5
    assert np.array_equal(r.confusion, np.diag([5, 5, 5]))


def test_majority_stub_scores_class_share(monkeypatch):
    _stub(monkeypatch, "majority")
    ids = np.array([1] * 10 + [2] * 5)
    r = evaluate_same_domain(toy_set(ids), "nearest_centroid")
    assert r.fold_accuracies == pytest.approx([2 / 3] * 5)
    assert r.confusion[:, 0].sum() == 15


def test_centroid_on_separable_toy():
    r = evaluate_same_domain(toy_set(np.repeat([0, 1, 2, 3], 10)), "nearest_centroid")
    assert r.mean_accuracy == 1.0


def test_mean_matches_folds_and_pooled_matches_confusion():
    rng = np.random.default_rng(3)
    fs = toy_set(np.repeat([0, 1, 2], 12))
    fs.eps[:] = rng.random(fs.eps.shape)  # destroy the class signal so accuracy is mid-range
    r = evaluate_same_domain(fs, "nearest_centroid")
    assert r.mean_accuracy == pytest.approx(np.mean(r.fold_accuracies))
    assert r.pooled_accuracy == pytest.approx(np.trace(r.confusion) / r.confusion.sum())
    assert r.confusion.sum() == 36
    # equal fold sizes make the two accuracies agree
    sizes = [len(f) for f in kfold_split(fs.device_ids, 5, 0).folds]
    weighted = np.dot(r.fold_accuracies, sizes) / sum(sizes)
    assert r.pooled_accuracy == pytest.approx(weighted)


def test_shuffled_labels_do_not_leak():
    fs = toy_set(np.repeat(np.arange(6), 10))
    r = evaluate_same_domain(fs, "nearest_centroid", shuffle_labels=True)
    assert r.mean_accuracy < 0.5


def test_cross_domain_repeats_models():
    tr, te = toy_set(np.repeat([0, 1], 5), "a"), toy_set(np.repeat([0, 1], 5), "b", seed=1)
    (r,) = evaluate_cross_domain(tr, te, "nearest_centroid", EvalConfig(cross_domain_models=3))
    assert len(r.fold_accuracies) == 3 and r.confusion.sum() == 30
    assert r.train_domain == "a" and r.test_domain == "b"


def test_leakage_guard():
    tr = toy_set(np.repeat([0, 1], 5), "a")
    with pytest.raises(ValidationError, match="both"):
        evaluate_cross_domain(tr, tr, "nearest_centroid")


def test_device_set_mismatch():
    with pytest.raises(ValidationError):
        evaluate_cross_domain(toy_set([0, 0, 1, 1], "a"), toy_set([0, 0, 2, 2], "b"), "nearest_centroid")


def test_unknown_model_kind():
    with pytest.raises(ValidationError):
        evaluate_same_domain(toy_set(np.repeat([0, 1], 5)), "forest")


# report files

def test_report_round_trip(tmp_path):
    reps = [EvalReport("A", "A", "eps_cnn", [1.0, 0.5, 0.125], [3, 9], np.array([[4, 1], [0, 3]])),
            EvalReport("A", "random", "iq_cnn", [0.1 / 3], [3, 9], np.array([[1, 2], [3, 4]]))]
    emit_report(reps, tmp_path / "r.csv")
    back = parse_reports(tmp_path / "r.csv")
    assert len(back) == 2
    for a, b in zip(reps, back):
        assert (a.train_domain, a.test_domain, a.model_kind, a.class_ids) == \
               (b.train_domain, b.test_domain, b.model_kind, b.class_ids)
        assert a.fold_accuracies == b.fold_accuracies
        assert np.array_equal(a.confusion, b.confusion)
    emit_report(back, tmp_path / "r2.csv")
    assert (tmp_path / "r.csv").read_bytes() == (tmp_path / "r2.csv").read_bytes()


def test_empty_report_is_header_only(tmp_path):
    emit_report([], tmp_path / "e.csv")
    assert (tmp_path / "e.csv").read_text() == "train_domain,test_domain,model,fold,accuracy\n"
    assert parse_reports(tmp_path / "e.csv") == []


def test_bad_report_header(tmp_path):
    (tmp_path / "x.csv").write_text("a,b\n")
    with pytest.raises(ValidationError):
        parse_reports(tmp_path / "x.csv")


# named domains

def test_named_domains():
    spec, d = named_domain("C")
    assert spec.name == "fixed-location" and d.location == 2
    spec, d = named_domain("day2")
    assert spec.name == "cross-day" and d.day == 2
    spec, d = named_domain("random")
    assert spec.name == "random-location"
    with pytest.raises(ValidationError):
        named_domain("Z")


def test_features_independent_of_jobs(population):
    a = ev.named_features("B", population[:2], 2, seed=3)
    b = ev.named_features("B", population[:2], 2, seed=3, jobs=2)
    assert np.array_equal(a.eps, b.eps) and np.array_equal(a.iq, b.iq) and a.keys == b.keys
    assert a.eps.shape == (4, 2, 4096) and a.iq.shape == (4, 2, 4096)
