import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import make_dataset
from oracles import auc_mann_whitney
from tracecls.errors import SchemaError, SingleClassLabels, TooFewSamples, UnknownFamily
from tracecls.evaluation import (
    ClassifierConfig,
    SplitSpec,
    cross_validate,
    leave_one_family_out,
    majority_vote,
    make_split,
    rates,
    read_verdicts,
    repeated_split_eval,
    roc_and_auc,
)
from tracecls.featurize import fit_vocabulary, transform
from tracecls.synth import SynthConfig, generate


# --- ROC / AUC ----------------------------------------------------------------


def test_auc_examples():
    assert roc_and_auc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]).auc == 1.0
    assert roc_and_auc([0.3] * 6, [1, 0, 1, 0, 0, 1]).auc == 0.5
    assert roc_and_auc([0.9, 0.8, 0.7, 0.6], [1, 0, 1, 0]).auc == 0.75


def test_auc_single_class():
    with pytest.raises(SingleClassLabels):
        roc_and_auc([0.1, 0.2], [1, 1])


scores_labels = st.integers(2, 200).flatmap(
    lambda n: st.tuples(
        st.lists(st.sampled_from([0.0, 0.1, 0.25, 0.5, 0.75, 0.9, 1.0]) | st.floats(-5, 5), min_size=n, max_size=n),
        st.lists(st.integers(0, 1), min_size=n, max_size=n).filter(lambda ys: 0 < sum(ys) < len(ys)),
    )
)


@settings(max_examples=80, deadline=None)
@given(scores_labels)
def test_auc_equals_mann_whitney(data):
    scores, labels = data
    curve = roc_and_auc(scores, labels)
    assert abs(curve.auc - auc_mann_whitney(scores, labels)) < 1e-12
    fa = [p[0] for p in curve.points]
    det = [p[1] for p in curve.points]
    assert curve.points[0] == (0.0, 0.0) and curve.points[-1] == (1.0, 1.0)
    assert fa == sorted(fa) and det == sorted(det)
    trapezoid = sum((fa[i + 1] - fa[i]) * (det[i + 1] + det[i]) / 2 for i in range(len(fa) - 1))
    assert curve.auc == pytest.approx(trapezoid, abs=1e-12)
    assert len(curve.points) == len(set(scores)) + 1


# --- rates ---------------------------------------------------------------------


def test_rates_examples():
    assert rates([1, 0, 1, 0], [1, 0, 1, 0]) == {"test_error": 0.0, "fp_rate": 0.0, "detection_rate": 1.0}
    assert rates([1, 1, 1, 1], [1, 0, 1, 0]) == {"test_error": 0.5, "fp_rate": 1.0, "detection_rate": 1.0}
    labels = [1] * 6 + [0] * 4
    preds = [1] * 5 + [0] + [1] + [0] * 3
    r = rates(preds, labels)
    assert r["test_error"] == pytest.approx(0.2)
    assert r["fp_rate"] == pytest.approx(0.25)
    assert r["detection_rate"] == pytest.approx(0.833333, abs=1e-6)


def test_rates_single_class():
    with pytest.raises(SingleClassLabels):
        rates([0, 1], [0, 0])


# --- majority voting -------------------------------------------------------------


def test_majority_vote():
    votes = majority_vote(
        {
            "a": ["malware"] * 3 + ["clean"] * 2,
            "b": ["malware"] * 2 + ["clean"] * 2,
            "c": [],
        }
    )
    assert votes == {"a": 1, "b": 0}


def test_read_verdicts():
    text = "sample_id,vendor,verdict\ns1,v1,malware\ns1,v2,clean\ns2,v1,MALWARE\n"
    assert read_verdicts(text) == {"s1": ["malware", "clean"], "s2": ["malware"]}
    with pytest.raises(SchemaError):
        read_verdicts("sample_id,vendor,verdict\ns1,v1,maybe\n")
    with pytest.raises(SchemaError):
        read_verdicts("id,verdict\ns1,malware\n")


# --- repeated splits -------------------------------------------------------------


def separable_dataset(n=40):
    y = np.r_[np.ones(n // 2, int), np.zeros(n // 2, int)]
    rng = np.random.default_rng(1)
    x = rng.integers(0, 2, (n, 6))
    x[:, 0] = y
    x[:, 1] = 1 - y
    return make_dataset(x, y)


def test_stratified_split_keeps_class_proportions():
    labels = np.r_[np.ones(50, int), np.zeros(30, int)]
    train, test = make_split(labels, SplitSpec(seed=3), 0)
    assert labels[train].sum() == 40 and (labels[train] == 0).sum() == 24
    assert len(set(train) & set(test)) == 0 and len(train) + len(test) == 80


@pytest.mark.parametrize("kind", ["logreg", "nb", "svm"])
def test_single_repetition_on_separable_data(kind):
    ds = separable_dataset()
    report = repeated_split_eval(ds, ClassifierConfig(kind=kind, C=10.0), SplitSpec(seed=0, repetitions=1), k=2)
    rec = report.records[0]
    assert rec.auc == 1.0 and rec.test_error == 0.0


def test_eval_report_is_deterministic_and_recomputable():
    ds = separable_dataset(60)
    spec = SplitSpec(seed=5, repetitions=4)
    a = repeated_split_eval(ds, ClassifierConfig(), spec, k=3)
    b = repeated_split_eval(ds, ClassifierConfig(), spec, k=3)
    assert a.to_json() == b.to_json() and a.metrics_csv() == b.metrics_csv()
    agg = a.aggregate
    for metric in ("auc", "test_error", "fp_rate", "detection_rate"):
        values = [getattr(r, metric) for r in a.records]
        assert agg[metric]["mean"] == float(np.mean(values))
        assert agg[metric]["std"] == float(np.std(values))
        assert all(0.0 <= v <= 1.0 for v in values)
    doc = json.loads(a.to_json())
    assert doc["config"]["k_features"] == 3 and len(doc["records"]) == 4


def test_parallel_repetitions_match_serial():
    ds = separable_dataset(60)
    spec = SplitSpec(seed=5, repetitions=3)
    serial = repeated_split_eval(ds, ClassifierConfig(kind="svm"), spec, k=3, jobs=1)
    parallel = repeated_split_eval(ds, ClassifierConfig(kind="svm"), spec, k=3, jobs=2)
    assert serial.to_json() == parallel.to_json()


def test_select_on_full_uses_one_selection():
    ds = separable_dataset(60)
    report = repeated_split_eval(ds, ClassifierConfig(kind="nb"), SplitSpec(repetitions=3), k=2, select_on_full=True)
    assert len({r.selected for r in report.records}) == 1


# --- cross validation ----------------------------------------------------------------


def test_cv_single_value_grid():
    ds = separable_dataset()
    result = cross_validate(ds, ClassifierConfig(kind="svm"), [0.5], k=3)
    assert result.best == 0.5


def test_cv_logreg_includes_unregularized_and_breaks_ties_low():
    ds = separable_dataset()
    result = cross_validate(ds, ClassifierConfig(), [2e-3, 2e-2], k=2)
    values = [v for v, _ in result.mean_auc]
    assert values == [0.0, 2e-3, 2e-2]
    assert all(a == 1.0 for _, a in result.mean_auc)
    assert result.best == 0.0


def test_cv_too_few_samples():
    ds = make_dataset([[1], [0], [1], [0], [1], [0], [0], [0]], [1, 0, 1, 0, 1, 0, 0, 0])
    with pytest.raises(TooFewSamples):
        cross_validate(ds, ClassifierConfig(kind="nb"), [1.0], k=1, folds=5)


def test_cv_regularization_only_chosen_when_not_worse():
    config = SynthConfig(seed=3, n_goodware=120, families=SynthConfig().families[:3], n_core_signal=10,
                         n_family_signal=2, vocab_sizes={"api": 150, "reg:write": 150, "str": 100},
                         background_density=0.05)
    reports, _ = generate(config)
    ds = transform(reports, fit_vocabulary(reports))
    y = ds.labels.copy()
    flip = np.random.default_rng(0).random(len(y)) < 0.1
    y[flip] = 1 - y[flip]
    noisy = ds.with_labels(y)
    result = cross_validate(noisy, ClassifierConfig(max_iters=500), [2e-3], k=50, seed=1)
    scores = dict(result.mean_auc)
    assert scores[result.best] >= scores[0.0]


# --- leave one family out ----------------------------------------------------------------


def test_loo_indistinguishable_family_is_fully_detected():
    rng = np.random.default_rng(4)
    good = rng.integers(0, 2, (30, 8))
    good[:, :3] = 0
    rans = rng.integers(0, 2, (10, 8))
    rans[:, :3] = 1
    x = np.vstack([good, rans, rans])
    y = [0] * 30 + [1] * 20
    families = [None] * 30 + ["A"] * 10 + ["B"] * 10
    result = leave_one_family_out(make_dataset(x, y, families), "A", k=3)
    assert result.detection_rate == 1.0 and result.n_samples == 10


def test_loo_unknown_family():
    ds = make_dataset([[1], [0]], [1, 0], ["A", None])
    with pytest.raises(UnknownFamily):
        leave_one_family_out(ds, "Z", k=1)


def _mode_dataset(mode, seed):
    reports, _ = generate(SynthConfig(seed=seed, mode=mode))
    return transform(reports, fit_vocabulary(reports))


def test_loo_shared_core_generalizes():
    ds = _mode_dataset("shared-core", 11)
    result = leave_one_family_out(ds, "CryptoWall", k=100, lam=2e-3)
    assert result.detection_rate >= 0.9
    wide = leave_one_family_out(ds, "CryptoWall", k=400, lam=2e-3)
    assert set(result.selected) <= set(wide.selected)


def test_loo_disjoint_mode_still_runs():
    ds = _mode_dataset("disjoint", 11)
    result = leave_one_family_out(ds, "Locker", k=100, lam=2e-3)
    assert 0.0 <= result.detection_rate <= 1.0
