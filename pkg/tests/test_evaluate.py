import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sklearn.metrics import accuracy_score, confusion_matrix, precision_recall_fscore_support

from iotdevid.dataset import Condition, ConditionDataset, SessionRecord, State, assign_bitmasks
from iotdevid.evaluate import (AGGREGATED, INDIVIDUAL, ConfusionMatrix, EmptyMatrix, LengthMismatch, MeanStd,
                               UnknownLabel, confusion, metrics, repeat_seeds, run_condition, score,
                               session_sweep, write_class_report, write_confusion, write_heatmaps, write_summary,
                               write_sweep, write_sweep_summary)
from iotdevid.features import FingerprintTable


def test_hand_confusion():
    true = list("AABBCC")
    pred = list("ABBBAC")
    cm = confusion(true, pred, "ABC")
    assert cm.counts.tolist() == [[1, 1, 0], [0, 2, 0], [1, 0, 1]]
    assert cm.support().tolist() == [2, 2, 2] and cm.total == 6


def test_confusion_errors():
    with pytest.raises(LengthMismatch):
        confusion(["A"], [], ["A"])
    with pytest.raises(UnknownLabel):
        confusion(["A"], ["Z"], ["A"])
    with pytest.raises(EmptyMatrix):
        metrics(ConfusionMatrix(("A",), np.zeros((1, 1))))


def test_perfect_and_single_column():
    _, m = score(list("ABCA"), list("ABCA"))
    assert m.accuracy == 1.0 and m.macro == (1.0, 1.0, 1.0) and m.weighted == (1.0, 1.0, 1.0)
    cm, m = score(list("ABC"), list("CCC"), "ABC")
    assert np.count_nonzero(cm.counts.sum(axis=0)) == 1
    a = m.per_class[0]
    assert (a.precision, a.recall, a.f1, a.support) == (0.0, 0.0, 0.0, 1.0)


def test_ring_base_station_formula():
    # precision 1.0 and recall 0.223 give f1 by the harmonic mean, not 0.336
    tp, fn = 223, 777
    cm = ConfusionMatrix(("Other", "Ring"), np.array([[1000, 0], [fn, tp]]))
    ring = metrics(cm).per_class[1]
    assert ring.precision == 1.0 and ring.recall == pytest.approx(0.223)
    assert ring.f1 == pytest.approx(2 * 0.223 / 1.223, abs=1e-12)
    assert round(ring.f1, 3) == 0.365


labels = st.lists(st.sampled_from("ABCDE"), min_size=1, max_size=60)


@pytest.mark.filterwarnings("ignore:A single label")
@settings(max_examples=200, deadline=None)
@given(labels, st.data())
def test_matches_sklearn(true, data):
    pred = data.draw(st.lists(st.sampled_from("ABCDEF"), min_size=len(true), max_size=len(true)))
    cm, m = score(true, pred)
    classes = sorted(set(true) | set(pred))
    assert cm.counts.tolist() == confusion_matrix(true, pred, labels=classes).tolist()
    assert m.accuracy == pytest.approx(accuracy_score(true, pred), abs=1e-12)
    for avg, ours in (("macro", m.macro), ("weighted", m.weighted)):
        ref = precision_recall_fscore_support(true, pred, labels=classes, average=avg, zero_division=0)[:3]
        assert ours == pytest.approx(ref, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(labels)
def test_identity_scores_one(y):
    _, m = score(y, y)
    assert m.accuracy == 1.0 and m.macro_f1 == 1.0


@settings(max_examples=100, deadline=None)
@given(labels, st.data())
def test_reordering_invariance(true, data):
    pred = data.draw(st.lists(st.sampled_from("ABCDE"), min_size=len(true), max_size=len(true)))
    classes = sorted(set(true) | set(pred))
    _, m = score(true, pred, classes)
    _, r = score(true, pred, classes[::-1])
    assert m.macro_f1 == pytest.approx(r.macro_f1, abs=1e-12)
    perm = data.draw(st.permutations(range(len(true))))
    _, s = score([true[i] for i in perm], [pred[i] for i in perm], classes)
    assert s.weighted == pytest.approx(m.weighted, abs=1e-12)


def test_mean_std():
    assert MeanStd.of([0.5]) == MeanStd(0.5, 0.0)
    ms = MeanStd.of([1.0, 2.0, 3.0, 4.0])
    assert ms.mean == 2.5 and ms.std == pytest.approx(np.std([1, 2, 3, 4], ddof=1))
    assert repeat_seeds(10, 3) == [10, 11, 12]


def test_random_baseline():
    rng = np.random.default_rng(0)
    classes = [f"c{i:02d}" for i in range(32)]
    true = rng.choice(classes, 50000).tolist()
    pred = rng.choice(classes, 50000).tolist()
    _, m = score(true, pred)
    assert abs(m.accuracy - 1 / 32) <= 0.01


# -- repeated runs ---------------------------------------------------------------


def make_dataset(name, n_per_class=40, seed=0, noise=0.0):
    rng = np.random.default_rng(seed)
    X, macs, labels = [], [], []
    for k, cls in enumerate("ABC"):
        base = np.zeros(30)
        base[k] = 10
        for _ in range(n_per_class):
            v = base + rng.normal(0, 1, 30)
            if rng.random() < noise:
                v[:3] = 0
            X.append(v)
            macs.append(f"02:00:00:00:00:0{k}")
            labels.append(cls)
    t = FingerprintTable(np.array(X), macs, ["S"] * len(X), labels)
    return ConditionDataset(name, t, ["S"], 1.0, ["A", "B", "C"])


def test_run_condition_single_repeat():
    d = make_dataset(Condition.ACTIVE_TRAIN)
    ind, ag = run_condition(d, d, repeats=1, base_seed=3, condition="AA", workers=1)
    assert ind.mode == INDIVIDUAL and ag.mode == AGGREGATED
    assert ind.accuracy.std == 0.0 and ind.macro_f1.std == 0.0
    assert ind.accuracy.mean == 1.0
    assert ind.timings["aggregate_s"] == 0.0 and ag.timings["aggregate_s"] >= 0.0
    assert ind.seeds == [3] and len(ind.per_class) == 3


def test_run_condition_repeats_and_workers():
    tr = make_dataset(Condition.ACTIVE_TRAIN, seed=1, noise=0.3)
    te = make_dataset(Condition.ACTIVE_TEST, seed=2, noise=0.3)
    a = run_condition(tr, te, repeats=3, base_seed=0, fraction=0.5, workers=1)
    b = run_condition(tr, te, repeats=3, base_seed=0, fraction=0.5, workers=2)
    for x, y in zip(a, b):
        assert x.macro_f1 == y.macro_f1 and x.accuracy == y.accuracy
        assert np.array_equal(x.confusion.counts, y.confusion.counts)
    ind, ag = a
    assert ind.repeats == 3 and ind.seeds == [0, 1, 2]
    assert ag.macro_f1.mean >= ind.macro_f1.mean
    assert ag.exceptions.macs == set()
    with pytest.raises(ValueError):
        run_condition(tr, te, repeats=0)


def test_report_files(tmp_path):
    d = make_dataset(Condition.ACTIVE_TRAIN)
    ind, ag = run_condition(d, d, repeats=2, condition="AA", workers=1)
    write_class_report(tmp_path / "r.csv", ag)
    write_confusion(tmp_path / "c.csv", ag)
    write_summary(tmp_path / "s.csv", [ind, ag], {"base_seed": 0})
    rep = (tmp_path / "r.csv").read_text().splitlines()
    assert rep[0] == "# schema_version=1"
    assert any(line.startswith("# seeds=0 1") for line in rep)
    assert any(line.startswith("# group_size=whole") for line in rep)
    assert "class,precision,recall,f1-score,support" in rep
    assert rep[-3].startswith("accuracy,") and rep[-2].startswith("macro avg,") and rep[-1].startswith("weighted avg,")
    summ = (tmp_path / "s.csv").read_text().splitlines()
    assert summ[-2].startswith("Individual,AA,1.000000") and summ[-1].startswith("Aggregated,AA,")


# -- sweep -----------------------------------------------------------------------


def sweep_session(ref, classes, seed):
    rng = np.random.default_rng(seed)
    X, macs, labels = [], [], []
    for cls in classes:
        k = "ABCD".index(cls)
        for _ in range(20):
            v = rng.normal(0, 1, 30)
            v[k] += 8
            X.append(v)
            macs.append(f"02:00:00:00:00:0{k}")
            labels.append(cls)
    return SessionRecord(ref, State.parse(ref[0]), None, FingerprintTable(np.array(X), macs, [ref] * len(X), labels))


def test_sweep_pairs_and_matrices(tmp_path):
    ss = [sweep_session("A1", "AB", 1), sweep_session("I2", "AB", 2), sweep_session("A3", "ABC", 3)]
    assign_bitmasks(ss, "ABCD")
    res = session_sweep(ss, workers=1)
    assert [(r.train_ref, r.test_ref, r.condition_tag) for r in res.rows] == [("A1", "I2", "AI"), ("I2", "A1", "IA")]
    refs, mi, ma = res.matrices["1100"]
    assert refs == ["A1", "I2"] and np.isnan(mi[0, 0]) and mi[0, 1] == res.rows[0].individual_f1
    summ = res.summary()
    assert set(summ) == {"AI", "IA"} and summ["AI"]["pairs"] == 1
    write_sweep(tmp_path / "sw.csv", res, {})
    write_sweep_summary(tmp_path / "sws.csv", res, {})
    names = write_heatmaps(tmp_path / "hm", res, {})
    assert sorted(names) == ["heatmap_g00_aggregated.csv", "heatmap_g00_aggregated.gp",
                             "heatmap_g00_individual.csv", "heatmap_g00_individual.gp"]
    assert len((tmp_path / "sw.csv").read_text().splitlines()) == 1 + 1 + 2


def test_sweep_disjoint():
    ss = [sweep_session("A1", "A", 1), sweep_session("I2", "B", 2)]
    assign_bitmasks(ss, "ABCD")
    res = session_sweep(ss, workers=1)
    assert res.rows == [] and res.matrices == {} and res.summary() == {}
