"""Metrics, repeated train/test runs, and the all-pairs session sweep."""
from __future__ import annotations

import csv
import math
import os
import time
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import aggregate as agg
from .dataset import ConditionDataset, SessionRecord, compatible_pairs, sample_condition
from .tree import HyperParams, fit

REPORT_SCHEMA_VERSION = 1
INDIVIDUAL = "Individual"
AGGREGATED = "Aggregated"


class LengthMismatch(ValueError):
    pass


class UnknownLabel(ValueError):
    pass


class EmptyMatrix(ValueError):
    pass


@dataclass(frozen=True)
class ConfusionMatrix:
    classes: tuple
    counts: np.ndarray  # rows true, columns predicted

    @property
    def total(self) -> float:
        return float(self.counts.sum())

    def support(self) -> np.ndarray:
        return self.counts.sum(axis=1)


def confusion(true_labels: Sequence, predicted_labels: Sequence, classes: Sequence) -> ConfusionMatrix:
    if len(true_labels) != len(predicted_labels):
        raise LengthMismatch(f"{len(true_labels)} true vs {len(predicted_labels)} predicted labels")
    index = {c: i for i, c in enumerate(classes)}
    k = len(classes)
    try:
        t = np.fromiter((index[v] for v in true_labels), dtype=np.int64, count=len(true_labels))
        p = np.fromiter((index[v] for v in predicted_labels), dtype=np.int64, count=len(predicted_labels))
    except KeyError as e:
        raise UnknownLabel(f"label {e.args[0]!r} not among classes") from None
    counts = np.bincount(t * k + p, minlength=k * k).reshape(k, k)
    return ConfusionMatrix(tuple(classes), counts)


@dataclass(frozen=True)
class ClassMetrics:
    cls: str
    precision: float
    recall: float
    f1: float
    support: float


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    per_class: tuple
    macro: tuple  # precision, recall, f1
    weighted: tuple

    @property
    def macro_f1(self) -> float:
        return self.macro[2]


def _ratio(a: float, b: float) -> float:
    return a / b if b else 0.0


def metrics(cm: ConfusionMatrix) -> Metrics:
    c = np.asarray(cm.counts, dtype=np.float64)
    total = c.sum()
    if total == 0 or c.size == 0:
        raise EmptyMatrix("confusion matrix holds no samples")
    tp = np.diag(c)
    pred = c.sum(axis=0)
    supp = c.sum(axis=1)
    rows = []
    for i, name in enumerate(cm.classes):
        p = _ratio(tp[i], pred[i])
        r = _ratio(tp[i], supp[i])
        f = _ratio(2 * p * r, p + r)
        rows.append(ClassMetrics(name, p, r, f, float(supp[i])))
    P = np.array([[m.precision, m.recall, m.f1] for m in rows])
    w = supp / total
    return Metrics(
        accuracy=float(tp.sum() / total),
        per_class=tuple(rows),
        macro=tuple(float(v) for v in P.mean(axis=0)),
        weighted=tuple(float(v) for v in w @ P),
    )


def score(true_labels: Sequence, predicted_labels: Sequence, classes: Optional[Sequence] = None) -> tuple:
    """Confusion matrix and metrics over the union of observed labels."""
    if classes is None:
        classes = sorted(set(true_labels) | set(predicted_labels))
    cm = confusion(true_labels, predicted_labels, classes)
    return cm, metrics(cm)


# ---------------------------------------------------------------------------
# repeated runs


@dataclass(frozen=True)
class MeanStd:
    mean: float
    std: float

    @classmethod
    def of(cls, values: Sequence[float]) -> "MeanStd":
        v = np.asarray(values, dtype=np.float64)
        std = float(v.std(ddof=1)) if len(v) > 1 else 0.0
        return cls(float(v.mean()), std)

    def __str__(self) -> str:
        return f"{self.mean:.3f}±{self.std:.3f}"


@dataclass
class EvaluationReport:
    condition: str
    mode: str
    accuracy: MeanStd
    macro_f1: MeanStd
    per_class: list
    macro: tuple
    weighted: tuple
    timings: dict
    repeats: int
    seeds: list
    confusion: Optional[ConfusionMatrix] = None
    hyperparams: HyperParams = field(default_factory=HyperParams)
    group_size: str = agg.WHOLE
    fraction: float = 1.0
    exceptions: Optional[agg.ExceptionList] = None

    def class_f1(self) -> dict:
        return {m.cls: m.f1 for m in self.per_class}


@dataclass
class RepeatResult:
    seed: int
    individual: tuple  # (cm, metrics)
    aggregated: tuple
    train_s: float
    test_s: float
    aggregate_s: float
    exceptions: agg.ExceptionList


def run_once(train: ConditionDataset, test: ConditionDataset, hp: HyperParams, seed: int,
             group_size=agg.WHOLE, fraction: float = 1.0, exceptions: Optional[agg.ExceptionList] = None
             ) -> RepeatResult:
    tr = sample_condition(train, fraction, seed).fingerprints
    te = sample_condition(test, fraction, seed).fingerprints
    class_order = sorted(set(train.class_order) | set(tr.labels))
    t0 = time.perf_counter()
    model = fit(tr.X, tr.labels, hp, seed=seed, class_order=class_order)
    t1 = time.perf_counter()
    predicted = model.predict(te.X)
    t2 = time.perf_counter()
    records = agg.records_from(te.macs, predicted)
    exc = exceptions if exceptions is not None else agg.build_exception_list(records)
    finals = [r.final for r in agg.aggregate(records, exc, group_size)]
    t3 = time.perf_counter()
    return RepeatResult(seed, score(te.labels, predicted), score(te.labels, finals),
                        t1 - t0, t2 - t1, t3 - t2, exc)


def _run_job(args):
    return run_once(*args)


def worker_count(default: int = 1) -> int:
    try:
        return max(1, int(os.environ.get("IOTDEVID_WORKERS", default)))
    except ValueError:
        return default


def _map(fn, jobs: list, workers: int) -> list:
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, jobs))


def repeat_seeds(base_seed: int, repeats: int) -> list[int]:
    return [base_seed + r for r in range(repeats)]


def _mean_confusion(cms: Sequence[ConfusionMatrix]) -> ConfusionMatrix:
    classes = sorted(set().union(*(cm.classes for cm in cms)))
    index = {c: i for i, c in enumerate(classes)}
    total = np.zeros((len(classes), len(classes)))
    for cm in cms:
        ix = [index[c] for c in cm.classes]
        total[np.ix_(ix, ix)] += cm.counts
    return ConfusionMatrix(tuple(classes), total / len(cms))


def _summarize(condition: str, mode: str, parts: Sequence[tuple], timings: dict, seeds: list,
               hp: HyperParams, group_size, fraction: float) -> EvaluationReport:
    cms = [p[0] for p in parts]
    ms = [p[1] for p in parts]
    acc = {}
    for m in ms:
        for cm_row in m.per_class:
            acc.setdefault(cm_row.cls, []).append(cm_row)
    per_class = [
        ClassMetrics(c, float(np.mean([r.precision for r in rows])), float(np.mean([r.recall for r in rows])),
                     float(np.mean([r.f1 for r in rows])), float(np.mean([r.support for r in rows])))
        for c, rows in sorted(acc.items())
    ]
    return EvaluationReport(
        condition=condition, mode=mode,
        accuracy=MeanStd.of([m.accuracy for m in ms]),
        macro_f1=MeanStd.of([m.macro_f1 for m in ms]),
        per_class=per_class,
        macro=tuple(float(v) for v in np.mean([m.macro for m in ms], axis=0)),
        weighted=tuple(float(v) for v in np.mean([m.weighted for m in ms], axis=0)),
        timings=timings, repeats=len(parts), seeds=list(seeds),
        confusion=_mean_confusion(cms), hyperparams=hp,
        group_size=str(group_size), fraction=fraction,
    )


def run_condition(train: ConditionDataset, test: ConditionDataset, hp: Optional[HyperParams] = None,
                  repeats: int = 1, base_seed: int = 0, group_size=agg.WHOLE, fraction: float = 1.0,
                  condition: str = "", workers: Optional[int] = None,
                  exceptions: Optional[agg.ExceptionList] = None) -> tuple[EvaluationReport, EvaluationReport]:
    """Individual and aggregated reports over ``repeats`` seeded resamples.

    Repeat ``r`` samples both datasets at ``fraction`` with seed
    ``base_seed + r``; the tree itself is deterministic.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    hp = hp or HyperParams()
    group_size = agg.parse_group_size(group_size)
    seeds = repeat_seeds(base_seed, repeats)
    jobs = [(train, test, hp, s, group_size, fraction, exceptions) for s in seeds]
    results = _map(_run_job, jobs, workers if workers is not None else worker_count())
    train_s = float(np.mean([r.train_s for r in results]))
    test_s = float(np.mean([r.test_s for r in results]))
    agg_s = float(np.mean([r.aggregate_s for r in results]))
    ind = _summarize(condition, INDIVIDUAL, [r.individual for r in results],
                     {"train_s": train_s, "test_s": test_s, "aggregate_s": 0.0}, seeds, hp, group_size, fraction)
    ag = _summarize(condition, AGGREGATED, [r.aggregated for r in results],
                    {"train_s": train_s, "test_s": test_s, "aggregate_s": agg_s}, seeds, hp, group_size, fraction)
    ag.exceptions = results[-1].exceptions
    return ind, ag


# ---------------------------------------------------------------------------
# session sweep


@dataclass(frozen=True)
class SweepRow:
    train_ref: str
    test_ref: str
    condition_tag: str
    bitmask: str
    individual_f1: float
    aggregated_f1: float
    accuracy: float
    aggregated_accuracy: float


@dataclass
class SweepResult:
    rows: list
    # bitmask -> (session refs, individual F1 matrix, aggregated F1 matrix)
    matrices: dict

    def summary(self) -> dict:
        """Per tag: mean/std over pairs of accuracy and F1, both modes."""
        by_tag = defaultdict(list)
        for r in self.rows:
            by_tag[r.condition_tag].append(r)
        out = {}
        for tag in ("AA", "AI", "IA", "II"):
            rows = by_tag.get(tag)
            if not rows:
                continue
            out[tag] = {
                INDIVIDUAL: (MeanStd.of([r.accuracy for r in rows]), MeanStd.of([r.individual_f1 for r in rows])),
                AGGREGATED: (MeanStd.of([r.aggregated_accuracy for r in rows]),
                             MeanStd.of([r.aggregated_f1 for r in rows])),
                "pairs": len(rows),
            }
        return out


def _sweep_job(args):
    train, test, hp, group_size = args
    tr, te = train.fingerprints, test.fingerprints
    model = fit(tr.X, tr.labels, hp)
    predicted = model.predict(te.X)
    finals = [r.final for r in agg.aggregate(agg.records_from(te.macs, predicted), None, group_size)]
    _, mi = score(te.labels, predicted)
    _, ma = score(te.labels, finals)
    return mi, ma


def session_sweep(sessions: Sequence[SessionRecord], hp: Optional[HyperParams] = None, group_size=agg.WHOLE,
                  workers: Optional[int] = None) -> SweepResult:
    """Train on each session and test on every other session sharing its bitmask."""
    hp = hp or HyperParams()
    group_size = agg.parse_group_size(group_size)
    by_ref = {s.session_ref: s for s in sessions}
    pairs = compatible_pairs(sessions)
    jobs = [(by_ref[p.train], by_ref[p.test], hp, group_size) for p in pairs]
    results = _map(_sweep_job, jobs, workers if workers is not None else worker_count())
    rows = [SweepRow(p.train, p.test, p.tag, p.bitmask, mi.macro_f1, ma.macro_f1, mi.accuracy, ma.accuracy)
            for p, (mi, ma) in zip(pairs, results)]
    matrices = {}
    groups = defaultdict(set)
    for r in rows:
        groups[r.bitmask].update((r.train_ref, r.test_ref))
    for mask, refs in groups.items():
        refs = sorted(refs)
        pos = {ref: i for i, ref in enumerate(refs)}
        mi = np.full((len(refs), len(refs)), np.nan)
        ma = np.full((len(refs), len(refs)), np.nan)
        for r in rows:
            if r.bitmask == mask:
                mi[pos[r.train_ref], pos[r.test_ref]] = r.individual_f1
                ma[pos[r.train_ref], pos[r.test_ref]] = r.aggregated_f1
        matrices[mask] = (refs, mi, ma)
    return SweepResult(rows, matrices)


# ---------------------------------------------------------------------------
# report files


def _fmt(v: float) -> str:
    if isinstance(v, float) and math.isnan(v):
        return ""
    return f"{v:.6f}"


def metadata_lines(meta: dict) -> list[str]:
    lines = [f"# schema_version={REPORT_SCHEMA_VERSION}"]
    for k in sorted(meta):
        lines.append(f"# {k}={meta[k]}")
    return lines


def report_metadata(rep: EvaluationReport) -> dict:
    return {
        "condition": rep.condition, "mode": rep.mode, "repeats": rep.repeats,
        "seeds": " ".join(map(str, rep.seeds)), "hyperparams": _hp_str(rep.hyperparams),
        "group_size": rep.group_size, "fraction": rep.fraction,
    }


def _hp_str(hp: HyperParams) -> str:
    return ";".join(f"{k}={v}" for k, v in hp.as_dict().items())


def _open_with_meta(path, meta: dict):
    fh = open(path, "w", newline="")
    for line in metadata_lines(meta):
        fh.write(line + "\n")
    return fh, csv.writer(fh, lineterminator="\n")


def write_class_report(path, rep: EvaluationReport) -> None:
    fh, w = _open_with_meta(path, report_metadata(rep))
    with fh:
        w.writerow(["class", "precision", "recall", "f1-score", "support"])
        total = sum(m.support for m in rep.per_class)
        for m in rep.per_class:
            w.writerow([m.cls, _fmt(m.precision), _fmt(m.recall), _fmt(m.f1), _fmt(m.support)])
        w.writerow(["accuracy", "", "", _fmt(rep.accuracy.mean), _fmt(total)])
        w.writerow(["macro avg", *(_fmt(v) for v in rep.macro), _fmt(total)])
        w.writerow(["weighted avg", *(_fmt(v) for v in rep.weighted), _fmt(total)])


def write_confusion(path, rep: EvaluationReport) -> None:
    cm = rep.confusion
    fh, w = _open_with_meta(path, report_metadata(rep))
    with fh:
        w.writerow(["true\\predicted", *cm.classes])
        for c, row in zip(cm.classes, cm.counts):
            w.writerow([c, *(_fmt(float(v)) for v in row)])


def write_summary(path, reports: Sequence[EvaluationReport], meta: dict, timings: bool = False) -> None:
    """Condition summary mirroring the accuracy/F1 table; timings optional.

    Timings are wall-clock and vary between runs, so deterministic bundles
    keep them in a separate file.
    """
    fh, w = _open_with_meta(path, meta)
    with fh:
        head = ["mode", "condition", "accuracy_mean", "accuracy_std", "f1_mean", "f1_std", "repeats"]
        if timings:
            head = ["mode", "condition", "train_s", "test_s", "aggregate_s", "repeats"]
        w.writerow(head)
        for r in reports:
            if timings:
                w.writerow([r.mode, r.condition, f"{r.timings['train_s']:.4f}", f"{r.timings['test_s']:.4f}",
                            f"{r.timings['aggregate_s']:.4f}", r.repeats])
            else:
                w.writerow([r.mode, r.condition, _fmt(r.accuracy.mean), _fmt(r.accuracy.std),
                            _fmt(r.macro_f1.mean), _fmt(r.macro_f1.std), r.repeats])


def write_sweep(path, result: SweepResult, meta: dict) -> None:
    fh, w = _open_with_meta(path, meta)
    with fh:
        w.writerow(["train_ref", "test_ref", "condition_tag", "bitmask", "individual_f1", "aggregated_f1",
                    "accuracy", "aggregated_accuracy"])
        for r in result.rows:
            w.writerow([r.train_ref, r.test_ref, r.condition_tag, r.bitmask, _fmt(r.individual_f1),
                        _fmt(r.aggregated_f1), _fmt(r.accuracy), _fmt(r.aggregated_accuracy)])


def write_sweep_summary(path, result: SweepResult, meta: dict) -> None:
    fh, w = _open_with_meta(path, meta)
    with fh:
        w.writerow(["mode", "condition", "pairs", "accuracy_mean", "accuracy_std_over_pairs",
                    "f1_mean", "f1_std_over_pairs"])
        summ = result.summary()
        for mode in (INDIVIDUAL, AGGREGATED):
            for tag, d in summ.items():
                a, f = d[mode]
                w.writerow([mode, tag, d["pairs"], _fmt(a.mean), _fmt(a.std), _fmt(f.mean), _fmt(f.std)])


GNUPLOT_TEMPLATE = """\
# render with: gnuplot {script}
set terminal pngcairo size 900,800
set output '{png}'
set datafile separator ','
set title 'F1 by train (y) / test (x) session, bitmask group {group}'
set xtics rotate by 90
set cbrange [0:1]
set palette defined (0 'red', 0.5 'yellow', 1 'green')
plot '{matrix}' matrix rowheaders columnheaders with image notitle
"""


def write_heatmaps(out_dir, result: SweepResult, meta: dict) -> list[str]:
    """One matrix CSV plus gnuplot script per bitmask group; returns file names."""
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for gi, mask in enumerate(sorted(result.matrices, key=lambda m: (-len(result.matrices[m][0]), m))):
        refs, mi, ma = result.matrices[mask]
        for mode, mat in ((INDIVIDUAL, mi), (AGGREGATED, ma)):
            name = f"heatmap_g{gi:02d}_{mode.lower()}.csv"
            fh, w = _open_with_meta(os.path.join(out_dir, name), {**meta, "bitmask": mask, "mode": mode})
            with fh:
                w.writerow(["train\\test", *refs])
                for ref, row in zip(refs, mat):
                    w.writerow([ref, *(_fmt(float(v)) for v in row)])
            script = name[:-4] + ".gp"
            with open(os.path.join(out_dir, script), "w") as fh:
                fh.write(GNUPLOT_TEMPLATE.format(script=script, png=name[:-4] + ".png", group=gi,
                                                 matrix=name))
            written += [name, script]
    return written
