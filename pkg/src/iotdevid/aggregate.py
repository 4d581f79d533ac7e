"""MAC-based majority aggregation of per-packet predictions.

Step one finds, for every predicted label, the MAC that carries most of
that label's packets. A MAC that is dominant for two or more labels most
likely fronts several devices (a gateway re-encapsulating their traffic)
and goes on the exception list. Step two replaces each remaining MAC's
predictions with the majority label of its group.
"""
from __future__ import annotations

import csv
import os
from collections import Counter, defaultdict
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence, Union

WHOLE = "whole"
GroupSize = Union[int, str]


@dataclass(frozen=True)
class PredictionRecord:
    index: int
    mac: str
    predicted: str
    final: Optional[str] = None


@dataclass
class ExceptionList:
    macs: set = field(default_factory=set)
    evidence: dict = field(default_factory=dict)

    def __contains__(self, mac: str) -> bool:
        return mac in self.macs


def parse_group_size(value) -> GroupSize:
    if value is None:
        return WHOLE
    if isinstance(value, int):
        if value < 1:
            raise ValueError("group size must be positive")
        return value
    s = str(value).strip().lower()
    if s in (WHOLE, "all", "0", ""):
        return WHOLE
    n = int(s)
    if n < 1:
        raise ValueError("group size must be positive")
    return n


def dominant_macs(preds: Sequence[PredictionRecord]) -> dict[str, str]:
    """Label -> MAC with the most records predicted as that label.

    Count ties go to the lexicographically smallest MAC.
    """
    per_label: dict[str, Counter] = defaultdict(Counter)
    for r in preds:
        per_label[r.predicted][r.mac] += 1
    return {label: min(c.items(), key=lambda kv: (-kv[1], kv[0]))[0] for label, c in per_label.items()}


def build_exception_list(preds: Sequence[PredictionRecord]) -> ExceptionList:
    by_mac: dict[str, set] = defaultdict(set)
    for label, mac in dominant_macs(preds).items():
        by_mac[mac].add(label)
    ev = {mac: labels for mac, labels in by_mac.items() if len(labels) >= 2}
    return ExceptionList(set(ev), ev)


def _group_final(predicted: Sequence[str]) -> list[str]:
    counts = Counter(predicted).most_common()
    if len(counts) > 1 and counts[0][1] == counts[1][1]:
        return list(predicted)  # no strict majority: keep individual results
    return [counts[0][0]] * len(predicted)


def aggregate(preds: Sequence[PredictionRecord], exceptions: Optional[ExceptionList] = None,
              group_size: GroupSize = WHOLE) -> list[PredictionRecord]:
    """Return records with ``final`` set; order and length match the input."""
    if exceptions is None:
        exceptions = build_exception_list(preds)
    group_size = parse_group_size(group_size)
    by_mac: dict[str, list[int]] = defaultdict(list)
    for pos, r in enumerate(preds):
        by_mac[r.mac].append(pos)
    final: list[Optional[str]] = [None] * len(preds)
    for mac, positions in by_mac.items():
        if mac in exceptions:
            for p in positions:
                final[p] = preds[p].predicted
            continue
        step = len(positions) if group_size == WHOLE else group_size
        for start in range(0, len(positions), step):
            chunk = positions[start:start + step]
            for p, lab in zip(chunk, _group_final([preds[p].predicted for p in chunk])):
                final[p] = lab
    return [replace(r, final=f) for r, f in zip(preds, final)]


def records_from(macs: Iterable[str], predicted: Iterable[str]) -> list[PredictionRecord]:
    return [PredictionRecord(i, m, p) for i, (m, p) in enumerate(zip(macs, predicted))]


def write_predictions(path: str | os.PathLike, records: Sequence[PredictionRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "mac", "predicted", "final"])
        for r in records:
            w.writerow([r.index, r.mac, r.predicted, r.final or ""])


def read_predictions(path: str | os.PathLike) -> list[PredictionRecord]:
    with open(path, newline="") as fh:
        return [PredictionRecord(int(row["index"]), row["mac"], row["predicted"], row.get("final") or None)
                for row in csv.DictReader(fh)]


def write_exceptions(path: str | os.PathLike, exc: ExceptionList) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["mac", "labels"])
        for mac in sorted(exc.macs):
            w.writerow([mac, "|".join(sorted(exc.evidence.get(mac, ())))])


def read_exceptions(path: str | os.PathLike) -> ExceptionList:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    ev = {row["mac"]: set(filter(None, row["labels"].split("|"))) for row in rows}
    return ExceptionList(set(ev), ev)
