"""Labelling, session registry, session-ID bitmasks and condition datasets."""
from __future__ import annotations

import csv
import datetime as dt
import enum
import os
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .features import Fingerprint, FingerprintTable


class UnknownClass(KeyError):
    pass


class EmptyCondition(ValueError):
    pass


def normalize_mac(mac: str) -> str:
    mac = mac.strip().lower().replace("-", ":")
    parts = mac.split(":")
    if len(parts) != 6 or not all(len(p) == 2 for p in parts):
        raise ValueError(f"not a MAC address: {mac!r}")
    int("".join(parts), 16)
    return mac


@dataclass
class LabelMap:
    entries: dict = field(default_factory=dict)
    ignore_list: set = field(default_factory=set)

    def __post_init__(self):
        self.entries = {normalize_mac(m): name for m, name in self.entries.items()}
        self.ignore_list = {normalize_mac(m) for m in self.ignore_list}
        both = self.ignore_list & self.entries.keys()
        if both:
            raise ValueError(f"MACs both labelled and ignored: {sorted(both)}")
        if any(not name for name in self.entries.values()):
            raise ValueError("empty device-class name")

    @property
    def classes(self) -> list[str]:
        return sorted(set(self.entries.values()))

    @classmethod
    def read(cls, path: str | os.PathLike) -> "LabelMap":
        """``mac,label`` CSV; a label of ``ignore`` puts the MAC on the ignore list."""
        entries, ignore = {}, set()
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                label = row["label"].strip()
                if label.lower() == "ignore":
                    ignore.add(row["mac"])
                else:
                    entries[row["mac"]] = label
        return cls(entries, ignore)

    def write(self, path: str | os.PathLike) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["mac", "label"])
            for mac in sorted(self.entries):
                w.writerow([mac, self.entries[mac]])
            for mac in sorted(self.ignore_list):
                w.writerow([mac, "ignore"])


@dataclass
class DropReport:
    kept: int = 0
    ignored: Counter = field(default_factory=Counter)
    unknown: Counter = field(default_factory=Counter)

    @property
    def dropped(self) -> int:
        return sum(self.ignored.values()) + sum(self.unknown.values())

    def merge(self, other: "DropReport") -> None:
        self.kept += other.kept
        self.ignored.update(other.ignored)
        self.unknown.update(other.unknown)


def label_fingerprints(fps: Iterable[Fingerprint], label_map: LabelMap) -> tuple[list[Fingerprint], DropReport]:
    if not label_map.entries:
        raise ValueError("label map is empty")
    report = DropReport()
    out = []
    for fp in fps:
        label = label_map.entries.get(fp.src_mac)
        if label is not None:
            out.append(Fingerprint(fp.features, fp.src_mac, fp.session_ref, label))
            report.kept += 1
        elif fp.src_mac in label_map.ignore_list:
            report.ignored[fp.src_mac] += 1
        else:
            report.unknown[fp.src_mac] += 1
    return out, report


# ---------------------------------------------------------------------------
# sessions


class State(enum.Enum):
    ACTIVE = "Active"
    IDLE = "Idle"

    @classmethod
    def parse(cls, s: str) -> "State":
        s = s.strip().lower()
        if s in ("a", "active"):
            return cls.ACTIVE
        if s in ("i", "idle"):
            return cls.IDLE
        raise ValueError(f"unknown session state {s!r}")

    @property
    def letter(self) -> str:
        return self.value[0]


class Condition(enum.Enum):
    ACTIVE_TRAIN = "ActiveTrain"
    ACTIVE_TEST = "ActiveTest"
    IDLE_TRAIN = "IdleTrain"
    IDLE_TEST = "IdleTest"


# train condition, test condition for each evaluation case
CASES = {
    "AA": (Condition.ACTIVE_TRAIN, Condition.ACTIVE_TEST),
    "AI": (Condition.ACTIVE_TRAIN, Condition.IDLE_TEST),
    "IA": (Condition.IDLE_TRAIN, Condition.ACTIVE_TEST),
    "II": (Condition.IDLE_TRAIN, Condition.IDLE_TEST),
}


@dataclass
class SessionRecord:
    session_ref: str
    state: State
    date: Optional[dt.date] = None
    fingerprints: FingerprintTable = field(default_factory=FingerprintTable.empty)
    class_counts: Optional[Mapping[str, int]] = None
    device_bitmask: Optional[str] = None

    def __post_init__(self):
        if not self.session_ref.upper().startswith(self.state.letter):
            raise ValueError(f"session {self.session_ref!r} does not match state {self.state.value}")
        if self.class_counts is None:
            self.class_counts = dict(self.fingerprints.class_counts())

    def present(self) -> set[str]:
        return {c for c, n in self.class_counts.items() if n > 0}


def session_id(s: SessionRecord, class_order: Sequence[str]) -> str:
    """Presence bitmask as a string of ``0``/``1``, one digit per class."""
    present = s.present()
    return "".join("1" if c in present else "0" for c in class_order)


def assign_bitmasks(sessions: Sequence[SessionRecord], class_order: Sequence[str]) -> None:
    for s in sessions:
        s.device_bitmask = session_id(s, class_order)


@dataclass(frozen=True)
class SessionPair:
    train: str
    test: str
    tag: str
    bitmask: str


def compatible_pairs(sessions: Sequence[SessionRecord]) -> list[SessionPair]:
    """All ordered (train, test) pairs of distinct sessions with equal bitmasks."""
    pairs = []
    for s in sessions:
        if s.device_bitmask is None:
            raise ValueError(f"session {s.session_ref} has no bitmask")
    for s in sessions:
        for t in sessions:
            if s is t or s.session_ref == t.session_ref:
                continue
            if s.device_bitmask == t.device_bitmask:
                pairs.append(SessionPair(s.session_ref, t.session_ref,
                                         s.state.letter + t.state.letter, s.device_bitmask))
    return pairs


# ---------------------------------------------------------------------------
# condition datasets


@dataclass
class ConditionDataset:
    name: Condition
    fingerprints: FingerprintTable
    provenance: list
    sample_fraction: float = 1.0
    class_order: list = field(default_factory=list)

    def class_counts(self) -> Counter:
        return self.fingerprints.class_counts()


def _rng(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *keys]))


def sample_per_class(table: FingerprintTable, fraction: float, rng: np.random.Generator) -> FingerprintTable:
    """Uniform sampling without replacement inside each class.

    Each non-empty class keeps ``max(1, floor(n * fraction))`` rows; the kept
    rows stay in their original order.
    """
    if not 0 < fraction <= 1:
        raise ValueError("fraction must be in (0, 1]")
    if fraction == 1:
        return table
    by_class = defaultdict(list)
    for i, lab in enumerate(table.labels):
        by_class[lab].append(i)
    keep = []
    for lab in sorted(by_class, key=lambda x: (x is None, x or "")):
        idx = np.asarray(by_class[lab])
        k = max(1, int(np.floor(len(idx) * fraction + 1e-9)))
        keep.append(rng.choice(idx, size=k, replace=False))
    return table.take(np.sort(np.concatenate(keep)))


def sample_condition(ds: ConditionDataset, fraction: float, seed: int) -> ConditionDataset:
    idx = list(Condition).index(ds.name)
    table = sample_per_class(ds.fingerprints, fraction, _rng(seed, idx))
    return ConditionDataset(ds.name, table, list(ds.provenance), ds.sample_fraction * fraction,
                            list(ds.class_order))


def merge_condition_datasets(sessions: Sequence[SessionRecord], assignment: Mapping[str, Condition],
                             class_order: Optional[Sequence[str]] = None) -> dict[Condition, ConditionDataset]:
    if class_order is None:
        class_order = sorted({c for s in sessions for c in s.present()})
    grouped = defaultdict(list)
    for s in sessions:
        if s.session_ref not in assignment:
            raise KeyError(f"session {s.session_ref} has no condition assignment")
        cond = assignment[s.session_ref]
        if cond is not None:
            grouped[cond].append(s)
    out = {}
    for cond in Condition:
        members = grouped.get(cond, [])
        if not members:
            raise EmptyCondition(f"no sessions assigned to {cond.value}")
        out[cond] = ConditionDataset(
            cond,
            FingerprintTable.concat([s.fingerprints for s in members]),
            [s.session_ref for s in members],
            1.0,
            list(class_order),
        )
    return out


def build_condition_datasets(sessions: Sequence[SessionRecord], assignment: Mapping[str, Condition],
                             fraction: float = 1.0, seed: int = 0,
                             class_order: Optional[Sequence[str]] = None) -> dict[Condition, ConditionDataset]:
    merged = merge_condition_datasets(sessions, assignment, class_order)
    return {c: sample_condition(ds, fraction, seed) for c, ds in merged.items()}


@dataclass(frozen=True)
class CopyClass:
    cls: str
    from_condition: Condition
    to_condition: Condition


@dataclass(frozen=True)
class DropClass:
    cls: str


def apply_adjustments(datasets: Mapping[Condition, ConditionDataset], rules: Sequence) -> dict[Condition, ConditionDataset]:
    out = {c: ConditionDataset(d.name, d.fingerprints, list(d.provenance), d.sample_fraction,
                               list(d.class_order)) for c, d in datasets.items()}
    for rule in rules:
        known = set().union(*(d.class_order for d in out.values()))
        known |= set().union(*(d.class_counts().keys() for d in out.values()))
        if rule.cls not in known:
            raise UnknownClass(rule.cls)
        if isinstance(rule, CopyClass):
            src = out[rule.from_condition]
            dst = out[rule.to_condition]
            idx = [i for i, lab in enumerate(src.fingerprints.labels) if lab == rule.cls]
            copied = src.fingerprints.take(idx)
            dst.fingerprints = FingerprintTable.concat([dst.fingerprints, copied])
            for ref in dict.fromkeys(copied.sessions):
                if ref not in dst.provenance:
                    dst.provenance.append(ref)
            if rule.cls not in dst.class_order:
                dst.class_order = sorted(dst.class_order + [rule.cls])
        elif isinstance(rule, DropClass):
            for d in out.values():
                idx = [i for i, lab in enumerate(d.fingerprints.labels) if lab != rule.cls]
                if len(idx) != len(d.fingerprints):
                    d.fingerprints = d.fingerprints.take(idx)
                d.class_order = [c for c in d.class_order if c != rule.cls]
        else:
            raise TypeError(f"unknown adjustment {rule!r}")
    return out


# ---------------------------------------------------------------------------
# file formats


@dataclass(frozen=True)
class ManifestEntry:
    session_ref: str
    state: State
    date: Optional[dt.date]
    condition: Optional[Condition]
    path: str


def _parse_date(s: str) -> Optional[dt.date]:
    s = s.strip()
    if not s:
        return None
    for fmt in ("%Y-%m-%d", "%Y%m%d", "%y%m%d"):
        try:
            return dt.datetime.strptime(s, fmt).date()
        except ValueError:
            pass
    raise ValueError(f"bad date {s!r}")


def _parse_condition(s: str) -> Optional[Condition]:
    s = s.strip()
    if not s or s.lower() in ("none", "-"):
        return None
    for c in Condition:
        if c.value.lower() == s.lower():
            return c
    raise ValueError(f"unknown condition {s!r}")


def read_manifest(path: str | os.PathLike) -> list[ManifestEntry]:
    """``session_ref,state,date,condition,path`` CSV.

    Relative paths are resolved against the manifest's directory.
    """
    base = os.path.dirname(os.path.abspath(path))
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            p = (row.get("path") or "").strip()
            if p and not os.path.isabs(p):
                p = os.path.join(base, p)
            out.append(ManifestEntry(row["session_ref"].strip(), State.parse(row["state"]),
                                     _parse_date(row.get("date", "")),
                                     _parse_condition(row.get("condition", "")), p))
    return out


def write_manifest(path: str | os.PathLike, entries: Sequence[ManifestEntry]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["session_ref", "state", "date", "condition", "path"])
        for e in entries:
            w.writerow([e.session_ref, e.state.value, e.date.isoformat() if e.date else "",
                        e.condition.value if e.condition else "", e.path])


def read_adjustments(path: str | os.PathLike) -> list:
    """``kind,class,from,to`` CSV with kinds ``copy`` and ``drop``."""
    rules = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            kind = row["kind"].strip().lower()
            if kind in ("copy", "copyclass"):
                rules.append(CopyClass(row["class"].strip(), _parse_condition(row["from"]),
                                       _parse_condition(row["to"])))
            elif kind in ("drop", "dropclass"):
                rules.append(DropClass(row["class"].strip()))
            else:
                raise ValueError(f"unknown adjustment kind {kind!r}")
    return rules


def read_registry(path: str | os.PathLike, device_classes: Optional[Mapping[str, str]] = None) -> list[SessionRecord]:
    """Session registry of per-device packet counts (no fingerprints).

    Columns: ``session_ref,state,date,condition`` followed by one column per
    device. ``device_classes`` maps device columns onto class names (devices
    of the same brand and model share a class).
    """
    device_classes = device_classes or {}
    out = []
    with open(path, newline="") as fh:
        r = csv.DictReader(fh)
        devices = r.fieldnames[4:]
        for row in r:
            counts = Counter()
            for d in devices:
                counts[device_classes.get(d, d)] += float(row[d])
            out.append(SessionRecord(row["session_ref"], State.parse(row["state"]),
                                     _parse_date(row["date"]), class_counts=dict(counts)))
    return out


def registry_assignment(path: str | os.PathLike) -> dict[str, Optional[Condition]]:
    with open(path, newline="") as fh:
        return {row["session_ref"]: _parse_condition(row["condition"]) for row in csv.DictReader(fh)}
