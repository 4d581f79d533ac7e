"""End-to-end stages shared by the CLI and the scripts."""
from __future__ import annotations

import contextlib
import csv
import hashlib
import json
import os
import platform
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import __version__
from . import aggregate as agg
from . import evaluate as ev
from .config import RunConfig
from .dataset import (CASES, Condition, ConditionDataset, DropClass, DropReport, LabelMap, ManifestEntry,
                      SessionRecord, apply_adjustments, assign_bitmasks, merge_condition_datasets,
                      read_adjustments, read_manifest, sample_condition)
from .features import FingerprintTable, FingerprintWriter, extract_fingerprint, read_fingerprints
from .pcap import decode_packet, iter_records, open_capture

NO_MAC = "(no source mac)"


class DataError(Exception):
    """Input data is missing, malformed or inconsistent."""


@contextlib.contextmanager
def reading(path):
    """Turn parse failures while reading ``path`` into DataError."""
    try:
        yield
    except DataError:
        raise
    except (OSError, ValueError, KeyError, TypeError, csv.Error) as e:
        raise DataError(f"{path}: {e}") from e


def sha256_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# ---------------------------------------------------------------------------
# extraction


@dataclass
class ExtractResult:
    session_ref: str
    csv_path: str
    packets: int = 0
    report: DropReport = field(default_factory=DropReport)
    error: Optional[str] = None


def extract_capture(pcap_path: str, session_ref: str, label_map: Optional[LabelMap], out_csv: str) -> ExtractResult:
    """Stream one capture into a fingerprint CSV, dropping unlabelled MACs.

    With no label map every packet with a source MAC is kept unlabelled.
    The CSV is written even when the capture fails part way.
    """
    res = ExtractResult(session_ref, out_csv)
    rep = res.report
    os.makedirs(os.path.dirname(os.path.abspath(out_csv)), exist_ok=True)
    with open(out_csv, "w", newline="") as fh:
        w = FingerprintWriter(fh)
        try:
            cap = open_capture(pcap_path)
            for rec in iter_records(cap):
                res.packets += 1
                pkt = decode_packet(rec.data, cap.link_type, rec.timestamp, rec.orig_len)
                if pkt.src_mac is None:
                    rep.unknown[NO_MAC] += 1
                    continue
                fp = extract_fingerprint(pkt, session_ref)
                if label_map is None:
                    w.write(fp)
                    rep.kept += 1
                    continue
                label = label_map.entries.get(fp.src_mac)
                if label is not None:
                    w.write(type(fp)(fp.features, fp.src_mac, session_ref, label))
                    rep.kept += 1
                elif fp.src_mac in label_map.ignore_list:
                    rep.ignored[fp.src_mac] += 1
                else:
                    rep.unknown[fp.src_mac] += 1
        except (OSError, ValueError) as e:
            res.error = f"{type(e).__name__}: {e}"
    return res


def capture_table(pcap_path: str, session_ref: str, label: str) -> FingerprintTable:
    """Fingerprints of every MAC-bearing packet in a single-device capture."""
    fps = []
    with reading(pcap_path):
        cap = open_capture(pcap_path)
        for rec in iter_records(cap):
            pkt = decode_packet(rec.data, cap.link_type, rec.timestamp, rec.orig_len)
            if pkt.src_mac is not None:
                fp = extract_fingerprint(pkt, session_ref)
                fps.append(type(fp)(fp.features, fp.src_mac, session_ref, label))
    return FingerprintTable.from_fingerprints(fps)


def _extract_job(args):
    return extract_capture(*args)


def capture_path(entry: ManifestEntry, manifest_path: str, captures_root: Optional[str]) -> str:
    if captures_root is None:
        return entry.path
    rel = os.path.relpath(entry.path, os.path.dirname(os.path.abspath(manifest_path)))
    return os.path.join(captures_root, rel)


def extract_all(jobs: Sequence[tuple], label_map: Optional[LabelMap], out_dir: str,
                workers: Optional[int] = None) -> list[ExtractResult]:
    """``jobs`` holds ``(pcap_path, session_ref)``; one CSV per job in ``out_dir``."""
    args = [(p, ref, label_map, os.path.join(out_dir, f"{ref}.csv")) for p, ref in jobs]
    return ev._map(_extract_job, args, workers if workers is not None else ev.worker_count())


def write_drop_report(path: str, results: Sequence[ExtractResult]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["session_ref", "packets", "kept", "ignored", "unknown", "error"])
        for r in results:
            w.writerow([r.session_ref, r.packets, r.report.kept, sum(r.report.ignored.values()),
                        sum(r.report.unknown.values()), r.error or ""])


def write_drop_details(path: str, results: Sequence[ExtractResult]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["session_ref", "mac", "reason", "count"])
        for r in results:
            for reason, counter in (("ignored", r.report.ignored), ("unknown", r.report.unknown)):
                for mac in sorted(counter):
                    w.writerow([r.session_ref, mac, reason, counter[mac]])


# ---------------------------------------------------------------------------
# datasets


def load_sessions(entries: Sequence[ManifestEntry], fp_dir: str) -> list[SessionRecord]:
    out = []
    for e in entries:
        path = os.path.join(fp_dir, f"{e.session_ref}.csv")
        with reading(path):
            table = read_fingerprints(path)
            out.append(SessionRecord(e.session_ref, e.state, e.date, table))
    return out


def build_datasets(sessions: Sequence[SessionRecord], entries: Sequence[ManifestEntry], rules: Sequence = (),
                   fraction: float = 1.0, seed: int = 0) -> dict[Condition, ConditionDataset]:
    """Merge sessions per condition, apply adjustment rules, then subsample."""
    assignment = {e.session_ref: e.condition for e in entries}
    merged = merge_condition_datasets(sessions, assignment)
    adjusted = apply_adjustments(merged, rules)
    if fraction == 1:
        return adjusted
    return {c: sample_condition(d, fraction, seed) for c, d in adjusted.items()}


def write_datasets(out_dir: str, datasets: dict) -> None:
    from .features import write_fingerprints

    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "provenance.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["condition", "rows", "sample_fraction", "sessions", "classes"])
        for c in Condition:
            d = datasets[c]
            write_fingerprints(os.path.join(out_dir, f"{c.value}.csv"), d.fingerprints)
            w.writerow([c.value, len(d.fingerprints), d.sample_fraction, "|".join(d.provenance),
                        "|".join(d.class_order)])


def read_datasets(out_dir: str) -> dict[Condition, ConditionDataset]:
    prov = os.path.join(out_dir, "provenance.csv")
    with reading(prov):
        with open(prov, newline="") as fh:
            rows = {r["condition"]: r for r in csv.DictReader(fh)}
        out = {}
        for c in Condition:
            r = rows[c.value]
            table = read_fingerprints(os.path.join(out_dir, f"{c.value}.csv"))
            out[c] = ConditionDataset(c, table, list(filter(None, r["sessions"].split("|"))),
                                      float(r["sample_fraction"]), list(filter(None, r["classes"].split("|"))))
    return out


def sweep_sessions(sessions: Sequence[SessionRecord], rules: Sequence = ()) -> list[SessionRecord]:
    """Sessions with drop rules applied and presence bitmasks assigned."""
    dropped = {r.cls for r in rules if isinstance(r, DropClass)}
    out = []
    for s in sessions:
        t = s.fingerprints
        if dropped:
            t = t.take([i for i, lab in enumerate(t.labels) if lab not in dropped])
        counts = {c: n for c, n in s.class_counts.items() if c not in dropped}
        out.append(SessionRecord(s.session_ref, s.state, s.date, t, counts))
    classes = sorted({c for s in out for c in s.present()})
    assign_bitmasks(out, classes)
    return out


# ---------------------------------------------------------------------------
# full run


@dataclass
class RunResult:
    report_dir: str
    reports: list
    sweep: Optional[ev.SweepResult]
    extracted: list
    files: list


def _versions() -> dict:
    return {"iotdevid": __version__, "python": platform.python_version(), "numpy": np.__version__}


def run_manifest(cfg: RunConfig, inputs: dict, seeds: list, files: Sequence[str]) -> dict:
    return {
        "schema_version": 1,
        "config": cfg.as_dict(),
        "inputs": {k: inputs[k] for k in sorted(inputs)},
        "seeds": seeds,
        "versions": _versions(),
        "outputs": sorted(files),
    }


def _hash_inputs(cfg: RunConfig, jobs: Sequence[tuple], config_path: Optional[str]) -> dict:
    h = {}
    for p in (config_path, cfg.label_map, cfg.manifest, cfg.adjustments):
        if p and os.path.isfile(p):
            h[cfg.relpath(os.path.abspath(p))] = sha256_file(p)
    for p, _ in jobs:
        if os.path.isfile(p):
            h[cfg.relpath(os.path.abspath(p))] = sha256_file(p)
    return h


def prepare(cfg: RunConfig, workers: Optional[int] = None, log=print):
    """Extract every manifest capture and load the labelled sessions."""
    with reading(cfg.manifest):
        entries = read_manifest(cfg.manifest)
    with reading(cfg.label_map):
        label_map = LabelMap.read(cfg.label_map)
    rules = []
    if cfg.adjustments:
        with reading(cfg.adjustments):
            rules = read_adjustments(cfg.adjustments)
    jobs = [(capture_path(e, cfg.manifest, cfg.captures_root), e.session_ref) for e in entries]
    fp_dir = os.path.join(cfg.out, "fingerprints")
    extracted = extract_all(jobs, label_map, fp_dir, workers)
    failed = [r for r in extracted if r.error]
    for r in failed:
        log(f"extract {r.session_ref}: {r.error}")
    if failed:
        raise DataError(f"{len(failed)} capture(s) failed to extract")
    sessions = load_sessions(entries, fp_dir)
    return entries, rules, jobs, extracted, sessions


def run(cfg: RunConfig, config_path: Optional[str] = None, workers: Optional[int] = None,
        do_conditions: bool = True, do_sweep: Optional[bool] = None, log=print) -> RunResult:
    """Extract, build, evaluate the selected conditions and optionally sweep.

    Everything under ``<out>/report`` is a pure function of the config and
    its inputs; wall-clock timings go to ``<out>/timings.csv``.
    """
    do_sweep = cfg.sweep if do_sweep is None else do_sweep
    entries, rules, jobs, extracted, sessions = prepare(cfg, workers, log)
    report_dir = os.path.join(cfg.out, "report")
    os.makedirs(report_dir, exist_ok=True)
    files = []

    def out(name):
        files.append(name)
        return os.path.join(report_dir, name)

    write_drop_report(out("drop_report.csv"), extracted)
    write_drop_details(out("drop_details.csv"), extracted)
    reports = []
    timing_rows = []
    seeds = ev.repeat_seeds(cfg.base_seed, cfg.repeats)
    if do_conditions:
        datasets = build_datasets(sessions, entries, rules)
        meta = {"fraction": cfg.fraction, "repeats": cfg.repeats, "base_seed": cfg.base_seed,
                "group_size": str(cfg.group_size), "hyperparams": ev._hp_str(cfg.hyperparams)}
        for tag in cfg.conditions:
            train_c, test_c = CASES[tag]
            t0 = time.perf_counter()
            ind, ag = ev.run_condition(datasets[train_c], datasets[test_c], cfg.hyperparams, cfg.repeats,
                                       cfg.base_seed, cfg.group_size, cfg.fraction, tag, workers)
            timing_rows.append((tag, ind, ag, time.perf_counter() - t0))
            for rep in (ind, ag):
                stem = f"{tag}_{rep.mode.lower()}"
                ev.write_class_report(out(f"{stem}_report.csv"), rep)
                ev.write_confusion(out(f"{stem}_confusion.csv"), rep)
            agg.write_exceptions(out(f"{tag}_exceptions.csv"), ag.exceptions)
            reports += [ind, ag]
            log(f"{tag}: individual F1 {ind.macro_f1}  aggregated F1 {ag.macro_f1}")
        ordered = [r for mode in (ev.INDIVIDUAL, ev.AGGREGATED) for r in reports if r.mode == mode]
        ev.write_summary(out("summary.csv"), ordered, meta)
    sweep = None
    if do_sweep:
        # whole sessions, before any class adjustments
        ss = sweep_sessions(sessions)
        t0 = time.perf_counter()
        sweep = ev.session_sweep(ss, cfg.hyperparams, cfg.group_size, workers)
        timing_rows.append(("sweep", None, None, time.perf_counter() - t0))
        meta = {"group_size": str(cfg.group_size), "hyperparams": ev._hp_str(cfg.hyperparams),
                "pairs": len(sweep.rows)}
        ev.write_sweep(out("sweep.csv"), sweep, meta)
        ev.write_sweep_summary(out("sweep_summary.csv"), sweep, meta)
        for name in ev.write_heatmaps(os.path.join(report_dir, "heatmaps"), sweep, meta):
            files.append(f"heatmaps/{name}")
        log(f"sweep: {len(sweep.rows)} compatible pairs")
    inputs = _hash_inputs(cfg, jobs, config_path)
    manifest = run_manifest(cfg, inputs, seeds, files + ["run_manifest.json"])
    with open(os.path.join(report_dir, "run_manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    files.append("run_manifest.json")
    write_timings(os.path.join(cfg.out, "timings.csv"), timing_rows)
    return RunResult(report_dir, reports, sweep, extracted, files)


def write_timings(path: str, rows: Sequence[tuple]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["stage", "wall_s", "train_s_per_repeat", "test_s_per_repeat", "aggregate_s_per_repeat"])
        for tag, ind, ag, wall in rows:
            if ind is None:
                w.writerow([tag, f"{wall:.4f}", "", "", ""])
            else:
                w.writerow([tag, f"{wall:.4f}", f"{ind.timings['train_s']:.4f}", f"{ind.timings['test_s']:.4f}",
                            f"{ag.timings['aggregate_s']:.4f}"])
