"""Packaged CIC-IoT-22 metadata: session registry, device classes, adjustments.

The registry holds per-device packet counts (thousands) for every active
and idle session, with each session's condition assignment. It is enough
to compute presence bitmasks and session pairs without the captures.
"""
from __future__ import annotations

import csv
import os
from importlib import resources

from .dataset import Condition, ConditionDataset, SessionRecord, read_adjustments, read_registry, registry_assignment
from .config import RunConfig
from .features import FingerprintTable
from .pipeline import capture_table

ENV_ROOT = "IOTDEVID_CIC_ROOT"


def data_path(name: str) -> str:
    return str(resources.files("iotdevid").joinpath("data", name))


REGISTRY = data_path("cic_iot22_registry.csv")
DEVICE_CLASSES = data_path("cic_iot22_device_classes.csv")
ADJUSTMENTS = data_path("cic_iot22_adjustments.csv")
MANIFEST = data_path("cic_iot22_manifest.csv")


def device_classes() -> dict[str, str]:
    with open(DEVICE_CLASSES, newline="") as fh:
        return {row["device"]: row["class"] for row in csv.DictReader(fh)}


def sessions() -> list[SessionRecord]:
    return read_registry(REGISTRY, device_classes())


def assignment() -> dict:
    return registry_assignment(REGISTRY)


def adjustments() -> list:
    return read_adjustments(ADJUSTMENTS)


def dataset_root() -> str | None:
    """Directory holding the CIC-IoT-22 captures, if configured."""
    root = os.environ.get(ENV_ROOT)
    return root if root and os.path.isdir(root) else None


def run_config(root: str, out: str, repeats: int = 10, fraction: float = 0.1, sweep: bool = True):
    """Config for the full benchmark run over a local copy of the captures.

    ``root`` must hold ``label_map.csv``; a ``manifest.csv`` there overrides the
    packaged one when the capture layout differs from ``<ref>.pcap``.
    """
    local = os.path.join(root, "manifest.csv")
    return RunConfig(captures_root=root, label_map=os.path.join(root, "label_map.csv"),
                     manifest=local if os.path.isfile(local) else MANIFEST, adjustments=ADJUSTMENTS,
                     out=out, fraction=fraction, repeats=repeats, sweep=sweep, base_dir=root)


ZIGBEE_SPLITS = {"train": Condition.ACTIVE_TRAIN, "test": Condition.ACTIVE_TEST}


def zigbee_datasets(root: str):
    """Train/test datasets from ``<root>/zigbee/manifest.csv`` (columns path, label, split).

    Every capture holds a single device, so its packets take the row's label
    whatever MAC they carry. Returns None when the manifest is missing.
    """
    man = os.path.join(root, "zigbee", "manifest.csv")
    if not os.path.isfile(man):
        return None
    tables = {c: [] for c in ZIGBEE_SPLITS.values()}
    with open(man, newline="") as fh:
        for i, row in enumerate(csv.DictReader(fh)):
            path = os.path.join(os.path.dirname(man), row["path"])
            tables[ZIGBEE_SPLITS[row["split"].strip().lower()]].append(capture_table(path, f"Z{i:03d}", row["label"]))
    out = {}
    for cond, parts in tables.items():
        t = FingerprintTable.concat(parts)
        out[cond] = ConditionDataset(cond, t, sorted(set(t.sessions)), 1.0, sorted(t.class_counts()))
    return out[Condition.ACTIVE_TRAIN], out[Condition.ACTIVE_TEST]
