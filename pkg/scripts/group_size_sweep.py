"""Macro F1 against aggregation group size on a generated dataset.

Writes a synthetic capture set, extracts it once, then evaluates every
condition at each group size. Useful for seeing how much of the gain
needs the whole per-MAC history.
"""
import argparse
import dataclasses
import os

from iotdevid import pipeline
from iotdevid.config import load_config
from iotdevid.dataset import CASES
from iotdevid.evaluate import run_condition
from iotdevid.synth import write_synthetic_dataset


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/group_size")
    ap.add_argument("--devices", type=int, default=6)
    ap.add_argument("--packets", type=int, default=300)
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    ds = write_synthetic_dataset(os.path.join(args.out, "data"), args.devices, args.packets, args.seed)
    cfg = dataclasses.replace(load_config(ds.config), out=os.path.join(args.out, "work"), repeats=args.repeats)
    entries, rules, _, _, sessions = pipeline.prepare(cfg, log=lambda *_: None)
    datasets = pipeline.build_datasets(sessions, entries, rules)
    print("condition,group_size,individual_f1,aggregated_f1")
    for tag, (train_c, test_c) in CASES.items():
        for size in (1, 2, 4, 8, 16, 64, "whole"):
            ind, ag = run_condition(datasets[train_c], datasets[test_c], cfg.hyperparams, cfg.repeats,
                                    cfg.base_seed, size, cfg.fraction, tag)
            print(f"{tag},{size},{ind.macro_f1.mean:.4f},{ag.macro_f1.mean:.4f}")


if __name__ == "__main__":
    main()
