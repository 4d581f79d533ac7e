"""Four-condition run plus session sweep over a local CIC-IoT-22 copy.

    python3 scripts/reproduce_cic.py /data/cic-iot-22 --out runs/cic

The root needs ``label_map.csv`` (device MACs to class names) and either
captures laid out as ``<session_ref>.pcap`` or its own ``manifest.csv``.
If ``zigbee/manifest.csv`` exists the Zigbee split is evaluated as well.
"""
import argparse
import os
import sys

from iotdevid import cic, pipeline
from iotdevid.evaluate import AGGREGATED, INDIVIDUAL, run_condition


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("root", nargs="?", default=os.environ.get(cic.ENV_ROOT))
    ap.add_argument("--out", default="runs/cic")
    ap.add_argument("--repeats", type=int, default=10)
    ap.add_argument("--fraction", type=float, default=0.1)
    ap.add_argument("--no-sweep", action="store_true")
    args = ap.parse_args()
    if not args.root or not os.path.isdir(args.root):
        sys.exit(f"no dataset root given (argument or {cic.ENV_ROOT})")

    cfg = cic.run_config(args.root, args.out, args.repeats, args.fraction, not args.no_sweep)
    cfg.validate()
    res = pipeline.run(cfg)
    print(f"\n{'case':<6}{'individual F1':>16}{'aggregated F1':>16}")
    by = {(r.condition, r.mode): r for r in res.reports}
    for tag in cfg.conditions:
        print(f"{tag:<6}{str(by[tag, INDIVIDUAL].macro_f1):>16}{str(by[tag, AGGREGATED].macro_f1):>16}")
    if res.sweep is not None:
        for tag, s in res.sweep.summary().items():
            print(f"sweep {tag}: {s['pairs']} pairs, individual F1 {s[INDIVIDUAL][1]}, aggregated F1 {s[AGGREGATED][1]}")

    split = cic.zigbee_datasets(args.root)
    if split is not None:
        ind, ag = run_condition(*split, repeats=args.repeats, condition="Zigbee")
        print(f"zigbee: individual F1 {ind.macro_f1}, aggregated F1 {ag.macro_f1}, "
              f"exception list {sorted(ag.exceptions.macs)}")


if __name__ == "__main__":
    main()
