import json
import os

import pytest
from scapy.layers.dns import DNS, DNSQR
from scapy.layers.inet import IP, TCP, UDP
from scapy.layers.l2 import Ether

from iotdevid import cli, pipeline
from iotdevid.config import ConfigError, RunConfig, load_config
from iotdevid.features import CSV_HEADER, read_fingerprints
from iotdevid.synth import write_synthetic_dataset
from pcapbytes import write

HERE = os.path.dirname(__file__)


@pytest.fixture(scope="module")
def synth(tmp_path_factory):
    root = tmp_path_factory.mktemp("synth")
    return write_synthetic_dataset(str(root), n_devices=4, packets_per_device=60, seed=1, repeats=2)


def label_map(tmp_path, rows):
    p = tmp_path / "lm.csv"
    p.write_text("mac,label\n" + "".join(f"{m},{l}\n" for m, l in rows))
    return str(p)


def test_extract_golden(tmp_path):
    a = bytes(Ether(src="02:00:00:00:00:0a", dst="02:00:00:00:00:01") / IP(ttl=64) /
              UDP(sport=40000, dport=53) / DNS(id=0, rd=1, qd=DNSQR(qname="a.b")))
    b = bytes(Ether(src="02:00:00:00:00:0b", dst="02:00:00:00:00:01") / IP(flags="DF", ttl=128) /
              TCP(sport=50000, dport=443, flags="A", window=1024)) + b"\x00" * 6
    cap = write(tmp_path / "S1.pcap", [(0, 0, a), (0, 1, b)])
    lm = label_map(tmp_path, [("02:00:00:00:00:0a", "Cam"), ("02:00:00:00:00:0b", "Plug")])
    out = tmp_path / "fp"
    assert cli.main(["extract", str(cap), "--label-map", lm, "--out", str(out)]) == 0
    with open(os.path.join(HERE, "golden", "two_packets.csv")) as fh:
        assert (out / "S1.csv").read_text() == fh.read()
    assert (out / "drop_report.csv").read_text().splitlines()[1] == "S1,2,2,0,0,"


def test_extract_empty_and_ignored(tmp_path):
    empty = write(tmp_path / "E.pcap", [])
    frame = bytes(Ether(src="02:00:00:00:00:fe") / IP() / UDP())
    hub = write(tmp_path / "H.pcap", [(0, 0, frame)] * 3)
    lm = tmp_path / "lm.csv"
    lm.write_text("mac,label\n02:00:00:00:00:01,Cam\n02:00:00:00:00:fe,ignore\n")
    out = tmp_path / "fp"
    assert cli.main(["extract", str(empty), str(hub), "--label-map", str(lm), "--out", str(out)]) == 0
    header = ",".join(CSV_HEADER) + "\n"
    assert (out / "E.csv").read_text() == header
    assert (out / "H.csv").read_text() == header
    rows = (out / "drop_report.csv").read_text().splitlines()
    assert rows[2] == "H,3,0,3,0,"


def test_extract_bad_file_continues(tmp_path):
    bad = tmp_path / "B.pcap"
    bad.write_bytes(b"\x0a\x0b\x0c\x0d" + b"\x00" * 20)
    good = write(tmp_path / "G.pcap", [(0, 0, bytes(Ether(src="02:00:00:00:00:01") / IP()))])
    out = tmp_path / "fp"
    assert cli.main(["extract", str(bad), str(good), "--out", str(out)]) == cli.EXIT_DATA
    assert len(read_fingerprints(out / "G.csv")) == 1
    assert "NotPcap" in (out / "drop_report.csv").read_text()


def test_build_pass_through_and_deterministic(synth, tmp_path):
    cfg = synth.config
    fp = tmp_path / "fp"
    assert cli.main(["extract", "--config", cfg, "--out", str(fp)]) == 0
    for run in ("a", "b"):
        assert cli.main(["build", "--config", cfg, "--fingerprints", str(fp), "--fraction", "0.5",
                         "--seed", "4", "--out", str(tmp_path / run)]) == 0
    for name in sorted(os.listdir(tmp_path / "a")):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert cli.main(["build", "--config", cfg, "--fingerprints", str(fp), "--fraction", "1",
                     "--out", str(tmp_path / "full")]) == 0
    ds = pipeline.read_datasets(str(tmp_path / "full"))
    total = sum(len(d.fingerprints) for d in ds.values())
    assert total == sum(len(read_fingerprints(fp / f)) for f in os.listdir(fp) if f[0] in "AI")


def test_stage_chain(synth, tmp_path):
    fp = tmp_path / "fp"
    assert cli.main(["extract", "--config", synth.config, "--out", str(fp)]) == 0
    assert cli.main(["build", "--config", synth.config, "--fingerprints", str(fp), "--out", str(tmp_path / "ds")]) == 0
    ds = tmp_path / "ds"
    model = tmp_path / "m.json"
    assert cli.main(["train", str(ds / "ActiveTrain.csv"), "--out", str(model)]) == 0
    preds = tmp_path / "p.csv"
    assert cli.main(["predict", str(model), str(ds / "ActiveTest.csv"), "--out", str(preds)]) == 0
    aggd = tmp_path / "agg.csv"
    assert cli.main(["aggregate", str(preds), "--out", str(aggd)]) == 0
    assert (tmp_path / "agg_exceptions.csv").exists()
    assert cli.main(["evaluate", str(ds / "ActiveTest.csv"), str(aggd), "--out", str(tmp_path / "ev")]) == 0
    assert (tmp_path / "ev_individual_report.csv").exists() and (tmp_path / "ev_aggregated_report.csv").exists()


def test_run_aa_only(synth, tmp_path):
    out = tmp_path / "out"
    assert cli.main(["run", "--config", synth.config, "--out", str(out), "--repeats", "1"]) == 0
    rc = cli.main(["run", "--config", synth.config, "--out", str(tmp_path / "aa"), "--repeats", "1",
                   "--conditions", "AA"])
    assert rc == 0
    files = os.listdir(tmp_path / "aa" / "report")
    reports = sorted(f for f in files if f.endswith("_report.csv") and f[:2] in ("AA", "AI", "IA", "II"))
    assert reports == ["AA_aggregated_report.csv", "AA_individual_report.csv"]
    # the synthetic config enables the sweep
    assert "sweep.csv" in files
    man = json.loads((tmp_path / "aa" / "report" / "run_manifest.json").read_text())
    assert man["seeds"] == [1] and man["config"]["conditions"] == ["AA"]
    assert "label_map.csv" in man["inputs"] and any(k.endswith(".pcap") for k in man["inputs"])
    assert set(man["versions"]) == {"iotdevid", "python", "numpy"}
    assert (tmp_path / "aa" / "timings.csv").exists()


def test_sweep_command(synth, tmp_path):
    assert cli.main(["sweep", "--config", synth.config, "--out", str(tmp_path / "o")]) == 0
    files = os.listdir(tmp_path / "o" / "report")
    assert "sweep.csv" in files and "summary.csv" not in files
    # 8 sessions share one population
    assert len((tmp_path / "o" / "report" / "sweep.csv").read_text().splitlines()) == 4 + 1 + 56


def test_exit_codes(synth, tmp_path, monkeypatch):
    assert cli.main(["run", "--config", str(tmp_path / "none.toml")]) == cli.EXIT_CONFIG
    assert cli.main(["run", "--config", synth.config, "--fraction", "1.5"]) == cli.EXIT_CONFIG
    assert cli.main(["run", "--config", synth.config, "--repeats", "0"]) == cli.EXIT_CONFIG
    assert cli.main(["run", "--config", synth.config, "--group-size", "x"]) == cli.EXIT_CONFIG
    assert cli.main(["nope"]) == cli.EXIT_CONFIG
    bad = tmp_path / "bad.toml"
    bad.write_text("fraction = [\n")
    assert cli.main(["run", "--config", str(bad)]) == cli.EXIT_CONFIG
    assert cli.main(["predict", str(tmp_path / "missing.json"), "x.csv"]) == cli.EXIT_DATA

    def boom(*a, **k):
        raise RuntimeError("boom")

    monkeypatch.setattr(pipeline, "run", boom)
    assert cli.main(["run", "--config", synth.config, "--out", str(tmp_path / "o")]) == cli.EXIT_INTERNAL


def test_run_with_corrupt_capture(tmp_path):
    ds = write_synthetic_dataset(str(tmp_path / "s"), n_devices=3, packets_per_device=20, sessions_per_condition=1)
    cap = tmp_path / "s" / "captures" / os.listdir(tmp_path / "s" / "captures")[0]
    cap.write_bytes(b"junkjunkjunk")
    assert cli.main(["run", "--config", ds.config]) == cli.EXIT_DATA


def test_config_precedence(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text('fraction = 0.25\nrepeats = 4\nout = "o"\n[hyperparams]\nmax_depth = 7\n')
    assert RunConfig().fraction == 1.0
    c = load_config(str(p))
    assert c.fraction == 0.25 and c.repeats == 4 and c.hyperparams.max_depth == 7
    assert c.out == str(tmp_path / "o")
    c = load_config(str(p), {"fraction": 0.5, "repeats": None})
    assert c.fraction == 0.5 and c.repeats == 4
    p.write_text("colour = 1\n")
    with pytest.raises(ConfigError):
        load_config(str(p))
    with pytest.raises(ConfigError):
        load_config(None, {"repeats": "3"})
    with pytest.raises(ConfigError):
        RunConfig(label_map=str(tmp_path / "missing.csv")).validate(("label_map",))
    with pytest.raises(ConfigError):
        RunConfig(conditions=("XX",)).validate(())


def test_module_entry_point(tmp_path):
    import subprocess
    import sys

    r = subprocess.run([sys.executable, "-m", "iotdevid", "synth", "--out", str(tmp_path / "s"), "--devices", "2",
                        "--packets", "5"], capture_output=True, text=True)
    assert r.returncode == 0 and os.path.exists(tmp_path / "s" / "config.toml")
