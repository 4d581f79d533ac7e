"""Per-packet fingerprints: the fixed 30-value feature vector and its CSV form."""
from __future__ import annotations

import csv
import enum
import math
import os
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

from .pcap import DecodedPacket

SCHEMA_VERSION = 1
MISSING = -1

FEATURE_NAMES: tuple[str, ...] = (
    "pck_size", "Ether_type", "LLC_ctrl", "EAPOL_version", "EAPOL_type",
    "IP_ihl", "IP_tos", "IP_len", "IP_flags", "IP_DF", "IP_ttl", "IP_options",
    "ICMP_code", "TCP_dataofs", "TCP_FIN", "TCP_ACK", "TCP_window", "UDP_len",
    "DHCP_options", "BOOTP_hlen", "BOOTP_flags", "BOOTP_sname", "BOOTP_file",
    "BOOTP_options", "DNS_qr", "DNS_rd", "DNS_qdcount", "dport_class",
    "payload_bytes", "entropy",
)
N_FEATURES = len(FEATURE_NAMES)
META_COLUMNS = ("mac", "session", "label")
CSV_HEADER = FEATURE_NAMES + META_COLUMNS

_INT_FEATURES = frozenset(FEATURE_NAMES) - {"entropy"}


class NoSourceMac(ValueError):
    pass


class PortClass(enum.IntEnum):
    ABSENT = 0
    WELL_KNOWN = 1
    REGISTERED = 2
    DYNAMIC = 3


def classify_dport(dst_port: Optional[int]) -> PortClass:
    if dst_port is None:
        return PortClass.ABSENT
    if dst_port <= 1023:
        return PortClass.WELL_KNOWN
    if dst_port <= 49151:
        return PortClass.REGISTERED
    return PortClass.DYNAMIC


def payload_entropy(payload: bytes) -> float:
    """Shannon entropy of the byte-value histogram, in bits per byte."""
    n = len(payload)
    if n == 0:
        return 0.0
    h = 0.0
    for c in Counter(payload).values():
        p = c / n
        h -= p * math.log2(p)
    # a single-symbol payload gives -0.0
    return max(h, 0.0)


FNV_OFFSET = 0x811C9DC5
FNV_PRIME = 0x01000193


def fnv1a_32(data: bytes) -> int:
    h = FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & 0xFFFFFFFF
    return h


def encode_variable_field(raw, kind: str) -> int:
    """Stable integer code for a variable-length field; empty maps to 0.

    ``kind`` is one of ``options_bytes``, ``sname``, ``file`` or
    ``dhcp_options``. For ``dhcp_options``, ``raw`` is the sequence of option
    type codes. ``sname`` and ``file`` are NUL-padded C strings; the padding is
    stripped before hashing.
    """
    if kind == "dhcp_options":
        data = bytes(raw)
    elif kind in ("sname", "file"):
        data = bytes(raw).rstrip(b"\x00")
    elif kind == "options_bytes":
        data = bytes(raw)
    else:
        raise ValueError(f"unknown field kind {kind!r}")
    if not data:
        return 0
    return fnv1a_32(data)


@dataclass(frozen=True)
class Fingerprint:
    features: tuple
    src_mac: str
    session_ref: str
    true_label: Optional[str] = None

    def as_dict(self) -> dict:
        return dict(zip(FEATURE_NAMES, self.features))


def feature_vector(pkt: DecodedPacket) -> tuple:
    M = MISSING
    eth, llc, eapol, ip = pkt.ethernet, pkt.llc, pkt.eapol, pkt.ipv4
    icmp, tcp, udp, bootp, dhcp, dns = pkt.icmp, pkt.tcp, pkt.udp, pkt.bootp, pkt.dhcp, pkt.dns
    transport = tcp or udp
    payload = pkt.payload
    return (
        pkt.wire_length,
        eth.ether_type if eth else M,
        llc.ctrl if llc else M,
        eapol.version if eapol else M,
        eapol.type if eapol else M,
        ip.ihl if ip else M,
        ip.tos if ip else M,
        ip.total_length if ip else M,
        ip.flags_bits if ip else M,
        ip.df_bit if ip else M,
        ip.ttl if ip else M,
        encode_variable_field(ip.options_bytes, "options_bytes") if ip else M,
        icmp.code if icmp else M,
        tcp.data_offset if tcp else M,
        tcp.flag_fin if tcp else M,
        tcp.flag_ack if tcp else M,
        tcp.window if tcp else M,
        udp.length if udp else M,
        encode_variable_field(dhcp.options_list, "dhcp_options") if dhcp else M,
        bootp.hlen if bootp else M,
        bootp.flags if bootp else M,
        encode_variable_field(bootp.sname_bytes, "sname") if bootp else M,
        encode_variable_field(bootp.file_bytes, "file") if bootp else M,
        encode_variable_field(bootp.options_bytes, "options_bytes") if bootp else M,
        dns.qr if dns else M,
        dns.rd if dns else M,
        dns.qdcount if dns else M,
        int(classify_dport(transport.dst_port if transport else None)),
        len(payload),
        payload_entropy(payload),
    )


def extract_fingerprint(pkt: DecodedPacket, session_ref: str) -> Fingerprint:
    if pkt.src_mac is None:
        raise NoSourceMac("frame carries no source address")
    return Fingerprint(feature_vector(pkt), pkt.src_mac, session_ref)


# ---------------------------------------------------------------------------
# collections


@dataclass
class FingerprintTable:
    """Column-oriented collection of fingerprints.

    ``X`` is an (n, 30) float64 matrix in ``FEATURE_NAMES`` order; ``labels``
    entries are ``None`` for unlabeled rows.
    """

    X: np.ndarray
    macs: list
    sessions: list
    labels: list

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64).reshape(-1, N_FEATURES)
        n = len(self.X)
        if not (len(self.macs) == len(self.sessions) == len(self.labels) == n):
            raise ValueError("column length mismatch")

    def __len__(self) -> int:
        return len(self.X)

    @classmethod
    def empty(cls) -> "FingerprintTable":
        return cls(np.empty((0, N_FEATURES)), [], [], [])

    @classmethod
    def from_fingerprints(cls, fps: Iterable[Fingerprint]) -> "FingerprintTable":
        fps = list(fps)
        if not fps:
            return cls.empty()
        return cls(
            np.array([f.features for f in fps], dtype=np.float64),
            [f.src_mac for f in fps],
            [f.session_ref for f in fps],
            [f.true_label for f in fps],
        )

    @classmethod
    def concat(cls, tables: Sequence["FingerprintTable"]) -> "FingerprintTable":
        tables = [t for t in tables if len(t)]
        if not tables:
            return cls.empty()
        return cls(
            np.vstack([t.X for t in tables]),
            [m for t in tables for m in t.macs],
            [s for t in tables for s in t.sessions],
            [lab for t in tables for lab in t.labels],
        )

    def take(self, idx) -> "FingerprintTable":
        idx = np.asarray(idx, dtype=np.int64)
        return FingerprintTable(
            self.X[idx],
            [self.macs[i] for i in idx],
            [self.sessions[i] for i in idx],
            [self.labels[i] for i in idx],
        )

    def __iter__(self) -> Iterator[Fingerprint]:
        for i in range(len(self)):
            yield Fingerprint(tuple(self.X[i]), self.macs[i], self.sessions[i], self.labels[i])

    def class_counts(self) -> Counter:
        return Counter(lab for lab in self.labels if lab is not None)


def _format_value(name: str, v: float) -> str:
    if name in _INT_FEATURES:
        return str(int(v))
    return repr(float(v))


def format_row(features: Sequence[float]) -> list[str]:
    return [_format_value(n, v) for n, v in zip(FEATURE_NAMES, features)]


class FingerprintWriter:
    """Incremental CSV writer, for streaming extraction."""

    def __init__(self, fh):
        self._w = csv.writer(fh, lineterminator="\n")
        self._w.writerow(CSV_HEADER)
        self.rows = 0

    def write(self, fp: Fingerprint) -> None:
        self._w.writerow(format_row(fp.features) + [fp.src_mac, fp.session_ref, fp.true_label or ""])
        self.rows += 1


def write_fingerprints(path: str | os.PathLike, table: FingerprintTable) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for i in range(len(table)):
            w.writerow(format_row(table.X[i]) + [table.macs[i], table.sessions[i], table.labels[i] or ""])


def read_fingerprints(path: str | os.PathLike) -> FingerprintTable:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = tuple(next(r, ()))
        if header != CSV_HEADER:
            raise ValueError(f"{path}: fingerprint header does not match schema v{SCHEMA_VERSION}")
        rows = list(r)
    if not rows:
        return FingerprintTable.empty()
    X = np.array([[float(v) for v in row[:N_FEATURES]] for row in rows], dtype=np.float64)
    return FingerprintTable(
        X,
        [row[N_FEATURES] for row in rows],
        [row[N_FEATURES + 1] for row in rows],
        [row[N_FEATURES + 2] or None for row in rows],
    )
