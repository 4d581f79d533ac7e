"""Synthetic IoT captures for tests and demos.

Each device class gets a small behaviour profile (TTL, TCP window, service
ports, payload style). Every device also emits the same bare TCP ACKs and
ARP requests, which a per-packet model cannot tell apart; this is the
noise that MAC aggregation is meant to remove. Optionally one gateway MAC
forwards the traffic of several device classes in test sessions.
"""
from __future__ import annotations

import csv
import datetime as dt
import os
import struct
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .dataset import LabelMap, ManifestEntry, State, Condition, write_manifest
from .pcap import LinkType, write_pcap


def mac_bytes(mac: str) -> bytes:
    return bytes(int(p, 16) for p in mac.split(":"))


def _csum(data: bytes) -> int:
    if len(data) % 2:
        data += b"\x00"
    s = sum(struct.unpack(f"!{len(data) // 2}H", data))
    while s >> 16:
        s = (s & 0xFFFF) + (s >> 16)
    return ~s & 0xFFFF


def ether(dst: str, src: str, ether_type: int, payload: bytes, pad: bool = True) -> bytes:
    frame = mac_bytes(dst) + mac_bytes(src) + struct.pack("!H", ether_type) + payload
    if pad and len(frame) < 60:
        frame += b"\x00" * (60 - len(frame))
    return frame


def ipv4(src: str, dst: str, proto: int, payload: bytes, ttl: int = 64, tos: int = 0, df: bool = True,
         options: bytes = b"", ident: int = 0, frag_offset: int = 0, more_fragments: bool = False) -> bytes:
    if len(options) % 4:
        options += b"\x00" * (4 - len(options) % 4)
    ihl = 5 + len(options) // 4
    flags = (2 if df else 0) | (1 if more_fragments else 0)
    total = ihl * 4 + len(payload)
    head = struct.pack("!BBHHHBBH4s4s", (4 << 4) | ihl, tos, total, ident, (flags << 13) | frag_offset,
                       ttl, proto, 0, bytes(map(int, src.split("."))), bytes(map(int, dst.split("."))))
    head += options
    c = _csum(head)
    return head[:10] + struct.pack("!H", c) + head[12:] + payload


TCP_FIN, TCP_SYN, TCP_RST, TCP_PSH, TCP_ACK = 0x01, 0x02, 0x04, 0x08, 0x10


def tcp(sport: int, dport: int, flags: int, payload: bytes = b"", window: int = 65535, seq: int = 0,
        ack: int = 0, options: bytes = b"") -> bytes:
    if len(options) % 4:
        options += b"\x01" * (4 - len(options) % 4)
    doff = 5 + len(options) // 4
    return struct.pack("!HHIIBBHHH", sport, dport, seq, ack, doff << 4, flags, window, 0, 0) + options + payload


def udp(sport: int, dport: int, payload: bytes) -> bytes:
    return struct.pack("!HHHH", sport, dport, 8 + len(payload), 0) + payload


def dns_query(name: str, ident: int = 0, rd: bool = True, qr: bool = False) -> bytes:
    flags = (0x8000 if qr else 0) | (0x0100 if rd else 0)
    q = b"".join(bytes([len(p)]) + p.encode() for p in name.split(".")) + b"\x00" + struct.pack("!HH", 1, 1)
    return struct.pack("!HHHHHH", ident, flags, 1, 0, 0, 0) + q


def bootp(chaddr: str, options: Sequence[int] = (53, 55, 61), sname: bytes = b"", file: bytes = b"",
          flags: int = 0, dhcp: bool = True) -> bytes:
    body = struct.pack("!BBBBIHH4s4s4s4s", 1, 1, 6, 0, 0x1234, 0, flags, b"\0" * 4, b"\0" * 4, b"\0" * 4,
                       b"\0" * 4)
    body += mac_bytes(chaddr) + b"\x00" * 10
    body += sname.ljust(64, b"\x00")[:64] + file.ljust(128, b"\x00")[:128]
    if dhcp:
        opts = b"\x63\x82\x53\x63"
        for code in options:
            val = b"\x01" if code == 53 else b"\x00" * 3
            opts += bytes([code, len(val)]) + val
        body += opts + b"\xff"
    return body


def arp_request(src_mac: str, src_ip: str, target_ip: str) -> bytes:
    return struct.pack("!HHBBH6s4s6s4s", 1, 0x0800, 6, 4, 1, mac_bytes(src_mac),
                       bytes(map(int, src_ip.split("."))), b"\0" * 6, bytes(map(int, target_ip.split("."))))


def eapol_key(version: int = 2) -> bytes:
    return struct.pack("!BBH", version, 3, 4) + b"\x00" * 4


def llc_frame(dst: str, src: str, ctrl: int = 0x03, payload: bytes = b"\x00" * 8) -> bytes:
    body = bytes([0x42, 0x42, ctrl]) + payload
    return ether(dst, src, len(body), body)


def wpan_frame(src_short: int, dst_short: int = 0xFFFF, pan: int = 0x1A62, seq: int = 0,
               payload: bytes = b"") -> bytes:
    # data frame, PAN ID compression, short dst and src addressing
    fc = 0x0001 | (1 << 6) | (2 << 10) | (2 << 14)
    return struct.pack("<HBHHH", fc, seq & 0xFF, pan, dst_short, src_short) + payload


# ---------------------------------------------------------------------------
# profiles


GATEWAY_MAC = "02:00:00:00:00:fe"
HUB_MAC = "02:00:00:00:00:01"
ROUTER_MAC = "02:00:00:00:00:02"


@dataclass
class DeviceProfile:
    name: str
    mac: str
    ip: str
    ttl: int
    window: int
    tos: int
    server_port: int
    udp_port: int
    payload_lo: int
    payload_hi: int
    random_payload: bool
    dns_name: str
    dhcp_options: tuple
    # mixture weights over behaviours: tcp_data, udp_data, dns, dhcp, bare_ack, arp
    weights: tuple = field(default=(0.35, 0.2, 0.08, 0.02, 0.25, 0.1))


_NAMES = ("Cam", "Plug", "Speaker", "Bulb", "Hub", "Sensor", "Lamp", "Socket", "Board", "Roomba")


def make_profiles(n_devices: int, seed: int = 0) -> list[DeviceProfile]:
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n_devices):
        ports = (80, 443, 554, 1883, 8080, 8883, 5683, 9999)
        lo = int(rng.integers(20, 200))
        out.append(DeviceProfile(
            name=f"{_NAMES[i % len(_NAMES)]} {i:02d}",
            mac=f"02:10:00:00:{i // 256:02x}:{i % 256:02x}",
            ip=f"192.168.1.{10 + i}",
            ttl=int(rng.choice([64, 128, 255])),
            window=int(rng.integers(1000, 65535)),
            tos=int(rng.choice([0, 0, 0, 0x10, 0xB8])),
            server_port=int(ports[i % len(ports)]),
            udp_port=int(rng.integers(1024, 60000)),
            payload_lo=lo,
            payload_hi=lo + int(rng.integers(10, 400)),
            random_payload=bool(rng.random() < 0.5),
            dns_name=f"api{i}.vendor{i % 3}.example",
            dhcp_options=tuple(int(v) for v in rng.permutation([53, 55, 61, 12, 57, 60])[: 3 + i % 3]),
        ))
    return out


def _payload(p: DeviceProfile, rng: np.random.Generator) -> bytes:
    n = int(rng.integers(p.payload_lo, p.payload_hi + 1))
    if p.random_payload:
        return rng.integers(0, 256, n, dtype=np.uint8).tobytes()
    alphabet = np.frombuffer(b"abcdefghijklmnop{}\":,", dtype=np.uint8)
    return rng.choice(alphabet, n).tobytes()


def device_frame(p: DeviceProfile, rng: np.random.Generator, src_mac: Optional[str] = None,
                 active: bool = False) -> bytes:
    """One frame drawn from the profile's behaviour mixture."""
    mac = src_mac or p.mac
    w = np.array(p.weights, dtype=float)
    if active:
        w = w * np.array([1.6, 1.2, 1.0, 1.0, 1.0, 0.6])
    kind = rng.choice(len(w), p=w / w.sum())
    eph = int(rng.integers(49152, 65535))
    if kind == 0:
        seg = tcp(eph, p.server_port, TCP_PSH | TCP_ACK, _payload(p, rng), window=p.window)
        return ether(ROUTER_MAC, mac, 0x0800, ipv4(p.ip, "10.0.0.1", 6, seg, ttl=p.ttl, tos=p.tos))
    if kind == 1:
        dg = udp(p.udp_port, p.udp_port, _payload(p, rng))
        return ether(ROUTER_MAC, mac, 0x0800, ipv4(p.ip, "10.0.0.1", 17, dg, ttl=p.ttl, tos=p.tos, df=False))
    if kind == 2:
        dg = udp(eph, 53, dns_query(p.dns_name, int(rng.integers(0, 65535))))
        return ether(ROUTER_MAC, mac, 0x0800, ipv4(p.ip, "192.168.1.1", 17, dg, ttl=p.ttl, df=False))
    if kind == 3:
        dg = udp(68, 67, bootp(mac, p.dhcp_options))
        return ether("ff:ff:ff:ff:ff:ff", mac, 0x0800, ipv4("0.0.0.0", "255.255.255.255", 17, dg, ttl=64,
                                                             df=False))
    if kind == 4:
        # indistinguishable across devices on purpose
        seg = tcp(eph, 443, TCP_ACK, window=65535)
        return ether(ROUTER_MAC, mac, 0x0800, ipv4(p.ip, "10.0.0.1", 6, seg, ttl=64))
    return ether("ff:ff:ff:ff:ff:ff", mac, 0x0806, arp_request(mac, p.ip, "192.168.1.1"))


def labelled_session(profiles: Sequence[DeviceProfile], packets_per_device: int, seed: int,
                     active: bool = False, gateway: Optional[Sequence[int]] = None,
                     hub_packets: int = 0, start: float = 1_636_000_000.0) -> list[tuple[float, bytes, Optional[str]]]:
    """Interleaved ``(timestamp, frame, device name)`` triples, timestamps increasing.

    ``gateway`` lists profile indices whose traffic leaves through
    ``GATEWAY_MAC`` instead of their own MAC; their device names are kept.
    Hub frames carry no device name.
    """
    rng = np.random.default_rng(seed)
    gateway = set(gateway or ())
    items = []
    for i, p in enumerate(profiles):
        mac = GATEWAY_MAC if i in gateway else None
        items += [(device_frame(p, rng, mac, active), p.name) for _ in range(packets_per_device)]
    for _ in range(hub_packets):
        items.append((ether(ROUTER_MAC, HUB_MAC, 0x0800,
                            ipv4("192.168.1.2", "10.0.0.1", 17, udp(5000, 5000, b"hub" * 10))), None))
    order = rng.permutation(len(items))
    return [(start + 0.001 * k, *items[j]) for k, j in enumerate(order)]


def generate_session(profiles: Sequence[DeviceProfile], packets_per_device: int, seed: int,
                     active: bool = False, gateway: Optional[Sequence[int]] = None,
                     hub_packets: int = 0, start: float = 1_636_000_000.0) -> list[tuple[float, bytes]]:
    return [(ts, frame) for ts, frame, _ in
            labelled_session(profiles, packets_per_device, seed, active, gateway, hub_packets, start)]


@dataclass
class SyntheticDataset:
    root: str
    label_map: str
    manifest: str
    adjustments: str
    config: str
    profiles: list


def write_synthetic_dataset(root: str, n_devices: int = 5, packets_per_device: int = 200, seed: int = 0,
                            sessions_per_condition: int = 2, gateway: Optional[Sequence[int]] = None,
                            repeats: int = 2, fraction: float = 0.5) -> SyntheticDataset:
    """Write pcaps, label map, manifest, adjustments and a run config under ``root``."""
    os.makedirs(root, exist_ok=True)
    cap_dir = os.path.join(root, "captures")
    os.makedirs(cap_dir, exist_ok=True)
    profiles = make_profiles(n_devices, seed)
    entries = []
    day = dt.date(2021, 11, 1)
    k = 0
    for cond in Condition:
        state = State.ACTIVE if cond.value.startswith("Active") else State.IDLE
        for _ in range(sessions_per_condition):
            d = day + dt.timedelta(days=k)
            ref = f"{state.letter}{d:%y%m%d}"
            behind = gateway if cond.value.endswith("Test") else None
            frames = generate_session(profiles, packets_per_device, seed * 1000 + k, state is State.ACTIVE,
                                      behind, hub_packets=5)
            path = os.path.join(cap_dir, f"{ref}.pcap")
            write_pcap(path, frames, LinkType.ETHERNET)
            entries.append(ManifestEntry(ref, state, d, cond, f"{ref}.pcap"))
            k += 1
    entries_map = {p.mac: p.name for p in profiles}
    if gateway:
        # a MAC-keyed label map can only name one device for the gateway
        entries_map[GATEWAY_MAC] = profiles[sorted(gateway)[0]].name
    lm = LabelMap(entries_map, {HUB_MAC})
    lm_path = os.path.join(root, "label_map.csv")
    lm.write(lm_path)
    man_path = os.path.join(root, "manifest.csv")
    write_manifest(man_path, entries)
    adj_path = os.path.join(root, "adjustments.csv")
    with open(adj_path, "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerow(["kind", "class", "from", "to"])
    cfg_path = os.path.join(root, "config.toml")
    with open(cfg_path, "w") as fh:
        fh.write(
            f'captures_root = "captures"\n'
            f'label_map = "label_map.csv"\n'
            f'manifest = "manifest.csv"\n'
            f'adjustments = "adjustments.csv"\n'
            f'out = "out"\n'
            f"fraction = {fraction}\n"
            f"repeats = {repeats}\n"
            f"base_seed = {seed}\n"
            f'group_size = "whole"\n'
            f'conditions = ["AA", "AI", "IA", "II"]\n'
            f"sweep = true\n"
        )
    return SyntheticDataset(root, lm_path, man_path, adj_path, cfg_path, profiles)


def write_wpan_capture(path: str, n_devices: int = 3, packets_per_device: int = 50, seed: int = 0) -> list[str]:
    """802.15.4 capture; returns device names in short-address order."""
    rng = np.random.default_rng(seed)
    frames = []
    names = []
    for i in range(n_devices):
        names.append(f"Zigbee {i:02d}")
        size = 8 + 6 * i
        for s in range(packets_per_device):
            body = bytes([i]) * size + rng.integers(0, 256, int(rng.integers(0, 4)), dtype=np.uint8).tobytes()
            frames.append(wpan_frame(0x1000 + i, seq=s, payload=body))
    order = rng.permutation(len(frames))
    write_pcap(path, [(1_636_000_000.0 + 0.01 * k, frames[j]) for k, j in enumerate(order)],
               LinkType.IEEE802_15_4)
    return names
