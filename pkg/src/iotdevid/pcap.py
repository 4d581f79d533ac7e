"""Classic pcap reading and per-frame protocol decoding.

Only the header fields needed by the fingerprint features are decoded.
Decoding never raises: layers that are truncated or malformed are left
absent and counted in ``DecodedPacket.warnings``.
"""
from __future__ import annotations

import enum
import os
import struct
from dataclasses import dataclass, field
from typing import BinaryIO, Iterator, Optional

__all__ = [
    "LinkType", "CaptureFile", "PcapRecord", "DecodedPacket", "NotPcap", "Truncated",
    "open_capture", "iter_records", "read_capture", "decode_packet", "write_pcap",
    "format_mac", "ZERO_MAC",
]

ZERO_MAC = "00:00:00:00:00:00"

MAGIC_US = 0xA1B2C3D4
MAGIC_NS = 0xA1B23C4D

ETH_IPV4 = 0x0800
ETH_VLAN = (0x8100, 0x88A8, 0x9100)
ETH_EAPOL = 0x888E

DNS_PORTS = (53, 5353)
BOOTP_PORTS = (67, 68)
DHCP_MAGIC = b"\x63\x82\x53\x63"


class NotPcap(ValueError):
    """Bad global-header magic."""


class Truncated(ValueError):
    """A header runs past the end of the file."""


class LinkType(enum.Enum):
    ETHERNET = "Ethernet"
    IEEE802_15_4 = "IEEE802_15_4"
    RAW = "Raw"

    @classmethod
    def from_dlt(cls, dlt: int) -> "LinkType":
        if dlt == 1:
            return cls.ETHERNET
        if dlt in (195, 215, 230, 283):
            return cls.IEEE802_15_4
        if dlt in (12, 14, 101, 228):
            return cls.RAW
        raise NotPcap(f"unsupported link type {dlt}")

    @property
    def dlt(self) -> int:
        return {"Ethernet": 1, "IEEE802_15_4": 195, "Raw": 101}[self.value]


@dataclass
class CaptureFile:
    path: str
    link_type: LinkType
    byte_order: str  # "big" | "little"
    nanosecond: bool
    snaplen: int
    dlt: int
    packet_count: int = 0
    _data_offset: int = 24

    def __iter__(self) -> Iterator["PcapRecord"]:
        return iter_records(self)


@dataclass(frozen=True)
class PcapRecord:
    index: int
    timestamp: float
    ts_sec: int
    ts_frac: int
    orig_len: int
    data: bytes


def _read_global_header(fh: BinaryIO, path: str) -> CaptureFile:
    head = fh.read(24)
    if len(head) < 4:
        raise NotPcap(f"{path}: too short for a pcap header")
    magic_le = struct.unpack("<I", head[:4])[0]
    magic_be = struct.unpack(">I", head[:4])[0]
    if magic_le in (MAGIC_US, MAGIC_NS):
        order, fmt = "little", "<"
        magic = magic_le
    elif magic_be in (MAGIC_US, MAGIC_NS):
        order, fmt = "big", ">"
        magic = magic_be
    else:
        raise NotPcap(f"{path}: bad magic 0x{magic_be:08x}")
    if len(head) < 24:
        raise Truncated(f"{path}: global header cut short")
    _vmaj, _vmin, _tz, _sig, snaplen, dlt = struct.unpack(fmt + "HHiIII", head[4:])
    return CaptureFile(
        path=str(path),
        link_type=LinkType.from_dlt(dlt & 0x0FFFFFFF),
        byte_order=order,
        nanosecond=(magic == MAGIC_NS),
        snaplen=snaplen,
        dlt=dlt & 0x0FFFFFFF,
    )


def open_capture(path: str | os.PathLike) -> CaptureFile:
    """Open ``path``, validate its header, and count its records.

    Raises NotPcap, Truncated, or OSError.
    """
    path = os.fspath(path)
    with open(path, "rb") as fh:
        cap = _read_global_header(fh, path)
    n = 0
    for _ in iter_records(cap):
        n += 1
    cap.packet_count = n
    return cap


def iter_records(cap: CaptureFile) -> Iterator[PcapRecord]:
    """Stream records in file order. Memory use is independent of file size."""
    fmt = "<IIII" if cap.byte_order == "little" else ">IIII"
    div = 1e9 if cap.nanosecond else 1e6
    with open(cap.path, "rb") as fh:
        fh.seek(cap._data_offset)
        index = 0
        while True:
            rh = fh.read(16)
            if not rh:
                return
            if len(rh) < 16:
                raise Truncated(f"{cap.path}: record header {index} cut short")
            ts_sec, ts_frac, incl_len, orig_len = struct.unpack(fmt, rh)
            data = fh.read(incl_len)
            if len(data) < incl_len:
                raise Truncated(f"{cap.path}: record {index} data cut short")
            yield PcapRecord(index, ts_sec + ts_frac / div, ts_sec, ts_frac, orig_len, data)
            index += 1


def read_capture(path: str | os.PathLike) -> tuple[CaptureFile, list[PcapRecord]]:
    cap = open_capture(path)
    return cap, list(iter_records(cap))


def write_pcap(path: str | os.PathLike, frames, link_type: LinkType = LinkType.ETHERNET,
               snaplen: int = 65535) -> None:
    """Write ``frames`` as a little-endian microsecond pcap.

    Each frame is ``bytes`` or a ``(timestamp, bytes)`` or
    ``(timestamp, bytes, orig_len)`` tuple.
    """
    with open(path, "wb") as fh:
        fh.write(struct.pack("<IHHiIII", MAGIC_US, 2, 4, 0, 0, snaplen, link_type.dlt))
        for i, fr in enumerate(frames):
            if isinstance(fr, (bytes, bytearray)):
                ts, data, orig = float(i), bytes(fr), len(fr)
            elif len(fr) == 2:
                ts, data = fr
                orig = len(data)
            else:
                ts, data, orig = fr
            sec = int(ts)
            usec = int(round((ts - sec) * 1e6))
            if usec >= 1_000_000:
                sec, usec = sec + 1, usec - 1_000_000
            data = bytes(data)[:snaplen]
            fh.write(struct.pack("<IIII", sec, usec, len(data), orig))
            fh.write(data)


# ---------------------------------------------------------------------------
# layer records

@dataclass(frozen=True)
class Ethernet:
    ether_type: int


@dataclass(frozen=True)
class LLC:
    ctrl: int


@dataclass(frozen=True)
class EAPOL:
    version: int
    type: int


@dataclass(frozen=True)
class IPv4:
    ihl: int
    tos: int
    total_length: int
    flags_bits: int
    df_bit: int
    ttl: int
    protocol: int
    frag_offset: int
    options_bytes: bytes


@dataclass(frozen=True)
class ICMP:
    code: int


@dataclass(frozen=True)
class TCP:
    data_offset: int
    flag_fin: int
    flag_ack: int
    window: int
    src_port: int
    dst_port: int
    payload: bytes


@dataclass(frozen=True)
class UDP:
    length: int
    src_port: int
    dst_port: int
    payload: bytes


@dataclass(frozen=True)
class BOOTP:
    hlen: int
    flags: int
    sname_bytes: bytes
    file_bytes: bytes
    options_bytes: bytes


@dataclass(frozen=True)
class DHCP:
    options_list: tuple[int, ...]


@dataclass(frozen=True)
class DNS:
    qr: int
    rd: int
    qdcount: int


@dataclass(frozen=True)
class IEEE802154:
    frame_type: int
    src_addr: Optional[bytes]
    payload: bytes


@dataclass(frozen=True)
class DecodedPacket:
    timestamp: float
    wire_length: int
    captured_length: int
    src_mac: Optional[str] = None
    dst_mac: Optional[str] = None
    ethernet: Optional[Ethernet] = None
    llc: Optional[LLC] = None
    eapol: Optional[EAPOL] = None
    ipv4: Optional[IPv4] = None
    icmp: Optional[ICMP] = None
    tcp: Optional[TCP] = None
    udp: Optional[UDP] = None
    bootp: Optional[BOOTP] = None
    dhcp: Optional[DHCP] = None
    dns: Optional[DNS] = None
    wpan: Optional[IEEE802154] = None
    warnings: int = 0

    @property
    def layers(self) -> tuple[str, ...]:
        names = ("ethernet", "llc", "eapol", "ipv4", "icmp", "tcp", "udp",
                 "bootp", "dhcp", "dns", "wpan")
        return tuple(n for n in names if getattr(self, n) is not None)

    @property
    def payload(self) -> bytes:
        for layer in (self.tcp, self.udp, self.wpan):
            if layer is not None:
                return layer.payload
        return b""


def format_mac(raw: bytes) -> str:
    return ":".join(f"{b:02x}" for b in raw)


# ---------------------------------------------------------------------------
# decoding


class _Builder:
    """Mutable accumulator, frozen into a DecodedPacket at the end."""

    def __init__(self):
        self.fields: dict = {}
        self.warnings = 0


def decode_packet(raw: bytes, link_type: LinkType, timestamp: float = 0.0,
                  wire_length: Optional[int] = None) -> DecodedPacket:
    """Decode one captured frame. Total: never raises on malformed input."""
    raw = bytes(raw)
    b = _Builder()
    if link_type is LinkType.ETHERNET:
        _decode_ethernet(raw, b)
    elif link_type is LinkType.IEEE802_15_4:
        _decode_wpan(raw, b)
    else:
        if raw and raw[0] >> 4 == 4:
            _decode_ipv4(raw, b)
    return DecodedPacket(
        timestamp=timestamp,
        wire_length=len(raw) if wire_length is None else wire_length,
        captured_length=len(raw),
        warnings=b.warnings,
        **b.fields,
    )


def _decode_ethernet(raw: bytes, b: _Builder) -> None:
    if len(raw) < 14:
        b.warnings += 1
        return
    b.fields["dst_mac"] = format_mac(raw[0:6])
    b.fields["src_mac"] = format_mac(raw[6:12])
    etype = struct.unpack("!H", raw[12:14])[0]
    off = 14
    while etype in ETH_VLAN:
        if len(raw) < off + 4:
            b.warnings += 1
            b.fields["ethernet"] = Ethernet(etype)
            return
        etype = struct.unpack("!H", raw[off + 2:off + 4])[0]
        off += 4
    b.fields["ethernet"] = Ethernet(etype)
    body = raw[off:]
    if etype <= 1500:
        # 802.3 length field followed by an LLC header
        if len(body) < 3:
            b.warnings += 1
            return
        b.fields["llc"] = LLC(body[2])
    elif etype == ETH_IPV4:
        _decode_ipv4(body, b)
    elif etype == ETH_EAPOL:
        if len(body) < 2:
            b.warnings += 1
            return
        b.fields["eapol"] = EAPOL(body[0], body[1])


def _decode_ipv4(body: bytes, b: _Builder) -> None:
    if len(body) < 20 or body[0] >> 4 != 4:
        b.warnings += 1
        return
    ihl = body[0] & 0x0F
    hlen = ihl * 4
    if ihl < 5 or len(body) < hlen:
        b.warnings += 1
        return
    tos = body[1]
    total_length, _ident, flags_frag = struct.unpack("!HHH", body[2:8])
    ttl, proto = body[8], body[9]
    flags = flags_frag >> 13
    frag = flags_frag & 0x1FFF
    b.fields["ipv4"] = IPv4(
        ihl=ihl, tos=tos, total_length=total_length, flags_bits=flags,
        df_bit=(flags >> 1) & 1, ttl=ttl, protocol=proto, frag_offset=frag,
        options_bytes=body[20:hlen],
    )
    if frag:
        return  # later fragments carry no transport header
    # the IP total length bounds the segment; Ethernet padding is not payload
    end = min(len(body), total_length) if total_length >= hlen else len(body)
    seg = body[hlen:end]
    if proto == 1:
        if len(seg) < 2:
            b.warnings += 1
            return
        b.fields["icmp"] = ICMP(seg[1])
    elif proto == 6:
        _decode_tcp(seg, b)
    elif proto == 17:
        _decode_udp(seg, b)


def _decode_tcp(seg: bytes, b: _Builder) -> None:
    if len(seg) < 20:
        b.warnings += 1
        return
    sport, dport = struct.unpack("!HH", seg[0:4])
    doff = seg[12] >> 4
    flags = seg[13]
    window = struct.unpack("!H", seg[14:16])[0]
    if doff < 5 or len(seg) < doff * 4:
        b.warnings += 1
        return
    payload = seg[doff * 4:]
    b.fields["tcp"] = TCP(doff, flags & 0x01, (flags >> 4) & 1, window, sport, dport, payload)
    if 53 in (sport, dport) and len(payload) >= 2:
        _decode_dns(payload[2:], b)


def _decode_udp(seg: bytes, b: _Builder) -> None:
    if len(seg) < 8:
        b.warnings += 1
        return
    sport, dport, length = struct.unpack("!HHH", seg[0:6])
    end = length if 8 <= length <= len(seg) else len(seg)
    payload = seg[8:end]
    b.fields["udp"] = UDP(length, sport, dport, payload)
    ports = (sport, dport)
    if any(p in BOOTP_PORTS for p in ports):
        _decode_bootp(payload, b)
    elif any(p in DNS_PORTS for p in ports):
        _decode_dns(payload, b)


def _decode_bootp(p: bytes, b: _Builder) -> None:
    if len(p) < 236:
        b.warnings += 1
        return
    hlen = p[2]
    flags = struct.unpack("!H", p[10:12])[0]
    rest = p[236:]
    if rest[:4] == DHCP_MAGIC:
        b.fields["bootp"] = BOOTP(hlen, flags, p[44:108], p[108:236], rest[:4])
        b.fields["dhcp"] = DHCP(_dhcp_codes(rest[4:]))
    else:
        b.fields["bootp"] = BOOTP(hlen, flags, p[44:108], p[108:236], rest)


def _dhcp_codes(opts: bytes) -> tuple[int, ...]:
    codes = []
    i = 0
    while i < len(opts):
        code = opts[i]
        if code == 0:
            i += 1
            continue
        if code == 255:
            break
        if i + 1 >= len(opts):
            break
        codes.append(code)
        i += 2 + opts[i + 1]
    return tuple(codes)


def _decode_dns(p: bytes, b: _Builder) -> None:
    if len(p) < 12:
        b.warnings += 1
        return
    flags = struct.unpack("!H", p[2:4])[0]
    qdcount = struct.unpack("!H", p[4:6])[0]
    b.fields["dns"] = DNS(qr=flags >> 15, rd=(flags >> 8) & 1, qdcount=qdcount)


def _decode_wpan(raw: bytes, b: _Builder) -> None:
    # 802.15.4 frames have no Ethernet MAC; all share the all-zero address.
    b.fields["src_mac"] = ZERO_MAC
    b.fields["dst_mac"] = ZERO_MAC
    if len(raw) < 3:
        b.warnings += 1
        return
    fc = struct.unpack("<H", raw[0:2])[0]
    ftype = fc & 0x7
    pan_comp = (fc >> 6) & 1
    dst_mode = (fc >> 10) & 0x3
    src_mode = (fc >> 14) & 0x3
    alen = {0: 0, 2: 2, 3: 8}
    off = 3
    if dst_mode:
        off += 2 + alen.get(dst_mode, 0)
    src = None
    if src_mode:
        if not pan_comp or not dst_mode:
            off += 2
        n = alen.get(src_mode, 0)
        if len(raw) < off + n:
            b.warnings += 1
            b.fields["wpan"] = IEEE802154(ftype, None, b"")
            return
        src = raw[off:off + n][::-1]
        off += n
    if len(raw) < off:
        b.warnings += 1
        b.fields["wpan"] = IEEE802154(ftype, src, b"")
        return
    b.fields["wpan"] = IEEE802154(ftype, src, raw[off:])
