"""Capture reader and dissector for the tracker and LAN discovery datagrams."""
import enum
import ipaddress
import json
import struct
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from . import bencode
from .errors import ForensicError
from .keycodec import NetAddr, PeerId, ShareId, decode_netaddr, encode_netaddr


class CaptureError(ForensicError):
    pass


class BadMagic(CaptureError):
    pass


class TruncatedRecord(CaptureError):
    def __init__(self, message, records_read):
        super().__init__(message)
        self.records_read = records_read


class Transport(enum.Enum):
    UDP = "UDP"
    TCP = "TCP"
    Other = "Other"


@dataclass(frozen=True)
class CaptureRecord:
    index: int
    ts_sec: int
    ts_usec: int
    src: NetAddr
    dst: NetAddr
    transport: Transport
    payload: bytes


@dataclass
class Capture:
    records: list = field(default_factory=list)
    total: int = 0
    skipped: Counter = field(default_factory=Counter)
    truncated: bool = False


MAGIC_USEC = 0xA1B2C3D4
MAGIC_NSEC = 0xA1B23C4D
LINK_ETHERNET = 1
LINK_RAW = 101
LINK_SLL = 113
LINK_IPV4 = 228


def read_capture(path, strict=False):
    return parse_capture(Path(path).read_bytes(), strict=strict)


def parse_capture(data, strict=False):
    if len(data) < 24:
        raise BadMagic("file too short for a capture header")
    (magic,) = struct.unpack("<I", data[:4])
    if magic in (MAGIC_USEC, MAGIC_NSEC):
        endian = "<"
    else:
        (magic,) = struct.unpack(">I", data[:4])
        if magic not in (MAGIC_USEC, MAGIC_NSEC):
            raise BadMagic(f"unknown capture magic {data[:4].hex()}")
        endian = ">"
    nanos = magic == MAGIC_NSEC
    linktype = struct.unpack(endian + "I", data[20:24])[0] & 0x0FFFFFFF
    cap = Capture()
    rec_hdr = struct.Struct(endian + "IIII")
    pos = 24
    while pos < len(data):
        if pos + 16 > len(data):
            cap.truncated = True
            break
        ts_sec, ts_frac, incl, _orig = rec_hdr.unpack_from(data, pos)
        pos += 16
        if pos + incl > len(data):
            cap.truncated = True
            break
        frame = data[pos:pos + incl]
        pos += incl
        cap.total += 1
        ts_usec = ts_frac // 1000 if nanos else ts_frac
        rec, reason = _decode_frame(cap.total - 1, ts_sec, ts_usec, linktype, frame)
        if rec is None:
            cap.skipped[reason] += 1
        else:
            cap.records.append(rec)
    if cap.truncated and strict:
        raise TruncatedRecord(f"capture ends inside a record after {cap.total} whole records", cap.total)
    return cap


def _decode_frame(index, ts_sec, ts_usec, linktype, frame):
    if linktype == LINK_ETHERNET:
        if len(frame) < 14:
            return None, "short link header"
        off = 12
        (etype,) = struct.unpack_from(">H", frame, off)
        off += 2
        while etype in (0x8100, 0x88A8) and len(frame) >= off + 4:
            (etype,) = struct.unpack_from(">H", frame, off + 2)
            off += 4
        if etype != 0x0800:
            return None, "not IPv4"
        ip = frame[off:]
    elif linktype == LINK_SLL:
        if len(frame) < 16:
            return None, "short link header"
        if struct.unpack_from(">H", frame, 14)[0] != 0x0800:
            return None, "not IPv4"
        ip = frame[16:]
    elif linktype in (LINK_RAW, LINK_IPV4):
        ip = frame
    else:
        return None, f"unsupported link type {linktype}"
    return _decode_ipv4(index, ts_sec, ts_usec, ip)


def _decode_ipv4(index, ts_sec, ts_usec, ip):
    if len(ip) < 20 or ip[0] >> 4 != 4:
        return None, "not IPv4"
    ihl = (ip[0] & 0x0F) * 4
    total_len, frag, proto = struct.unpack_from(">H2xHxB", ip, 2)
    if ihl < 20 or len(ip) < ihl:
        return None, "bad IPv4 header"
    if frag & 0x3FFF:
        return None, "IPv4 fragment"
    ip = ip[:total_len] if ihl <= total_len <= len(ip) else ip
    src = str(ipaddress.IPv4Address(ip[12:16]))
    dst = str(ipaddress.IPv4Address(ip[16:20]))
    seg = ip[ihl:]
    if proto == 17:
        if len(seg) < 8:
            return None, "short UDP header"
        sport, dport, ulen = struct.unpack_from(">HHH", seg)
        end = ulen if 8 <= ulen <= len(seg) else len(seg)
        return CaptureRecord(index, ts_sec, ts_usec, NetAddr(src, sport), NetAddr(dst, dport),
                             Transport.UDP, bytes(seg[8:end])), None
    if proto == 6:
        if len(seg) < 20:
            return None, "short TCP header"
        sport, dport = struct.unpack_from(">HH", seg)
        doff = (seg[12] >> 4) * 4
        return CaptureRecord(index, ts_sec, ts_usec, NetAddr(src, sport), NetAddr(dst, dport),
                             Transport.TCP, bytes(seg[max(doff, 20):])), None
    return CaptureRecord(index, ts_sec, ts_usec, NetAddr(src, 0), NetAddr(dst, 0),
                         Transport.Other, bytes(seg)), None


def _ipv4_packet(src, dst, proto, segment, ident=0):
    header = struct.pack(">BBHHHBBH4s4s", 0x45, 0, 20 + len(segment), ident & 0xFFFF, 0, 64, proto, 0,
                         ipaddress.IPv4Address(src.ip).packed, ipaddress.IPv4Address(dst.ip).packed)
    csum = _checksum(header)
    return header[:10] + struct.pack(">H", csum) + header[12:] + segment


def _checksum(data):
    total = sum(struct.unpack(f">{len(data) // 2}H", data))
    while total >> 16:
        total = (total & 0xFFFF) + (total >> 16)
    return ~total & 0xFFFF


def build_frame(src, dst, payload, transport=Transport.UDP, ident=0):
    if transport is Transport.UDP:
        seg = struct.pack(">HHHH", src.port, dst.port, 8 + len(payload), 0) + payload
        proto = 17
    else:
        seg = struct.pack(">HHIIBBHHH", src.port, dst.port, 1, 0, 5 << 4, 0x18, 65535, 0, 0) + payload
        proto = 6
    eth = b"\x02\x00\x00\x00\x00\x02" + b"\x02\x00\x00\x00\x00\x01" + b"\x08\x00"
    return eth + _ipv4_packet(src, dst, proto, seg, ident)


def capture_bytes(packets):
    """Serialise an Ethernet capture; packets are (ts_sec, ts_usec, frame_bytes)."""
    out = [struct.pack("<IHHiIII", MAGIC_USEC, 2, 4, 0, 0, 65535, LINK_ETHERNET)]
    for ts_sec, ts_usec, frame in packets:
        out.append(struct.pack("<IIII", ts_sec, ts_usec, len(frame), len(frame)))
        out.append(frame)
    return b"".join(out)


def write_capture(path, packets):
    Path(path).write_bytes(capture_bytes(packets))


# --- discovery messages -------------------------------------------------------

@dataclass(frozen=True)
class TrackerGetPeers:
    la: NetAddr
    lp: int
    peer: PeerId
    share: ShareId


@dataclass(frozen=True)
class PeerEntry:
    a: NetAddr
    la: NetAddr | None
    p: PeerId


@dataclass(frozen=True)
class TrackerPeersResponse:
    ea: NetAddr
    peers: tuple
    share: ShareId
    time: int


@dataclass(frozen=True)
class LanPing:
    port: int
    peer: PeerId
    shares: tuple


@dataclass(frozen=True)
class DiscoveryMessage:
    variant: object
    origin: CaptureRecord

    @property
    def kind(self):
        return type(self.variant).__name__


UTP_HEADER = 20
LAN_MAGIC = b"BSYNC\x00"


class _Reject(Exception):
    pass


def _need(d, key, check, what):
    v = d.get(key)
    if v is None or not check(v):
        raise _Reject(f"field {key.decode()!r}: {what}")
    return v


def _is_bytes(n):
    return lambda v: isinstance(v, bytes) and len(v) in n


def _is_port(v):
    return isinstance(v, int) and 0 <= v <= 0xFFFF


def _share(v):
    return ShareId(bytes(v))


def _build(d):
    m = d.get(b"m")
    if m == b"ping":
        shares = d.get(b"shares")
        if shares is None and isinstance(d.get(b"share"), bytes):
            shares = [d[b"share"]]
        if not isinstance(shares, list) or not all(_is_bytes((20, 32))(s) for s in shares):
            raise _Reject("field 'shares': expected a list of 20/32-byte share IDs")
        return LanPing(
            port=int(_need(d, b"port", _is_port, "expected a port number")),
            peer=PeerId(bytes(_need(d, b"peer", _is_bytes((20,)), "expected a 20-byte peer ID"))),
            shares=tuple(_share(s) for s in shares),
        )
    if m == b"get_peers":
        return TrackerGetPeers(
            la=decode_netaddr(_need(d, b"la", _is_bytes((6,)), "expected 6 address bytes")),
            lp=int(_need(d, b"lp", _is_port, "expected a port number")),
            peer=PeerId(bytes(_need(d, b"peer", _is_bytes((20,)), "expected a 20-byte peer ID"))),
            share=_share(_need(d, b"share", _is_bytes((20, 32)), "expected a 20/32-byte share ID")),
        )
    if m == b"peers":
        raw_peers = _need(d, b"peers", lambda v: isinstance(v, list), "expected a list")
        if not raw_peers:
            raise _Reject("field 'peers': empty peer list (a tracker response always has one)")
        peers = []
        for p in raw_peers:
            if not isinstance(p, dict):
                raise _Reject("field 'peers': entry is not a dict")
            la = p.get(b"la")
            if la is not None and not _is_bytes((6,))(la):
                raise _Reject("peer field 'la': expected 6 address bytes")
            peers.append(PeerEntry(
                a=decode_netaddr(_need(p, b"a", _is_bytes((6,)), "expected 6 address bytes")),
                la=decode_netaddr(la) if la is not None else None,
                p=PeerId(bytes(_need(p, b"p", _is_bytes((20,)), "expected a 20-byte peer ID"))),
            ))
        return TrackerPeersResponse(
            ea=decode_netaddr(_need(d, b"ea", _is_bytes((6,)), "expected 6 address bytes")),
            peers=tuple(peers),
            share=_share(_need(d, b"share", _is_bytes((20, 32)), "expected a 20/32-byte share ID")),
            time=int(_need(d, b"time", lambda v: isinstance(v, int) and v >= 0, "expected epoch seconds")),
        )
    raise _Reject(f"unknown message type {m!r}")


def _try_dict(payload, start, diagnostics, stage):
    try:
        result = bencode.decode(payload, start)
    except bencode.BencodeError as exc:
        if diagnostics is not None:
            diagnostics.append(f"{stage}: bencode error at {exc.offset}: {exc}")
        return None
    if not isinstance(result.value, dict) or b"m" not in result.value:
        if diagnostics is not None:
            diagnostics.append(f"{stage}: no dict with an 'm' key at offset {start}")
        return None
    try:
        return _build(result.value)
    except _Reject as exc:
        if diagnostics is not None:
            diagnostics.append(f"{stage}: {exc}")
        return None


FALLBACK_SCAN_LIMIT = 64


def dissect_udp_payload(payload, diagnostics=None):
    """Recognise a discovery datagram; returns a message variant or None."""
    payload = bytes(payload)
    if payload.startswith(LAN_MAGIC):
        return _try_dict(payload, len(LAN_MAGIC), diagnostics, "lan")
    starts = []
    if payload[:1] == b"\x01" and len(payload) > UTP_HEADER:
        starts.append(UTP_HEADER + (1 if payload[UTP_HEADER:UTP_HEADER + 1] == b"\x00" else 0))
    elif payload[:2] == b"\x00\x01" and len(payload) > UTP_HEADER + 1:
        starts.append(UTP_HEADER + 1)
    for start in starts:
        msg = _try_dict(payload, start, diagnostics, "utp")
        if msg is not None:
            return msg
    # Fallback: any 'd' within the first bytes that opens a message dict.
    pos = payload.find(b"d")
    tried = 0
    while 0 <= pos and tried < FALLBACK_SCAN_LIMIT:
        if pos not in starts:
            msg = _try_dict(payload, pos, None, "scan")
            if msg is not None:
                return msg
            tried += 1
        pos = payload.find(b"d", pos + 1)
    if diagnostics is not None:
        diagnostics.append("no discovery message found")
    return None


def encode_message(msg):
    """Inverse of dissection for the dict part (used by fixtures and tests)."""
    if isinstance(msg, LanPing):
        return {b"m": b"ping", b"peer": msg.peer.raw, b"port": msg.port, b"shares": [s.raw for s in msg.shares]}
    if isinstance(msg, TrackerGetPeers):
        return {b"m": b"get_peers", b"la": encode_netaddr(msg.la), b"lp": msg.lp, b"peer": msg.peer.raw,
                b"share": msg.share.raw}
    if isinstance(msg, TrackerPeersResponse):
        peers = []
        for p in msg.peers:
            entry = {b"a": encode_netaddr(p.a), b"p": p.p.raw}
            if p.la is not None:
                entry[b"la"] = encode_netaddr(p.la)
            peers.append(entry)
        return {b"m": b"peers", b"ea": encode_netaddr(msg.ea), b"peers": peers, b"share": msg.share.raw,
                b"time": msg.time}
    raise TypeError(f"not a discovery message: {msg!r}")


def utp_header(connection_id=0, seq=1):
    """A 20-byte uTP data-packet header (type 0, version 1)."""
    return struct.pack(">BBHIIIHH", 0x01, 0, connection_id, 0, 0, 0x100000, seq, 0)


def build_payload(msg, null_byte=False):
    body = bencode.encode(encode_message(msg))
    if isinstance(msg, LanPing):
        return LAN_MAGIC + body
    return utp_header() + (b"\x00" if null_byte else b"") + body


def message_to_json(variant):
    if isinstance(variant, LanPing):
        return {"type": "LanPing", "port": variant.port, "peer": variant.peer.hex,
                "shares": [s.hex for s in variant.shares]}
    if isinstance(variant, TrackerGetPeers):
        return {"type": "TrackerGetPeers", "la": str(variant.la), "lp": variant.lp, "peer": variant.peer.hex,
                "share": variant.share.hex}
    if isinstance(variant, TrackerPeersResponse):
        return {"type": "TrackerPeersResponse", "ea": str(variant.ea), "share": variant.share.hex,
                "time": variant.time,
                "peers": [{"a": str(p.a), "la": str(p.la) if p.la else None, "p": p.p.hex} for p in variant.peers]}
    raise TypeError(variant)


# --- endpoint registry --------------------------------------------------------

class EndpointClass(enum.Enum):
    Tracker = "Tracker"
    Relay = "Relay"
    LanMulticast = "LanMulticast"
    UpnpSsdp = "UpnpSsdp"
    NatPmp = "NatPmp"
    MobilePushProxy = "MobilePushProxy"
    Unknown = "Unknown"


@dataclass(frozen=True)
class RegistryEntry:
    ip: str | None  # None: the local default gateway, matched on private addresses
    port: int
    cls: EndpointClass
    url: str = ""


def _rows(ips, port, cls, url=""):
    return [RegistryEntry(ip, port, cls, url) for ip in ips]


DEFAULT_REGISTRY = tuple(
    _rows(["52.0.104.40", "52.0.102.230", "52.1.40.103", "52.1.1.135"], 3000, EndpointClass.Tracker,
          "t.usyncapp.com")
    + _rows(["67.215.231.242", "67.215.229.106"], 3000, EndpointClass.Relay, "r.usyncapp.com")
    + _rows(["239.192.0.0"], 3838, EndpointClass.LanMulticast)
    + _rows(["239.255.255.250"], 1900, EndpointClass.UpnpSsdp)
    + _rows([None], 5351, EndpointClass.NatPmp)
    + _rows(["54.235.182.157"], 3000, EndpointClass.MobilePushProxy)
)


class Registry:
    def __init__(self, entries=DEFAULT_REGISTRY):
        self.entries = tuple(entries)
        self._exact = {(e.ip, e.port): e.cls for e in self.entries if e.ip is not None}
        self._gateway = {e.port: e.cls for e in self.entries if e.ip is None}

    def classify(self, addr):
        cls = self._exact.get((addr.ip, addr.port))
        if cls is not None:
            return cls
        if addr.port in self._gateway and ipaddress.IPv4Address(addr.ip).is_private:
            return self._gateway[addr.port]
        return EndpointClass.Unknown

    @classmethod
    def from_json(cls, data):
        rows = json.loads(data) if isinstance(data, (str, bytes)) else data
        if not isinstance(rows, list):
            raise CaptureError("registry file must hold a JSON array")
        entries = []
        for row in rows:
            try:
                ip = row.get("ip")
                if ip in ("", "gateway"):
                    ip = None
                elif ip is not None:
                    ipaddress.IPv4Address(ip)
                klass = row["class"]
                klass = EndpointClass[klass] if klass in EndpointClass.__members__ else EndpointClass(klass)
                entries.append(RegistryEntry(ip, int(row["port"]), klass, row.get("url") or ""))
            except (KeyError, ValueError, TypeError, AttributeError) as exc:
                raise CaptureError(f"bad registry row {row!r}: {exc}") from None
        return cls(entries)

    @classmethod
    def load(cls, path):
        return cls.from_json(Path(path).read_text())


DEFAULT = Registry()


def classify_endpoint(addr, registry=None):
    return (registry or DEFAULT).classify(addr)


@dataclass
class DiscoveryResult:
    messages: list
    stats: dict
    diagnostics: list


def extract_discovery(path, registry=None):
    return discover(read_capture(path), registry)


def discover(cap, registry=None):
    registry = registry or DEFAULT
    messages = []
    diagnostics = []
    by_class = Counter()
    udp = tcp = 0
    for rec in cap.records:
        cls = registry.classify(rec.dst)
        if cls is EndpointClass.Unknown:
            cls = registry.classify(rec.src)
        by_class[cls.value] += 1
        if rec.transport is Transport.TCP:
            tcp += 1
            continue
        if rec.transport is not Transport.UDP:
            continue
        udp += 1
        diag = []
        variant = dissect_udp_payload(rec.payload, diag)
        if variant is None:
            diagnostics.append(f"packet {rec.index}: {diag[-1] if diag else 'undissectable'}")
            continue
        messages.append(DiscoveryMessage(variant, rec))
    stats = {
        "total": cap.total,
        "udp": udp,
        "tcp": tcp,
        "dissected": len(messages),
        "skipped": dict(sorted(cap.skipped.items())),
        "by_class": dict(sorted(by_class.items())),
        "truncated": cap.truncated,
    }
    return DiscoveryResult(messages, stats, diagnostics)
