import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from btsync_forensics import bencode, netdissect as nd
from btsync_forensics.keycodec import NetAddr, PeerId, ShareId
from btsync_forensics.netdissect import EndpointClass, Transport

rng = random.Random(3)
PEER = PeerId(rng.randbytes(20))
SHARE = ShareId(rng.randbytes(20))
SHARE32 = ShareId(rng.randbytes(32))
LOCAL = NetAddr("192.168.220.176", 20566)
LAN = NetAddr("239.192.0.0", 3838)
TRACKER = NetAddr("52.1.1.135", 3000)


def test_lan_ping():
    payload = b"BSYNC\x00" + bencode.encode({"m": "ping", "peer": PEER.raw, "port": 3838, "shares": [SHARE.raw]})
    msg = nd.dissect_udp_payload(payload)
    assert isinstance(msg, nd.LanPing)
    assert msg.port == 3838 and msg.peer == PEER and msg.shares == (SHARE,)


def test_get_peers_after_utp_header():
    body = bencode.encode({"m": "get_peers", "la": LOCAL.pack(), "lp": 20566, "peer": PEER.raw,
                           "share": SHARE32.raw})
    msg = nd.dissect_udp_payload(nd.utp_header() + body)
    assert msg == nd.TrackerGetPeers(LOCAL, 20566, PEER, SHARE32)


@pytest.mark.parametrize("layout", ["after", "before", "none"])
def test_peers_response_null_byte_positions(layout):
    resp = nd.TrackerPeersResponse(NetAddr("60.50.83.170", 49449),
                                   (nd.PeerEntry(NetAddr("60.50.83.170", 49449), LOCAL, PEER),), SHARE, 1428051108)
    body = bencode.encode(nd.encode_message(resp))
    payload = {"after": nd.utp_header() + b"\x00" + body,
               "before": b"\x00" + nd.utp_header() + body,
               "none": nd.utp_header() + body}[layout]
    assert nd.dissect_udp_payload(payload) == resp


def test_empty_peer_list_rejected():
    body = bencode.encode({"m": "peers", "ea": LOCAL.pack(), "peers": [], "share": SHARE.raw, "time": 1})
    diag = []
    assert nd.dissect_udp_payload(nd.utp_header() + body, diag) is None
    assert any("empty peer list" in d for d in diag)


def test_key_order_irrelevant():
    # Hand-written with unsorted keys (peer label after port).
    body = (b"d1:m4:ping4:porti3838e4:peer20:" + PEER.raw + b"6:sharesl20:" + SHARE.raw + b"ee")
    msg = nd.dissect_udp_payload(b"BSYNC\x00" + body)
    assert msg.port == 3838 and msg.peer == PEER


def test_fallback_scan():
    body = bencode.encode({"m": "ping", "peer": PEER.raw, "port": 1, "shares": []})
    assert isinstance(nd.dissect_udp_payload(b"\x07junk" + body), nd.LanPing)


@pytest.mark.parametrize("payload", [b"hello", b"", b"\x01" * 40, b"BSYNC\x00garbage"])
def test_undissectable(payload):
    assert nd.dissect_udp_payload(payload) is None


@given(st.binary(max_size=200))
@settings(max_examples=2000)
def test_dissect_never_crashes(payload):
    nd.dissect_udp_payload(payload, [])
    nd.dissect_udp_payload(b"BSYNC\x00" + payload)
    nd.dissect_udp_payload(nd.utp_header() + payload)


@pytest.mark.parametrize("addr,cls", [
    (NetAddr("52.1.1.135", 3000), EndpointClass.Tracker),
    (NetAddr("52.0.104.40", 3000), EndpointClass.Tracker),
    (NetAddr("67.215.229.106", 3000), EndpointClass.Relay),
    (NetAddr("239.192.0.0", 3838), EndpointClass.LanMulticast),
    (NetAddr("239.255.255.250", 1900), EndpointClass.UpnpSsdp),
    (NetAddr("192.168.1.1", 5351), EndpointClass.NatPmp),
    (NetAddr("54.235.182.157", 3000), EndpointClass.MobilePushProxy),
    (NetAddr("8.8.8.8", 53), EndpointClass.Unknown),
    (NetAddr("8.8.8.8", 5351), EndpointClass.Unknown),
    (NetAddr("52.1.1.135", 3001), EndpointClass.Unknown),
])
def test_classify_endpoint(addr, cls):
    assert nd.classify_endpoint(addr) is cls


def test_registry_override():
    reg = nd.Registry.from_json('[{"ip": "1.2.3.4", "port": 3000, "class": "Tracker", "url": "t.example"}]')
    assert reg.classify(NetAddr("1.2.3.4", 3000)) is EndpointClass.Tracker
    assert reg.classify(TRACKER) is EndpointClass.Unknown
    with pytest.raises(nd.CaptureError):
        nd.Registry.from_json('[{"ip": "x", "port": 1, "class": "Tracker"}]')


def _write(path, frames):
    nd.write_capture(path, [(1428051108 + i, i, f) for i, f in enumerate(frames)])


def test_read_capture_udp(tmp_path):
    frames = [nd.build_frame(LOCAL, LAN, b"p%d" % i) for i in range(3)]
    _write(tmp_path / "c.pcap", frames)
    cap = nd.read_capture(tmp_path / "c.pcap")
    assert len(cap.records) == 3
    rec = cap.records[1]
    assert rec.payload == b"p1" and rec.src == LOCAL and rec.dst == LAN
    assert rec.transport is Transport.UDP and rec.ts_sec == 1428051109 and rec.ts_usec == 1


def test_empty_and_bad_magic(tmp_path):
    _write(tmp_path / "e.pcap", [])
    assert nd.read_capture(tmp_path / "e.pcap").records == []
    (tmp_path / "bad.pcap").write_bytes(b"\x00" * 40)
    with pytest.raises(nd.BadMagic):
        nd.read_capture(tmp_path / "bad.pcap")


def test_big_endian_and_truncated(tmp_path):
    import struct
    frame = nd.build_frame(LOCAL, LAN, b"x")
    data = struct.pack(">IHHiIII", nd.MAGIC_USEC, 2, 4, 0, 0, 65535, 1)
    data += struct.pack(">IIII", 5, 6, len(frame), len(frame)) + frame
    cap = nd.parse_capture(data + b"\x00\x00\x00")
    assert len(cap.records) == 1 and cap.truncated
    with pytest.raises(nd.TruncatedRecord) as info:
        nd.parse_capture(data + b"\x00\x00\x00", strict=True)
    assert info.value.records_read == 1


def test_extract_discovery(tmp_path):
    ping = nd.LanPing(3838, PEER, (SHARE,))
    gp = nd.TrackerGetPeers(LOCAL, 20566, PEER, SHARE)
    frames = [
        nd.build_frame(LOCAL, LAN, nd.build_payload(ping)),
        nd.build_frame(NetAddr("192.168.220.143", 20566), LAN, nd.build_payload(ping)),
        nd.build_frame(LOCAL, TRACKER, nd.build_payload(gp)),
        nd.build_frame(LOCAL, NetAddr("10.0.0.9", 9999), b"noise"),
        nd.build_frame(LOCAL, TRACKER, b"tcp", Transport.TCP),
    ]
    _write(tmp_path / "d.pcap", frames)
    result = nd.extract_discovery(tmp_path / "d.pcap")
    assert [m.kind for m in result.messages] == ["LanPing", "LanPing", "TrackerGetPeers"]
    s = result.stats
    assert (s["total"], s["udp"], s["tcp"], s["dissected"]) == (5, 4, 1, 3)
    assert s["total"] >= s["udp"] >= s["dissected"]
    assert s["by_class"] == {"LanMulticast": 2, "Tracker": 2, "Unknown": 1}
    assert result.messages[2].origin.index == 2


def test_tcp_only_capture(tmp_path):
    _write(tmp_path / "t.pcap", [nd.build_frame(LOCAL, TRACKER, b"x", Transport.TCP)])
    result = nd.extract_discovery(tmp_path / "t.pcap")
    assert result.messages == [] and result.stats["tcp"] == 1
