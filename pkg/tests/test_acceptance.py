"""Acceptance gate: one test per criterion, each recording a PASS/FAIL line.

Expected values come from the reference implementations in oracles.py or
are frozen constants computed with them before the package existed.
"""
import ipaddress
import random
import time

import oracles
from conftest import record_acceptance
from log_lines import GOLDEN

from btsync_forensics import bencode, correlate, fixtures, keycodec, logparse, netdissect as nd, report
from btsync_forensics.cli import main as cli_main
from btsync_forensics.keycodec import NetAddr, PeerId, ShareId
from btsync_forensics.logparse import Kind
from btsync_forensics.netdissect import EndpointClass

LOGGED_HEX = "10DEC8109E524439D9454ABE2BB1475BF7D5A2B5"
# Frozen from oracles.base32_bits before the codec was written.
LOGGED_B32 = "CDPMQEE6KJCDTWKFJK7CXMKHLP35LIVV"
# Frozen from oracles.sha1(b"A" * 33).
SHA1_A33 = "E04976C6E1CE44AA1840B07B57021C158A11EAFC"


def test_ac1_base32_golden():
    raw = bytes.fromhex(LOGGED_HEX)
    keycodec.base32_encode(b"warm-up")
    t0 = time.perf_counter()
    got = keycodec.base32_encode(raw)
    elapsed = time.perf_counter() - t0
    ok = (got == LOGGED_B32 == oracles.base32_bits(raw) and len(got) == 32 and got[:8] == "CDPMQEE6"
          and keycodec.base32_decode(got) == raw and elapsed < 1e-3)
    record_acceptance(1, "base32 golden", ok, f"{got}, {elapsed * 1e6:.0f} us")
    assert ok


def test_ac2_log_grammar_goldens():
    t0 = time.perf_counter()
    failures = []
    for i, (line, kind, fields) in enumerate(GOLDEN):
        ev = logparse.parse_line(line)
        if ev.kind is not Kind(kind) or any(ev.fields.get(k) != v for k, v in fields.items()):
            failures.append(i)
    elapsed = time.perf_counter() - t0
    ok = len(GOLDEN) >= 20 and not failures and elapsed < 1.0
    record_acceptance(2, "log grammar goldens", ok,
                      f"{len(GOLDEN) - len(failures)}/{len(GOLDEN)} lines, {elapsed * 1e3:.1f} ms")
    assert ok, failures


def _addr(rng, private=False):
    ip = f"192.168.{rng.randrange(256)}.{rng.randrange(1, 255)}" if private else \
        ".".join(str(rng.randrange(1, 224)) for _ in range(4))
    return NetAddr(ip, rng.randrange(1, 65536))


def _share(rng):
    return ShareId(rng.randbytes(rng.choice((20, 32))))


def _messages(rng, n=100):
    out = []
    for _ in range(n):
        out.append(nd.TrackerGetPeers(_addr(rng, True), rng.randrange(1, 65536), PeerId(rng.randbytes(20)),
                                      _share(rng)))
    for _ in range(n):
        peers = tuple(nd.PeerEntry(_addr(rng), _addr(rng, True) if rng.random() < 0.8 else None,
                                   PeerId(rng.randbytes(20))) for _ in range(rng.randrange(1, 6)))
        out.append(nd.TrackerPeersResponse(_addr(rng), peers, _share(rng), rng.randrange(0, 2 ** 31)))
    for _ in range(n):
        shares = tuple(ShareId(rng.randbytes(20)) for _ in range(rng.randrange(2, 7)))
        out.append(nd.LanPing(rng.randrange(1, 65536), PeerId(rng.randbytes(20)), shares))
    return out


def test_ac3_packet_round_trip():
    rng = random.Random(2024)
    t0 = time.perf_counter()
    msgs = _messages(rng)
    direct = sum(nd.dissect_udp_payload(nd.build_payload(m, null_byte=rng.random() < 0.5)) == m for m in msgs)
    frames = [(1428051108 + i, i, nd.build_frame(_addr(rng, True), NetAddr("52.1.1.135", 3000),
                                                 nd.build_payload(m), ident=i)) for i, m in enumerate(msgs)]
    result = nd.discover(nd.parse_capture(nd.capture_bytes(frames)))
    via_capture = [m.variant for m in result.messages] == msgs
    elapsed = time.perf_counter() - t0
    multi = all(len(m.shares) >= 2 for m in msgs if isinstance(m, nd.LanPing))
    nonempty = all(m.peers for m in msgs if isinstance(m, nd.TrackerPeersResponse))
    ok = direct == len(msgs) == 300 and via_capture and multi and nonempty and elapsed < 5
    record_acceptance(3, "packet round trip", ok, f"{direct}/300 direct, capture={via_capture}, {elapsed:.2f} s")
    assert ok


def test_ac4_endpoint_classification():
    table = [
        (["52.0.104.40", "52.0.102.230", "52.1.40.103", "52.1.1.135"], 3000, EndpointClass.Tracker),
        (["67.215.231.242", "67.215.229.106"], 3000, EndpointClass.Relay),
        (["239.192.0.0"], 3838, EndpointClass.LanMulticast),
        (["239.255.255.250"], 1900, EndpointClass.UpnpSsdp),
        (["192.168.1.1", "10.0.0.1", "172.16.0.1"], 5351, EndpointClass.NatPmp),
        (["54.235.182.157"], 3000, EndpointClass.MobilePushProxy),
    ]
    rows = [(ip, port, cls) for ips, port, cls in table for ip in ips]
    row_ok = sum(nd.classify_endpoint(NetAddr(ip, port)) is cls for ip, port, cls in rows)
    known = {(ip, port) for ip, port, _ in rows}
    rng = random.Random(10)
    tested = unknown = 0
    while tested < 1000:
        a = NetAddr(str(ipaddress.IPv4Address(rng.getrandbits(32))), rng.randrange(1, 65536))
        if (a.ip, a.port) in known or (a.port == 5351 and ipaddress.IPv4Address(a.ip).is_private):
            continue
        tested += 1
        unknown += nd.classify_endpoint(a) is EndpointClass.Unknown
    ok = row_ok == len(rows) and unknown == 1000
    record_acceptance(4, "endpoint classification", ok, f"{row_ok}/{len(rows)} rows, {unknown}/1000 Unknown")
    assert ok


def _random_value(rng, depth=0):
    r = rng.random()
    if depth > 4 or r < 0.35:
        return rng.randbytes(rng.randrange(0, 24))
    if r < 0.6:
        return rng.randrange(bencode.INT64_MIN, bencode.INT64_MAX + 1) if rng.random() < 0.3 \
            else rng.randrange(-1000, 1000)
    if r < 0.8:
        return [_random_value(rng, depth + 1) for _ in range(rng.randrange(0, 5))]
    return {rng.randbytes(rng.randrange(0, 8)): _random_value(rng, depth + 1) for _ in range(rng.randrange(0, 5))}


def _fuzz_inputs(rng, seeds, n):
    """Random bytes, plus mutations of valid encodings so the fuzz reaches deep paths."""
    for i in range(n):
        if i % 2:
            yield rng.randbytes(rng.randrange(0, 64))
            continue
        data = bytearray(rng.choice(seeds))
        for _ in range(rng.randrange(1, 4)):
            op = rng.random()
            pos = rng.randrange(len(data) + 1)
            if op < 0.4 and data:
                data[min(pos, len(data) - 1)] = rng.randrange(256)
            elif op < 0.7:
                data[pos:pos] = rng.choice((b"e", b"d", b"l", b"i", b":", b"9", b"-", b"0", bytes([rng.randrange(256)])))
            else:
                del data[pos:pos + rng.randrange(1, 8)]
        yield bytes(data)


def test_ac5_bencode_properties():
    rng = random.Random(5)
    t0 = time.perf_counter()
    round_trips = 0
    for _ in range(10_000):
        v = _random_value(rng)
        enc = bencode.encode(v)
        if enc == oracles.bencode_ref(v) and bencode.decode(enc).value == v:
            round_trips += 1
    msgs = _messages(random.Random(6), 20)
    seeds = ([oracles.bencode_ref(_random_value(rng)) for _ in range(200)]
             + [nd.build_payload(m) for m in msgs] + [nd.build_payload(m, null_byte=True) for m in msgs])
    crashes = []
    fuzzed = 0
    # The default backend sees every input; the pure-Python one every fifth.
    backends = ["python"] if bencode.BACKEND == "python" else [bencode.BACKEND, "python"]
    for data in _fuzz_inputs(rng, seeds, 1_000_000):
        fuzzed += 1
        for backend in backends[:1] if fuzzed % 5 else backends:
            try:
                bencode.decode_with(backend, data)
            except bencode.BencodeError:
                pass
            except Exception as exc:  # noqa: BLE001 - any other exception is a crash
                crashes.append((f"decode/{backend}", data, exc))
        try:
            nd.dissect_udp_payload(data)
        except Exception as exc:  # noqa: BLE001
            crashes.append(("dissect", data, exc))
    elapsed = time.perf_counter() - t0
    ok = round_trips == 10_000 and fuzzed >= 1_000_000 and not crashes
    record_acceptance(5, "bencode properties", ok,
                      f"{round_trips}/10000 round trips, {fuzzed} fuzz inputs, {len(crashes)} crashes, "
                      f"{elapsed:.1f} s, backend={bencode.BACKEND}")
    assert ok, crashes[:3]


def test_ac6_key_taxonomy():
    rng = random.Random(6)
    alphabet = oracles.ALPHABET
    expected = {"A": "ReadWrite", "B": "ReadOnly", "C": "TimeLimited", "D": "ReadWrite", "E": "ReadOnly",
                "F": "EncryptedNode", "R": "LegacyReadOnly"}
    types_ok = 0
    for letter, perm in expected.items():
        key = letter + "".join(rng.choice(alphabet) for _ in range(32))
        mk = keycodec.classify_key(key)
        types_ok += mk.key_type == letter and mk.permission.value == perm and mk.extra is None
    long_key = "B" + "".join(rng.choice(alphabet) for _ in range(64))
    mk = keycodec.classify_key(long_key)
    long_ok = len(long_key) == 65 and mk.extra == long_key[33:] and len(mk.extra) == 32
    sha_ok = 0
    for _ in range(50):
        key = rng.choice("ABCDEFR") + "".join(rng.choice(alphabet) for _ in range(rng.choice((32, 64))))
        sid = keycodec.share_id_of_key(key)
        sha_ok += len(sid.raw) == 20 and sid.raw == oracles.sha1(key.encode())
    frozen = keycodec.share_id_of_key("A" * 33).hex == SHA1_A33
    ok = types_ok == 7 and long_ok and sha_ok == 50 and frozen
    record_acceptance(6, "key taxonomy", ok, f"{types_ok}/7 types, 65-symbol={long_ok}, {sha_ok}/50 SHA-1")
    assert ok


def test_ac7_end_to_end_methodology(tmp_path):
    t0 = time.perf_counter()
    failures = []
    runs = 0
    for profile in fixtures.Profile:
        for seed in range(10):
            out = tmp_path / f"{profile.value}-{seed}"
            manifest = fixtures.gen_case(seed, profile, out)
            snap = correlate.correlate_case(out)
            rep = report.build_report(correlate.GraphSnapshot.from_json(snap.to_json()))
            runs += 1
            expected = {tuple(e) for e in manifest["expected_edges"]}
            got = snap.edge_set()
            if expected - got:
                failures.append((profile.value, seed, "missing", sorted(expected - got)))
            if got - expected:
                failures.append((profile.value, seed, "unexplained", sorted(got - expected)))
            if fixtures.snapshot_timeline_groups(snap["timeline"]) != manifest["expected_timeline"]:
                failures.append((profile.value, seed, "timeline"))
            for node in snap["nodes"]:
                if node["kind"] == "device" and "peer_id_b32" in node["attrs"]:
                    hexes = [a["value"] for a in node["attrs"]["peer_id"]]
                    b32s = [a["value"] for a in node["attrs"]["peer_id_b32"]]
                    if [keycodec.base32_encode(bytes.fromhex(h)) for h in hexes] != b32s:
                        failures.append((profile.value, seed, "b32", node["id"]))
            if any(f["kind"] == "Conflict" for f in snap["findings"]):
                failures.append((profile.value, seed, "conflict"))
            devices = {i["device"] for i in rep["sections"]["devices"]["items"] if "device" in i}
            if devices != {d["id"] for d in manifest["devices"]}:
                failures.append((profile.value, seed, "report devices"))
            files = {i["file"] for i in rep["sections"]["files"]["items"]}
            if files != {f["id"] for f in manifest["files"]}:
                failures.append((profile.value, seed, "report files"))
    elapsed = time.perf_counter() - t0
    ok = runs == 40 and not failures and elapsed < 30
    record_acceptance(7, "end-to-end methodology", ok, f"{runs - len({f[:2] for f in failures})}/{runs} cases, "
                                                       f"{elapsed:.1f} s")
    assert ok, failures[:5]


def test_ac8_evidence_immutability(tmp_path, capsysbinary):
    case = tmp_path / "case"
    fixtures.gen_case(8, "DeletionCase", case)
    before = fixtures.tree_hash(case)
    codes = [cli_main(["correlate", "--case", str(case), "-o", str(tmp_path / "graph.json")]),
             cli_main(["report", str(tmp_path / "graph.json"), "--format", "text", "-o", str(tmp_path / "r.txt")]),
             cli_main(["scan", str(case / "tree")]),
             cli_main(["parse-log", str(case / "logs" / "sync.log")]),
             cli_main(["dissect", str(case / "captures" / "discovery.pcap")])]
    codes += [cli_main(["parse-dat", str(p)]) for p in sorted((case / "dats").iterdir())]
    capsysbinary.readouterr()
    after = fixtures.tree_hash(case)
    ok = after == before and set(codes) == {0}
    record_acceptance(8, "evidence immutability", ok, f"hash {before[:12]} -> {after[:12]}, exit codes {codes}")
    assert ok


def test_acceptance_constants_match_oracles():
    assert oracles.base32_bits(bytes.fromhex(LOGGED_HEX)) == LOGGED_B32
    assert oracles.sha1(b"A" * 33).hex().upper() == SHA1_A33
