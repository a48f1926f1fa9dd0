import json
import os
import stat
import subprocess
import sys

import pytest

from btsync_forensics import bencode, fixtures
from btsync_forensics.cli import main

LOGGED_HEX = "10DEC8109E524439D9454ABE2BB1475BF7D5A2B5"


def run(capsysbinary, *argv):
    code = main(list(argv))
    out, err = capsysbinary.readouterr()
    return code, out, err.decode()


@pytest.fixture(scope="module")
def case(tmp_path_factory):
    out = tmp_path_factory.mktemp("case")
    manifest = fixtures.gen_case(3, "TwoPeerSync", out)
    return out, manifest


def test_parse_link(capsysbinary):
    code, out, _ = run(capsysbinary, "parse-link",
                       "https://link.getsync.com/#f=Docs&sz=1E2&s=CDPMQEE6KJCDTWKFJK7CXMKHLP35LIVV&e=1428051108")
    assert code == 0
    data = json.loads(out)
    assert data["folder_id"] == LOGGED_HEX and data["folder_name"] == "Docs" and data["expiry"] == 1428051108


def test_parse_link_error(capsysbinary):
    code, _, err = run(capsysbinary, "parse-link", "https://link.getsync.com/")
    assert code == 1 and "error:" in err


def test_parse_dat_missing_names_path(capsysbinary, tmp_path):
    missing = tmp_path / "missing.dat"
    code, out, err = run(capsysbinary, "parse-dat", str(missing))
    assert code == 1 and out == b"" and str(missing) in err


def test_parse_dat_malformed_names_path_and_offset(capsysbinary, tmp_path):
    bad = tmp_path / "settings.dat"
    bad.write_bytes(b"d3:fooi1e")
    code, _, err = run(capsysbinary, "parse-dat", str(bad))
    assert code == 1 and str(bad) in err and "offset 9" in err


def test_parse_dat_settings_and_raw(capsysbinary, tmp_path):
    path = tmp_path / "settings.dat"
    path.write_bytes(bencode.encode({"peer_id": bytes.fromhex(LOGGED_HEX), "install_time": 1428000000}))
    code, out, _ = run(capsysbinary, "parse-dat", str(path))
    data = json.loads(out)
    assert code == 0 and data["kind"] == "settings"
    assert data["record"]["peer_id"] == LOGGED_HEX and data["record"]["install_time"] == 1428000000
    code, out, _ = run(capsysbinary, "parse-dat", "--raw", str(path))
    assert json.loads(out)["value"]["peer_id"] == {"hex": LOGGED_HEX.lower()}


def test_parse_dat_id_file(capsysbinary, tmp_path):
    path = tmp_path / "ID"
    path.write_bytes(bytes(range(20)))
    code, out, _ = run(capsysbinary, "parse-dat", "--kind", "id", str(path))
    assert code == 0 and json.loads(out)["share_id"] == bytes(range(20)).hex().upper()


def test_key_commands(capsysbinary):
    code, out, _ = run(capsysbinary, "key", "classify", "A" * 33)
    data = json.loads(out)
    assert code == 0 and data["permission"] == "ReadWrite"
    assert data["share_id"] == "E04976C6E1CE44AA1840B07B57021C158A11EAFC"
    code, out, _ = run(capsysbinary, "key", "peer-id", LOGGED_HEX)
    assert json.loads(out)["b32"] == "CDPMQEE6KJCDTWKFJK7CXMKHLP35LIVV"
    code, _, _ = run(capsysbinary, "key", "classify", "Z" * 33)
    assert code == 1


@pytest.mark.parametrize("argv", [[], ["bogus"], ["parse-dat"], ["report", "g.json", "--format", "pdf"],
                                  ["key"], ["gen-fixtures", "--seed", "x", "--profile", "Minimal", "--out", "o"]])
def test_usage_errors(capsysbinary, argv):
    code, _, _ = run(capsysbinary, *argv)
    assert code == 2


def test_bad_tz_offset_is_usage_error(capsysbinary, case):
    code, _, err = run(capsysbinary, "correlate", "--case", str(case[0]), "--tz-offset", "+99:00")
    assert code == 2 and "+HH:MM" in err


def test_unknown_log_kind_is_usage_error(capsysbinary, case):
    code, _, _ = run(capsysbinary, "parse-log", str(case[0] / "logs" / "sync.log"), "--only", "Nope")
    assert code == 2


def test_parse_log_only(capsysbinary, case):
    code, out, _ = run(capsysbinary, "parse-log", str(case[0] / "logs" / "sync.log"), "--only", "IdMessage")
    data = json.loads(out)
    assert code == 0 and data["events"] and {e["kind"] for e in data["events"]} == {"IdMessage"}


def test_scan_and_dissect(capsysbinary, case):
    root, manifest = case
    code, out, _ = run(capsysbinary, "scan", str(root / "tree"))
    shares = {f["share_id"] for f in json.loads(out)["folders"] if f["share_id"]}
    assert code == 0 and shares == {f["share_id"] for f in manifest["folders"]}
    code, out, _ = run(capsysbinary, "dissect", str(root / "captures" / "discovery.pcap"))
    data = json.loads(out)
    assert code == 0 and data["stats"]["dissected"] == len(data["messages"]) > 0


def test_dissect_registry_override(capsysbinary, case, tmp_path):
    reg = tmp_path / "reg.json"
    reg.write_text(json.dumps([{"ip": "10.9.9.9", "port": 1, "class": "Relay"}]))
    code, out, _ = run(capsysbinary, "--registry", str(reg), "dissect", str(case[0] / "captures" / "discovery.pcap"))
    assert code == 0
    assert all(m["dst_class"] != "Tracker" for m in json.loads(out)["messages"])


def test_correlate_report_round_trip(capsysbinary, case, tmp_path):
    root, manifest = case
    graph = tmp_path / "graph.json"
    code, out, _ = run(capsysbinary, "correlate", "--case", str(root), "--output", str(graph))
    assert code == 0 and out == b""
    data = json.loads(graph.read_text())
    edges = {tuple(e) for e in manifest["expected_edges"]}
    assert {(e["kind"], e["src"], e["dst"]) for e in data["edges"]} == edges
    code, out, _ = run(capsysbinary, "report", str(graph))
    rep = json.loads(out)
    devices = {i["device"] for i in rep["sections"]["devices"]["items"] if "device" in i}
    assert code == 0 and devices == {d["id"] for d in manifest["devices"]}
    code, out, _ = run(capsysbinary, "report", str(graph), "--format", "text", "--tz-offset", "+01:00")
    assert code == 0 and b"1. Application versions" in out and b"(local, unanchored)" in out


def test_report_rejects_non_graph(capsysbinary, tmp_path):
    bad = tmp_path / "g.json"
    bad.write_text("[1, 2]")
    code, _, err = run(capsysbinary, "report", str(bad))
    assert code == 1 and str(bad) in err


def test_deterministic_output(capsysbinary, case):
    first = run(capsysbinary, "correlate", "--case", str(case[0]))[1]
    second = run(capsysbinary, "correlate", "--case", str(case[0]))[1]
    assert first == second and first


def test_gen_fixtures(capsysbinary, tmp_path):
    code, out, _ = run(capsysbinary, "gen-fixtures", "--seed", "2", "--profile", "TwoPeerSync",
                       "--out", str(tmp_path / "c"))
    assert code == 0 and json.loads(out)["devices"] == 2
    assert (tmp_path / "c" / "manifest.json").is_file()


def test_read_only_inputs(capsysbinary, tmp_path):
    root = tmp_path / "case"
    fixtures.gen_case(6, "DeletionCase", root)
    before = fixtures.tree_hash(root)
    modes = {}
    for dirpath, dirnames, filenames in os.walk(root):
        for name in dirnames + filenames:
            p = os.path.join(dirpath, name)
            modes[p] = os.stat(p).st_mode
    try:
        for p, mode in modes.items():
            os.chmod(p, mode & ~(stat.S_IWUSR | stat.S_IWGRP | stat.S_IWOTH))
        os.chmod(root, os.stat(root).st_mode & ~stat.S_IWUSR)
        graph = tmp_path / "graph.json"
        assert run(capsysbinary, "correlate", "--case", str(root), "-o", str(graph))[0] == 0
        assert run(capsysbinary, "report", str(graph), "-o", str(tmp_path / "r.json"))[0] == 0
        assert run(capsysbinary, "scan", str(root / "tree"))[0] == 0
        for dat in sorted((root / "dats").iterdir()):
            assert run(capsysbinary, "parse-dat", str(dat))[0] == 0
    finally:
        os.chmod(root, 0o755)
        for p, mode in modes.items():
            os.chmod(p, mode)
    assert fixtures.tree_hash(root) == before


def test_help_lists_methodology():
    proc = subprocess.run([sys.executable, "-m", "btsync_forensics", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for cmd in ("parse-dat", "parse-log", "parse-link", "key", "scan", "dissect", "correlate", "report",
                "gen-fixtures"):
        assert cmd in proc.stdout
    assert "methodology mapping" in proc.stdout
