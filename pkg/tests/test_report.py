import json

import pytest

from btsync_forensics import correlate as C, fixtures, report
from btsync_forensics.correlate import Provenance, SourceKind


@pytest.fixture(scope="module")
def case(tmp_path_factory):
    out = tmp_path_factory.mktemp("case")
    manifest = fixtures.gen_case(7, "TwoPeerSync", out)
    return out, manifest, C.correlate_case(out)


def _ids(items, key):
    return sorted(i[key] for i in items if key in i)


def test_empty_graph_six_no_evidence_sections():
    rep = report.build_report(C.EvidenceGraph().snapshot())
    assert rep["report_version"] == report.REPORT_VERSION
    assert len(rep["sections"]) == 6
    assert all(s["status"] == report.NO_EVIDENCE and s["items"] == [] for s in rep["sections"].values())
    text = report.render_text(C.EvidenceGraph().snapshot())
    assert text.count(f"({report.NO_EVIDENCE})") == 6


def test_report_facts_match_manifest(case):
    _, manifest, snap = case
    sec = report.build_report(snap)["sections"]
    assert _ids(sec["devices"]["items"], "device") == sorted(d["id"] for d in manifest["devices"])
    assert _ids(sec["devices"]["items"], "identity") == sorted(i["id"] for i in manifest["identities"])
    assert _ids(sec["folders"]["items"], "folder") == sorted(f["id"] for f in manifest["folders"])
    assert _ids(sec["files"]["items"], "file") == sorted(f["id"] for f in manifest["files"])
    shares = sorted(f"share:{f['share_id']}" for f in manifest["folders"])
    assert _ids(sec["peers_per_share"]["items"], "share") == shares
    local = [d for d in manifest["devices"] if d["local"]][0]
    assert [i["device"] for i in sec["installation"]["items"]] == [local["id"]]
    by_id = {i["device"]: i for i in sec["devices"]["items"] if "device" in i}
    for d in manifest["devices"]:
        item = by_id[d["id"]]
        assert [v["value"] for v in item["name"]] == [d["name"]]
        assert [v["value"] for v in item["peer_id"]] == [d["peer_id"]]
    reqs = sec["access_requests"]["items"]
    assert len(reqs) == len(manifest["access_requests"])
    for r, m in zip(reqs, manifest["access_requests"]):
        assert (r["identity"], r["folder"]) == (m["identity"], m["folder"])
        assert r["time"][0]["value"] == m["time"]
        assert r["label"] == ["ReadWrite"] and r["label_basis"] == "hypothesized"


def test_every_fact_cites_provenance(case):
    _, _, snap = case
    rep = report.build_report(snap)
    for sec in rep["sections"].values():
        for item in sec["items"]:
            assert item["prov"], item
            for v in item.values():
                if isinstance(v, list):
                    for x in v:
                        if isinstance(x, dict) and "value" in x:
                            assert x["prov"]


def test_every_node_reachable_from_report(case):
    _, _, snap = case
    blob = report.render_json(snap).decode()
    for n in snap["nodes"]:
        assert json.dumps(n["id"]) in blob, n["id"]


def test_render_json_deterministic(case):
    out, _, snap = case
    assert report.render_json(snap) == report.render_json(C.correlate_case(out))
    assert report.render_text(snap, 60) == report.render_text(C.correlate_case(out), 60)


def test_local_times_unanchored_and_offset(case):
    _, _, snap = case
    plain = report.build_report(snap)["timeline"]
    local = [ev for ev in plain if "(local, unanchored)" in ev["time"]]
    assert local and all("utc_assuming_offset" not in ev for ev in local)
    utc = [ev for ev in plain if ev["time"].endswith("Z")]
    assert utc
    shifted = report.build_report(snap, 120)["timeline"]
    ev = next(e for e in shifted if "utc_assuming_offset" in e)
    naive = ev["time"].split(" (")[0]
    assert ev["utc_assuming_offset"][11:13] == f"{(int(naive[11:13]) - 2) % 24:02d}"


def test_conflict_listed_with_both_provenances():
    g = C.EvidenceGraph()
    p1 = Provenance(SourceKind.SettingsDat, "dats/settings.dat", 10)
    p2 = Provenance(SourceKind.SettingsDat, "old/settings.dat", 20)
    g.device(p1, pid_hex="AA" * 20, local=True, install_time=100)
    g.device(p2, pid_hex="AA" * 20, local=True, install_time=200)
    rep = report.build_report(g.snapshot())
    conflicts = [f for f in rep["findings"] if f["kind"] == "Conflict"]
    assert len(conflicts) == 1
    assert {p["path"] for p in conflicts[0]["prov"]} == {"dats/settings.dat", "old/settings.dat"}
    text = report.render_text(g.snapshot())
    assert "[Conflict]" in text and "old/settings.dat@20" in text and "dats/settings.dat@10" in text


@pytest.mark.parametrize("text,minutes", [("+02:00", 120), ("-05:30", -330), ("+00:00", 0), ("+5", 300)])
def test_parse_tz_offset(text, minutes):
    assert report.parse_tz_offset(text) == minutes


@pytest.mark.parametrize("text", ["+25:00", "02:99", "abc", "+1:2x"])
def test_parse_tz_offset_rejects(text):
    with pytest.raises(ValueError):
        report.parse_tz_offset(text)
