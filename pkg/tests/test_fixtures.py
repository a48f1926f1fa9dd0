import pytest

from btsync_forensics import fixtures, netdissect
from btsync_forensics.fixtures import Profile


def _files(root):
    return {p.relative_to(root).as_posix(): (p.read_bytes(), p.stat().st_mtime_ns)
            for p in sorted(root.rglob("*")) if p.is_file()}


def test_deterministic(tmp_path):
    a = fixtures.gen_case(1, "Minimal", tmp_path / "a")
    b = fixtures.gen_case(1, Profile.Minimal, tmp_path / "b")
    assert a == b
    assert _files(tmp_path / "a") == _files(tmp_path / "b")
    c = fixtures.gen_case(2, "Minimal", tmp_path / "c")
    assert c != a


def test_two_peer_sync(tmp_path):
    m = fixtures.gen_case(2, "TwoPeerSync", tmp_path)
    assert len(m["devices"]) == 2
    assert len({f["share_id"] for f in m["folders"]}) == 1
    assert fixtures.check_peer_ids(m) and fixtures.check_share_ids(m)


def test_multi_share_lan_ping(tmp_path):
    fixtures.gen_case(3, "MultiShareLan", tmp_path)
    result = netdissect.extract_discovery(tmp_path / "captures" / "discovery.pcap")
    pings = [m.variant for m in result.messages if isinstance(m.variant, netdissect.LanPing)]
    assert pings and max(len(p.shares) for p in pings) >= 2


def test_deletion_case_uses_archive(tmp_path):
    m = fixtures.gen_case(5, "DeletionCase", tmp_path)
    assert any(f["deleted"] for f in m["files"])
    archived = [p for p in (tmp_path / "tree").rglob("*") if p.is_file() and ".sync/Archive" in p.as_posix()]
    assert archived


@pytest.mark.parametrize("profile", [p.value for p in Profile])
def test_manifest_cross_references(tmp_path, profile):
    m = fixtures.gen_case(9, profile, tmp_path)
    assert fixtures.check_peer_ids(m) and fixtures.check_share_ids(m)
    node_ids = ({d["id"] for d in m["devices"]} | {i["id"] for i in m["identities"]}
                | {f["id"] for f in m["folders"]} | {f["id"] for f in m["files"]})
    for kind, src, dst in m["expected_edges"]:
        if not src.startswith(("share:", "endpoint:")):
            assert src in node_ids or src.startswith("device:"), (kind, src)
    times = [t for t, _ in m["expected_timeline"]]
    assert times == sorted(times)


def test_unknown_profile(tmp_path):
    with pytest.raises(ValueError):
        fixtures.gen_case(1, "Nope", tmp_path)


def test_io_failure(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(fixtures.IoFailure):
        fixtures.gen_case(1, "Minimal", blocker / "case")


def test_tree_hash_sensitive(tmp_path):
    fixtures.gen_case(1, "Minimal", tmp_path)
    h = fixtures.tree_hash(tmp_path)
    assert fixtures.tree_hash(tmp_path) == h
    target = next(p for p in (tmp_path / "dats").iterdir())
    data = target.read_bytes()
    target.write_bytes(data + b"x")
    assert fixtures.tree_hash(tmp_path) != h
