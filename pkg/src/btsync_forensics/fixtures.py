"""Synthetic, internally consistent cases with a ground-truth manifest.

A case directory holds dats/, logs/, tree/ and captures/ plus manifest.json.
The manifest lists every entity the generator created, every link it
expects an examiner to establish, and every timestamped fact it wrote.
"""
import enum
import hashlib
import json
import os
import random
from collections import Counter, defaultdict
from datetime import datetime, timezone
from pathlib import Path

from . import bencode, netdissect
from .errors import ForensicError
from .keycodec import ALPHABET, NetAddr, PeerId, base32_encode, share_id_of_key


class Profile(enum.Enum):
    Minimal = "Minimal"
    TwoPeerSync = "TwoPeerSync"
    DeletionCase = "DeletionCase"
    MultiShareLan = "MultiShareLan"


class IoFailure(ForensicError):
    pass


TRACKER = NetAddr("52.1.1.135", 3000)
LAN_GROUP = NetAddr("239.192.0.0", 3838)


def _log_time(t):
    return datetime.fromtimestamp(t, tz=timezone.utc).strftime("[%Y-%m-%d %H:%M:%S]")


class _Case:
    def __init__(self, seed, profile, out):
        self.rng = random.Random(f"{profile.value}:{seed}")
        self.seed = seed
        self.profile = profile
        self.out = Path(out)
        self.edges = set()
        self.events = []
        self.clock = 1428049110 + self.rng.randrange(0, 10 ** 7)
        # Files without a meaningful time get this one, so reruns are byte- and stat-identical.
        self.default_mtime = self.clock

    def tick(self, lo=5, hi=600):
        self.clock += self.rng.randrange(lo, hi)
        return self.clock

    def expect(self, kind, src, dst):
        self.edges.add((kind, src, dst))

    def fact(self, t, kind):
        self.events.append((t, kind))

    def write(self, rel, data, mtime=None):
        path = self.out / rel
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_bytes(data)
            mtime = self.default_mtime if mtime is None else mtime
            os.utime(path, (mtime, mtime))
        except OSError as exc:
            raise IoFailure(f"IoFailure: cannot write {path}: {exc.strerror}") from None

    def mkdir(self, rel):
        try:
            (self.out / rel).mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise IoFailure(f"IoFailure: cannot create {rel}: {exc.strerror}") from None

    # -- entity construction ---------------------------------------------------

    def name(self, prefix, n=7):
        return prefix + "".join(self.rng.choice("ABCDEFGHJKLMNPQRSTUVWXYZ0123456789") for _ in range(n))

    def device(self, prefix, subnet_host):
        pid = PeerId(self.rng.randbytes(20))
        return {
            "name": self.name(prefix),
            "pid": pid,
            "lan": NetAddr(f"192.168.220.{subnet_host}", self.rng.randrange(20000, 60000)),
            "wan": NetAddr(f"60.50.{self.rng.randrange(1, 250)}.{self.rng.randrange(1, 250)}",
                           self.rng.randrange(20000, 60000)),
        }

    def folder(self, i):
        key = "A" + "".join(self.rng.choice(ALPHABET) for _ in range(32))
        name = f"Share{i}{self.name('', 3)}"
        return {
            "fid": self.rng.randrange(-2 ** 63, 2 ** 63),
            "name": name,
            "path": f"C:\\Users\\anonymous\\BitTorrent Sync\\{name}",
            "key": key,
            "share": share_id_of_key(key),
            "live": [],
            "archived": [],
        }


def _did(dev):
    return f"device:{dev['pid'].hex}"


def _fid(folder):
    return f"folder:{folder['fid']}"


def _sid(folder):
    return f"share:{folder['share'].hex}"


def _eid(addr):
    return f"endpoint:{addr}"


def _file_id(folder, name):
    return f"file:{_fid(folder)}/{name}"


def gen_case(seed, profile, out_dir):
    """Write a case for ``profile`` under ``out_dir``; returns the manifest dict."""
    profile = Profile(profile) if not isinstance(profile, Profile) else profile
    c = _Case(seed, profile, out_dir)
    rng = c.rng
    with_peer = profile is not Profile.Minimal
    n_folders = 3 if profile is Profile.MultiShareLan else 1

    local = c.device("WIN-", rng.randrange(100, 180))
    peer = c.device("LAPTOP-", rng.randrange(180, 250)) if with_peer else None
    me = {"name": c.name("user"), "fp": None}
    guest = {"name": c.name("Guest"), "fp": base32_encode(rng.randbytes(32))} if with_peer else None
    my_identity = f"identity:name:{me['name']}"
    guest_identity = f"identity:fp:{guest['fp']}" if guest else None
    folders = [c.folder(i) for i in range(n_folders)]

    install = c.clock
    c.fact(install, "install")
    c.expect("identity-owns-device", my_identity, _did(local))

    # Files on disk, with mtimes before the application state is written.
    for f in folders:
        f["date_added"] = c.tick()
        for j in range(rng.randrange(1, 4)):
            f["live"].append({"name": f"{f['name']}_{j}.txt", "mtime": c.tick(), "data": rng.randbytes(rng.randrange(1, 64))})
        if profile is Profile.DeletionCase:
            for j in range(rng.randrange(1, 3)):
                f["archived"].append({"name": f"{f['name']}_old{j}.txt", "mtime": c.tick(),
                                      "data": rng.randbytes(rng.randrange(1, 64))})
        f["last_modified"] = c.tick()

    # settings.dat
    settings = {"exe_path": "C:\\Program Files\\BitTorrent Sync\\BTSync.exe", "install_time": install,
                "peer_id": local["pid"].raw, "log_size": 100}
    c.write("dats/settings.dat", bencode.encode(settings))

    # sync.dat
    acl_times = {}
    sync_folders = []
    for f in folders:
        acl = [{"name": me["name"], "public_keys": rng.randbytes(16), "linked_time": f["date_added"]}]
        acl_times[f["fid"]] = [f["date_added"]]
        c.expect("identity-has-access", my_identity, _fid(f))
        c.expect("device-has-folder", _did(local), _fid(f))
        c.fact(f["date_added"], "folder-added")
        c.fact(f["last_modified"], "folder-modified")
        c.fact(f["date_added"], "acl-linked")
        entry = {"folder_id": f["fid"], "path": f["path"], "date_added": f["date_added"],
                 "last_modified": f["last_modified"], "use_tracker": 1, "search_lan": 1, "acl": acl}
        if peer is not None:
            linked = c.tick()
            acl.append({"name": guest["name"], "public_keys": rng.randbytes(16), "linked_time": linked})
            acl_times[f["fid"]].append(linked)
            c.fact(linked, "acl-linked")
            c.expect("identity-has-access", guest_identity, _fid(f))
            seen, synced, sent = c.tick(), c.tick(), c.tick()
            entry["peers"] = [{"name": peer["name"], "id": peer["pid"].raw, "last_addr": peer["lan"].pack(),
                               "last_seen": seen, "last_sync_completed": synced, "last_data_sent": sent}]
            for t, kind in ((seen, "peer-last-seen"), (synced, "peer-last-sync"), (sent, "peer-last-data-sent")):
                c.fact(t, kind)
            c.expect("device-has-folder", _did(peer), _fid(f))
            c.expect("device-seen-at-endpoint", _did(peer), _eid(peer["lan"]))
        sync_folders.append(entry)
    sync = {"device": local["name"],
            "identity": {"name": me["name"], "public_keys": rng.randbytes(16), "private_keys": rng.randbytes(16)},
            "folders": sync_folders}
    requests = []
    if peer is not None:
        sync["identities"] = [{"name": guest["name"], "public_keys": rng.randbytes(16), "fingerprint": guest["fp"]}]
        req_time = c.tick()
        sync["access-requests"] = [{"name": guest["name"], "addr": peer["lan"].pack(), "req_time": req_time,
                                    "requested_permissions": 3, "folder_id": folders[0]["fid"],
                                    "invite": base32_encode(rng.randbytes(16))}]
        requests.append({"identity": guest_identity, "folder": _fid(folders[0]), "time": req_time,
                         "permission": 3, "label": "ReadWrite"})
        c.fact(req_time, "access-request")
        c.expect("request-for-folder", guest_identity, _fid(folders[0]))
    c.write("dats/sync.dat", bencode.encode(sync))

    # history.dat
    history = []
    hid = 1
    for f in folders:
        for item in f["live"] + f["archived"]:
            t = c.tick()
            history.append({"id": hid, "msg": f"Added file {item['name']}", "time": t})
            c.fact(t, "history")
            hid += 1
        if peer is not None:
            t = c.tick()
            target = f["live"][0]["name"]
            history.append({"id": hid, "msg": f"{peer['name']} updated file {target}", "time": t})
            c.fact(t, "history")
            c.expect("device-modified-file", _did(peer), _file_id(f, target))
            hid += 1
        for item in f["archived"]:
            t = c.tick()
            history.append({"id": hid, "msg": f"Remote peer removed file {item['name']}", "time": t})
            c.fact(t, "history")
            hid += 1
    rng.shuffle(history)
    c.write("dats/history.dat", bencode.encode(history))

    # tree/
    for f in folders:
        root = f"tree/{f['name']}"
        c.write(f"{root}/.sync/ID", f["share"].hex.encode() + b"\n")
        c.expect("folder-has-share", _fid(f), _sid(f))
        for item in f["live"]:
            c.write(f"{root}/{item['name']}", item["data"], item["mtime"])
            c.fact(item["mtime"], "file-mtime")
            c.expect("file-in-folder", _file_id(f, item["name"]), _fid(f))
        c.mkdir(f"{root}/.sync/Archive")
        for item in f["archived"]:
            c.write(f"{root}/.sync/Archive/{item['name']}", item["data"], item["mtime"])
            c.fact(item["mtime"], "archived-file-mtime")
            c.expect("file-in-folder", _file_id(f, item["name"]), _fid(f))
    user_dir = f"tree/.SyncUser{install}"
    c.write(f"{user_dir}/identity.dat", bencode.encode(
        {"name": me["name"], "public_keys": rng.randbytes(16), "private_keys": rng.randbytes(16)}))
    if guest is not None:
        c.write(f"{user_dir}/identities/{guest['fp']}", bencode.encode(
            {"name": guest["name"], "public_keys": rng.randbytes(16)}))
    for f in folders:
        info_acl = [{"name": me["name"], "linked_time": acl_times[f["fid"]][0]}]
        c.fact(acl_times[f["fid"]][0], "acl-linked")
        if guest is not None:
            info_acl.append({"name": guest["name"], "linked_time": acl_times[f["fid"]][1]})
            c.fact(acl_times[f["fid"]][1], "acl-linked")
        c.write(f"{user_dir}/folders/{f['fid']}/info.dat", bencode.encode({"acl": info_acl}))
        c.write(f"{user_dir}/devices/{local['pid'].b32}/folders/{f['fid']}", b"")

    # logs/sync.log
    lines = ["platform: Windows workstation 6.3.0 x86 version: 2.0.93"]

    def log(kind, text):
        t = c.tick(1, 30)
        lines.append(f"{_log_time(t)} {text}")
        if kind is not None:
            c.fact(t, f"log:{kind}")

    log("LocalPeerId", f"My PeerID: {local['pid'].hex}")
    log("IpAssigned", f"Using IP address {local['lan'].ip}")
    log("MasterFolderCreate", "MD[init]: Master Folder: create")
    for f in folders:
        log("FolderProcessing", f"MD[A965]: [apply] Processing folder \"{f['name']}\" ({f['fid']})")
        log("PeriodicScan", f"FC[B5E2]: started periodic scan for \"\\\\?\\{f['path']}\"")
        for item in f["live"]:
            log("FileTimeSet", f"JOURNAL[22F5]: setting time for file \"\\\\?\\{f['path']}\\{item['name']}\" "
                               f"to {item['mtime']}")
        log("TrackerRequest", f"Requesting peers from tracker {TRACKER} for share {f['share'].hex}")
        c.expect("share-requested-at-endpoint", _sid(f), _eid(TRACKER))
    log(None, "SyncFolder: heartbeat tick 42")
    if peer is not None:
        log("IdMessage", f"SF[B5E2] [A2B5]: Got id message from peer {peer['name']} ({peer['pid'].hex}) 2.0.93")
        log("NewDeviceFound", f"MD[A965]: new device found {peer['name']} ({peer['pid'].b32})")
        log("PeerFound", f"SF[1F7E] [A2B5]: Found peer {peer['pid'].hex} {peer['lan']} direct:1 transport:1 "
                         "version: 2.0.93")
        c.expect("device-seen-at-endpoint", _did(peer), _eid(peer["lan"]))
        log("HelloSent", f"SSLEH[0x15fa28b0]: hello packet {{ share:{folders[0]['share'].hex} }} has been sent")
    c.write("logs/sync.log", ("\n".join(lines) + "\n").encode())

    # captures/discovery.pcap
    packets = []
    shares_sent = []

    def packet(src, dst, variant, kind):
        t = c.tick(1, 20)
        packets.append((t, 0, netdissect.build_frame(src, dst, netdissect.build_payload(variant))))
        if kind is not None:
            c.fact(t, f"packet:{kind}")

    for f in folders:
        packet(local["lan"], TRACKER, netdissect.TrackerGetPeers(local["lan"], local["lan"].port, local["pid"],
                                                                 f["share"]), "TrackerGetPeers")
        c.expect("device-seen-at-endpoint", _did(local), _eid(local["lan"]))
        c.expect("device-announces-share", _did(local), _sid(f))
        c.expect("share-requested-at-endpoint", _sid(f), _eid(TRACKER))
    if peer is not None:
        entries = []
        for dev in (local, peer):
            entries.append(netdissect.PeerEntry(dev["wan"], dev["lan"], dev["pid"]))
            c.expect("device-seen-at-endpoint", _did(dev), _eid(dev["wan"]))
            c.expect("device-seen-at-endpoint", _did(dev), _eid(dev["lan"]))
            c.expect("device-announces-share", _did(dev), _sid(folders[0]))
        resp = netdissect.TrackerPeersResponse(local["wan"], tuple(entries), folders[0]["share"], c.clock)
        packet(TRACKER, local["lan"], resp, "TrackerPeersResponse")
    if profile is Profile.MultiShareLan:
        for dev, subset in ((local, folders), (peer, folders[:2])):
            ping = netdissect.LanPing(dev["lan"].port, dev["pid"], tuple(f["share"] for f in subset))
            shares_sent.append(len(subset))
            packet(dev["lan"], LAN_GROUP, ping, "LanPing")
            c.expect("device-seen-at-endpoint", _did(dev), _eid(dev["lan"]))
            for f in subset:
                c.expect("device-announces-share", _did(dev), _sid(f))
        # Undissectable traffic is counted but adds no facts.
        t = c.tick(1, 20)
        packets.append((t, 0, netdissect.build_frame(local["lan"], NetAddr("8.8.8.8", 53), b"\x12\x34noise")))
    c.write("captures/discovery.pcap", netdissect.capture_bytes(packets))

    devices = [local] + ([peer] if peer else [])
    manifest = {
        "seed": seed,
        "profile": profile.value,
        "devices": [{"id": _did(d), "name": d["name"], "peer_id": d["pid"].hex, "peer_id_b32": d["pid"].b32,
                     "local": d is local} for d in devices],
        "identities": [{"id": my_identity, "name": me["name"]}]
        + ([{"id": guest_identity, "name": guest["name"], "fingerprint": guest["fp"]}] if guest else []),
        "folders": [{"id": _fid(f), "folder_id": f["fid"], "name": f["name"], "path": f["path"], "key": f["key"],
                     "share_id": f["share"].hex, "date_added": f["date_added"],
                     "last_modified": f["last_modified"]} for f in folders],
        "files": sorted(
            [{"id": _file_id(f, i["name"]), "name": i["name"], "mtime": i["mtime"], "deleted": False}
             for f in folders for i in f["live"]]
            + [{"id": _file_id(f, i["name"]), "name": i["name"], "mtime": i["mtime"], "deleted": True}
               for f in folders for i in f["archived"]],
            key=lambda x: x["id"]),
        "access_requests": requests,
        "lan_ping_share_counts": shares_sent,
        "log_lines": len(lines),
        "packets": len(packets),
        "expected_edges": sorted([list(e) for e in c.edges]),
        "expected_timeline": timeline_groups(c.events),
    }
    c.write("manifest.json", (json.dumps(manifest, indent=1, sort_keys=True) + "\n").encode())
    return manifest


def timeline_groups(events):
    """[(time, kind)] -> [[time, sorted kinds]] ascending by time."""
    groups = defaultdict(Counter)
    for t, kind in events:
        groups[t][kind] += 1
    return [[t, sorted(groups[t].elements())] for t in sorted(groups)]


def snapshot_timeline_groups(timeline):
    events = []
    for ev in timeline:
        t = ev["epoch"]
        events.append((int(t) if float(t).is_integer() else t, ev["kind"]))
    return timeline_groups(events)


def tree_hash(root):
    """SHA-256 over relative paths, file bytes and mtimes of everything under root."""
    h = hashlib.sha256()
    root = Path(root)
    for dirpath, dirnames, filenames in os.walk(root):
        dirnames.sort()
        for name in sorted(filenames):
            p = Path(dirpath) / name
            st = p.stat()
            h.update(p.relative_to(root).as_posix().encode() + b"\0")
            h.update(p.read_bytes())
            h.update(f"\0{st.st_mtime_ns}\0{st.st_size}\0".encode())
    return h.hexdigest()


def check_peer_ids(manifest):
    """Base32 and hex forms in the manifest describe the same 20 bytes."""
    return all(base32_encode(bytes.fromhex(d["peer_id"])) == d["peer_id_b32"] for d in manifest["devices"])


def check_share_ids(manifest):
    return all(share_id_of_key(f["key"]).hex == f["share_id"] for f in manifest["folders"])

