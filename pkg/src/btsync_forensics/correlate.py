"""Evidence graph: ingest parsed artifacts, resolve entities, build a timeline.

Ingestion only records claims ("this source mentions a device with peer ID
X", "this source links A to B"). Nothing is merged until ``snapshot()``,
which resolves all claims at once. Because resolution looks at the whole
claim set, the result does not depend on ingest order, and ingesting the
same source twice only duplicates provenance, which is deduplicated.
"""
import enum
import json
import re
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from . import bencode, logparse, metadata, netdissect
from .errors import ForensicError
from .keycodec import ALPHABET, NetAddr, base32_decode, base32_encode, is_hex_id

SNAPSHOT_VERSION = 1


class SourceKind(enum.Enum):
    SettingsDat = "SettingsDat"
    SyncDat = "SyncDat"
    HistoryDat = "HistoryDat"
    IdentityDat = "IdentityDat"
    InfoDat = "InfoDat"
    IdFile = "IdFile"
    TreeScan = "TreeScan"
    SyncLog = "SyncLog"
    Capture = "Capture"
    ExternalHint = "ExternalHint"


class BadHintSchema(ForensicError):
    pass


@dataclass(frozen=True)
class Provenance:
    source_kind: SourceKind
    path: str
    locator: object = None  # line number, byte offset, packet index or relative path

    def sort_key(self):
        loc = self.locator
        return (self.source_kind.value, self.path, 0 if isinstance(loc, int) else 1,
                loc if isinstance(loc, int) else 0, str(loc))

    def to_json(self):
        return {"source_kind": self.source_kind.value, "path": self.path, "locator": self.locator}

    @classmethod
    def from_json(cls, d):
        return cls(SourceKind(d["source_kind"]), d["path"], d["locator"])


@dataclass
class _Mention:
    kind: str
    keys: frozenset
    attrs: tuple
    prov: Provenance
    folder: int | None = None  # files only: mention index of the containing folder


@dataclass
class _Edge:
    kind: str
    src: int
    dst: int
    prov: Provenance
    attrs: tuple = ()


@dataclass
class _Event:
    epoch: float | None
    naive: datetime | None
    kind: str
    description: str
    prov: Provenance
    refs: tuple = ()


def path_key(path):
    """Comparable form of a folder path: no \\\\?\\ prefix, '/' separators, lower case."""
    p = path.strip()
    for prefix in ("\\\\?\\", "//?/"):
        if p.startswith(prefix):
            p = p[len(prefix):]
    p = p.replace("\\", "/")
    p = re.sub(r"^([A-Za-z]):", r"\1", p)
    p = re.sub(r"/+", "/", p).strip("/")
    return p.lower()


def _split_file_path(path):
    key = path_key(path)
    parts = path.replace("\\", "/").rstrip("/").split("/")
    head, _, _ = key.rpartition("/")
    return head, parts[-1]


def _jsonable(v):
    if isinstance(v, (bytes, bytearray)):
        return bencode.to_jsonable(bytes(v))
    if isinstance(v, enum.Enum):
        return v.value
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, NetAddr):
        return str(v)
    return v


def _vkey(v):
    return json.dumps(v, sort_keys=True)


# Attributes that describe one fact; two different values are a conflict.
SINGLE_VALUED = {"install_time", "exe_path", "date_added"}


class EvidenceGraph:
    def __init__(self):
        self.mentions = []
        self.edges = []
        self.events = []
        self.findings = []
        self.warnings = []
        self.sources = set()
        self.registry = netdissect.DEFAULT

    # -- claim primitives ------------------------------------------------------

    def mention(self, kind, keys, prov, attrs=None, folder=None):
        keys = frozenset((k, v) for k, v in keys if v is not None)
        if not keys:
            keys = frozenset({("anon", f"{prov.path}@{prov.locator}")})
        items = tuple(sorted(((k, _jsonable(v)) for k, v in (attrs or {}).items() if v is not None),
                             key=lambda kv: (kv[0], _vkey(kv[1]))))
        self.mentions.append(_Mention(kind, keys, items, prov, folder))
        return len(self.mentions) - 1

    def device(self, prov, pid_hex=None, b32=None, name=None, local=False, **attrs):
        keys = []
        if pid_hex is not None:
            if is_hex_id(pid_hex):
                keys.append(("pid", pid_hex.upper()))
            else:
                keys.append(("badhex", pid_hex.upper()))
                attrs["peer_id_hex_invalid"] = pid_hex
        if b32 is not None:
            attrs["peer_id_b32"] = b32
            raw = _b32_peer(b32)
            keys.append(("pid", raw.hex().upper()) if raw else ("badb32", b32))
            if raw:
                attrs["peer_id"] = raw.hex().upper()
        if name:
            keys.append(("name", name))
            attrs["name"] = name
        if local:
            keys.append(("local", "1"))
            attrs["local"] = True
        if pid_hex is not None and is_hex_id(pid_hex):
            attrs["peer_id"] = pid_hex.upper()
        return self.mention("device", keys, prov, attrs)

    def identity(self, prov, name=None, fingerprint=None, local=False, **attrs):
        keys = [("fp", fingerprint), ("name", name or None)]
        if local:
            keys.append(("local", "1"))
        attrs.update(name=name or None, fingerprint=fingerprint)
        return self.mention("identity", keys, prov, attrs)

    def folder(self, prov, folder_id=None, path=None, tree=None, **attrs):
        keys = [("fid", folder_id), ("path", path_key(path) if path else None), ("tree", tree)]
        attrs.update(folder_id=folder_id, path=path)
        return self.mention("folder", keys, prov, attrs)

    def share(self, prov, share_hex, **attrs):
        share_hex = share_hex.upper()
        attrs["valid"] = is_hex_id(share_hex, (20, 32))
        return self.mention("share", [("hex", share_hex)], prov, attrs)

    def endpoint(self, prov, addr):
        addr = addr if isinstance(addr, NetAddr) else NetAddr.parse(addr)
        return self.mention("endpoint", [("addr", str(addr))], prov,
                            {"ip": addr.ip, "port": addr.port, "class": self.registry.classify(addr)})

    def file(self, prov, name, folder=None, **attrs):
        attrs["name"] = name
        return self.mention("file", [("name", name)], prov, attrs, folder)

    def edge(self, kind, src, dst, prov, **attrs):
        items = tuple(sorted(((k, _jsonable(v)) for k, v in attrs.items() if v is not None),
                             key=lambda kv: (kv[0], _vkey(kv[1]))))
        self.edges.append(_Edge(kind, src, dst, prov, items))

    def event(self, kind, description, prov, epoch=None, naive=None, refs=()):
        if epoch is None and naive is None:
            return
        self.events.append(_Event(epoch, naive, kind, description, prov, tuple(refs)))

    # -- resolution --------------------------------------------------------------

    def snapshot(self, tz_offset_minutes=0):
        return _Resolver(self).run(tz_offset_minutes)


def _b32_peer(text):
    if len(text) != 32 or any(c not in ALPHABET for c in text):
        return None
    try:
        return base32_decode(text)
    except ForensicError:
        return None


class _UnionFind:
    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, i):
        while self.parent[i] != i:
            self.parent[i] = self.parent[self.parent[i]]
            i = self.parent[i]
        return i

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


class _Resolver:
    def __init__(self, graph):
        self.g = graph
        self.uf = _UnionFind(len(graph.mentions))
        self.findings = []
        self.canon = {}

    def run(self, tz_offset_minutes):
        by_kind = defaultdict(list)
        for i, m in enumerate(self.g.mentions):
            by_kind[m.kind].append(i)
        for kind in ("device", "identity", "folder", "share", "endpoint"):
            self._union_on(by_kind[kind], exclude={"name", "path"})
        self._union_names(by_kind["device"], "name", strong={"pid", "local"}, label="device")
        self._union_names(by_kind["identity"], "name", strong={"fp", "local"}, label="identity")
        self._union_names(by_kind["folder"], "path", strong={"fid"}, label="folder", record=False)
        self._union_folder_paths(by_kind["folder"])
        for kind in ("device", "identity", "folder", "share", "endpoint"):
            self._assign(kind, by_kind[kind])
        self._assign_files(by_kind["file"])
        nodes = self._nodes()
        edges = self._edges()
        self._conflicts(nodes)
        timeline = self._timeline(tz_offset_minutes)
        findings = self._findings()
        return GraphSnapshot({
            "snapshot_version": SNAPSHOT_VERSION,
            "tz_offset_minutes": tz_offset_minutes,
            "nodes": [nodes[k] for k in sorted(nodes)],
            "edges": edges,
            "findings": findings,
            "timeline": timeline,
            "sources": sorted(self.g.sources),
            "warnings": sorted(set(self.g.warnings)),
        })

    def _components(self, idxs):
        comps = defaultdict(list)
        for i in idxs:
            comps[self.uf.find(i)].append(i)
        return comps

    def _keys(self, idxs, name):
        return sorted({v for i in idxs for k, v in self.g.mentions[i].keys if k == name}, key=str)

    def _union_on(self, idxs, exclude):
        first = {}
        for i in idxs:
            for key in self.g.mentions[i].keys:
                if key[0] in exclude:
                    continue
                if key in first:
                    self.uf.union(first[key], i)
                else:
                    first[key] = i

    def _union_names(self, idxs, key, strong, label, record=True):
        """Merge mentions known only by a weak key into the one identified entity carrying it."""
        names = sorted({v for i in idxs for k, v in self.g.mentions[i].keys if k == key})
        for name in names:
            comps = self._components(idxs)
            with_name = [c for c in comps.values()
                         if any((key, name) in self.g.mentions[i].keys for i in c)]
            strong_c = [c for c in with_name if any(k[0] in strong for i in c for k in self.g.mentions[i].keys)]
            weak_c = [c for c in with_name if c not in strong_c]
            if not weak_c:
                continue
            if len(strong_c) == 1:
                target = strong_c[0][0]
                provs = []
                for c in weak_c:
                    self.uf.union(target, c[0])
                    provs.extend(self.g.mentions[i].prov for i in c)
                provs.extend(self.g.mentions[i].prov for i in strong_c[0])
                if record:
                    self.findings.append(("Link", f"{label} matched by {key} only: {name!r}", provs, True))
            else:
                for c in weak_c[1:]:
                    self.uf.union(weak_c[0][0], c[0])
                if len(strong_c) > 1 and record:
                    provs = [self.g.mentions[i].prov for c in with_name for i in c]
                    self.findings.append(("Link", f"{label} name {name!r} is shared by {len(strong_c)} "
                                                  f"identified {label}s; name-only mentions left unmerged",
                                          provs, True))

    def _union_folder_paths(self, idxs):
        comps = self._components(idxs)
        keyed = defaultdict(set)
        for root, c in comps.items():
            for p in self._keys(c, "path"):
                keyed[p.rsplit("/", 1)[-1]].add(root)
        for root, c in sorted(comps.items()):
            trees = self._keys(c, "tree")
            if not trees or self._keys(c, "path") or self._keys(c, "fid"):
                continue
            for tree in trees:
                candidates = keyed.get(tree.rsplit("/", 1)[-1].lower(), set())
                if len(candidates) == 1:
                    self.uf.union(root, next(iter(candidates)))

    def _assign(self, kind, idxs):
        for root, c in self._components(idxs).items():
            if kind == "device":
                cid = self._device_id(c)
            elif kind == "identity":
                fps, names = self._keys(c, "fp"), self._keys(c, "name")
                cid = (f"identity:fp:{fps[0]}" if fps else f"identity:name:{names[0]}" if names
                       else f"identity:anon:{self._keys(c, 'anon')[0]}" if self._keys(c, "anon") else "identity:local")
            elif kind == "folder":
                fids, paths, trees = self._keys(c, "fid"), self._keys(c, "path"), self._keys(c, "tree")
                if len(fids) > 1:
                    self._conflict(f"folder IDs {fids} resolve to one folder", c, "fid")
                cid = (f"folder:{fids[0]}" if fids else f"folder:path:{paths[0]}" if paths
                       else f"folder:tree:{trees[0]}" if trees else f"folder:anon:{self._keys(c, 'anon')[0]}")
            elif kind == "share":
                cid = f"share:{self._keys(c, 'hex')[0]}"
            else:
                cid = f"endpoint:{self._keys(c, 'addr')[0]}"
            for i in c:
                self.canon[i] = cid

    def _device_id(self, c):
        pids = self._keys(c, "pid")
        if len(pids) > 1:
            self._conflict(f"several peer IDs resolve to one device: {', '.join(pids)}", c, "pid")
        if pids:
            return f"device:{pids[0]}"
        for key, prefix in (("badb32", "device:b32:"), ("badhex", "device:hex:"), ("name", "device:name:"),
                            ("anon", "device:anon:")):
            vals = self._keys(c, key)
            if vals:
                return prefix + vals[0]
        return "device:local"

    def _conflict(self, description, c, key):
        provs = []
        seen = set()
        for i in c:
            for k, v in self.g.mentions[i].keys:
                if k == key and v not in seen:
                    seen.add(v)
                    provs.append(self.g.mentions[i].prov)
        self.findings.append(("Conflict", description, provs, False))

    def _assign_files(self, idxs):
        named = defaultdict(set)
        pending = []
        for i in idxs:
            m = self.g.mentions[i]
            if m.folder is None:
                pending.append(i)
                continue
            name = dict(m.keys)["name"]
            cid = f"file:{self.canon[m.folder]}/{name}"
            self.canon[i] = cid
            named[name.rsplit("/", 1)[-1]].add(cid)
        for i in pending:
            name = dict(self.g.mentions[i].keys)["name"]
            matches = named.get(name, set())
            self.canon[i] = next(iter(matches)) if len(matches) == 1 else f"file:?/{name}"

    def _nodes(self):
        nodes = {}
        for i, m in enumerate(self.g.mentions):
            cid = self.canon[i]
            node = nodes.setdefault(cid, {"id": cid, "kind": m.kind, "attrs": defaultdict(dict), "prov": set()})
            node["prov"].add(m.prov)
            for k, v in m.attrs:
                node["attrs"][k].setdefault(_vkey(v), (v, set()))[1].add(m.prov)
            if m.kind == "file" and m.folder is not None:
                node["attrs"]["folder"].setdefault(_vkey(self.canon[m.folder]),
                                                   (self.canon[m.folder], set()))[1].add(m.prov)
        out = {}
        for cid, node in nodes.items():
            attrs = {}
            for k in sorted(node["attrs"]):
                attrs[k] = [{"value": v, "prov": _provs(p)} for _, (v, p) in sorted(node["attrs"][k].items())]
            out[cid] = {"id": cid, "kind": node["kind"], "attrs": attrs, "prov": _provs(node["prov"])}
        return out

    def _edges(self):
        merged = {}
        for e in self.g.edges:
            key = (e.kind, self.canon[e.src], self.canon[e.dst])
            slot = merged.setdefault(key, {"attrs": defaultdict(dict), "prov": set()})
            slot["prov"].add(e.prov)
            for k, v in e.attrs:
                slot["attrs"][k][_vkey(v)] = v
        return [{"kind": k, "src": s, "dst": d,
                 "attrs": {a: [v for _, v in sorted(vals.items())] for a, vals in sorted(slot["attrs"].items())},
                 "prov": _provs(slot["prov"])}
                for (k, s, d), slot in sorted(merged.items())]

    def _conflicts(self, nodes):
        for cid, node in sorted(nodes.items()):
            attrs = node["attrs"]
            if node["kind"] == "device" and "peer_id" in attrs:
                pids = [a["value"] for a in attrs["peer_id"]]
                for b in attrs.get("peer_id_b32", []):
                    if len(pids) == 1 and b["value"] != base32_encode(bytes.fromhex(pids[0])):
                        provs = b["prov"][:1] + attrs["peer_id"][0]["prov"][:1]
                        provs = [Provenance.from_json(p) for p in provs]
                        self.findings.append((
                            "Conflict",
                            f"{cid}: base32 ID {b['value']} does not encode peer ID {pids[0]} "
                            f"(expected {base32_encode(bytes.fromhex(pids[0]))})",
                            provs, False))
            for name in sorted(SINGLE_VALUED & set(attrs)):
                if len(attrs[name]) > 1:
                    provs = [Provenance.from_json(a["prov"][0]) for a in attrs[name]]
                    values = ", ".join(str(a["value"]) for a in attrs[name])
                    self.findings.append(("Conflict", f"{cid}: {name} has conflicting values {values}", provs, False))

    def _timeline(self, tz_offset_minutes):
        seen = {}
        for ev in self.g.events:
            if ev.epoch is not None:
                epoch, clock = float(ev.epoch), "utc"
            else:
                epoch = (ev.naive - datetime(1970, 1, 1)).total_seconds() - tz_offset_minutes * 60
                clock = "local"
            refs = sorted({self.canon[r] for r in ev.refs})
            key = (epoch, ev.prov.sort_key(), ev.kind, ev.description)
            if key in seen:
                continue
            seen[key] = {
                "epoch": epoch,
                "clock": clock,
                "naive": ev.naive.isoformat(sep=" ") if ev.naive else None,
                "kind": ev.kind,
                "description": ev.description,
                "refs": refs,
                "prov": [ev.prov.to_json()],
            }
        return [seen[k] for k in sorted(seen)]

    def _findings(self):
        out = {}
        for kind, desc, provs, weak in self.findings:
            key = (kind, desc)
            slot = out.setdefault(key, {"kind": kind, "description": desc, "weak": weak, "prov": set()})
            slot["prov"].update(provs)
        missing = {
            "SyncDat": "sync.dat not available: folder, identity and request records missing",
            "SettingsDat": "settings.dat not available: installation time and local peer ID unconfirmed",
            "HistoryDat": "history.dat not available: file event history missing",
            "SyncLog": "sync.log not available: device names and peer addresses unconfirmed",
            "TreeScan": "no folder tree: physical copies and share IDs not examined",
            "Capture": "no network capture: discovery traffic not examined",
        }
        gaps = [
            "[share-ID].db database not examined (schema unspecified)",
            "peer devices not re-acquired: examination limited to the device under investigation",
        ]
        gaps += [desc for src, desc in missing.items() if src not in self.g.sources]
        for desc in gaps:
            out[("Gap", desc)] = {"kind": "Gap", "description": desc, "weak": False, "prov": set()}
        order = {"Conflict": 0, "Link": 1, "Gap": 2}
        return [{**f, "prov": _provs(f["prov"])} for _, f in sorted(out.items(), key=lambda kv: (order[kv[0][0]], kv[0][1]))]


def _provs(provs):
    return [p.to_json() for p in sorted(set(provs), key=Provenance.sort_key)]


class GraphSnapshot:
    """Immutable, JSON-shaped result of resolution."""

    def __init__(self, data):
        self.data = data

    def __getitem__(self, key):
        return self.data[key]

    def node(self, cid):
        return next((n for n in self.data["nodes"] if n["id"] == cid), None)

    def edge_set(self):
        return {(e["kind"], e["src"], e["dst"]) for e in self.data["edges"]}

    def to_json(self):
        return json.dumps(self.data, sort_keys=True, indent=1, ensure_ascii=False) + "\n"

    @classmethod
    def from_json(cls, text):
        data = json.loads(text)
        if not isinstance(data, dict) or "nodes" not in data or "edges" not in data:
            raise ForensicError("not an evidence graph file")
        return cls(data)


# --- ingestion ----------------------------------------------------------------

def _first_str(d, *names):
    return next((d[n] for n in names if isinstance(d.get(n), str)), None)


def _epoch_event(g, kind, desc, prov, t, refs=()):
    if isinstance(t, int) and t >= 0:
        g.event(kind, desc, prov, epoch=t, refs=refs)


def ingest_settings(g, rec, path):
    g.sources.add(SourceKind.SettingsDat.value)
    prov = Provenance(SourceKind.SettingsDat, path, rec.offsets.get("peer_id", 0))
    dev = g.device(prov, pid_hex=rec.peer_id.hex if rec.peer_id else None, local=True,
                   install_time=rec.install_time, exe_path=rec.exe_path)
    if rec.install_time is not None:
        tprov = Provenance(SourceKind.SettingsDat, path, rec.offsets.get("install_time", 0))
        _epoch_event(g, "install", "application installed", tprov, rec.install_time, (dev,))
    for w in rec.warnings:
        g.warnings.append(f"{path}: {w}")
    return g


def ingest_sync_dat(g, out, path):
    g.sources.add(SourceKind.SyncDat.value)

    def prov(offset):
        return Provenance(SourceKind.SyncDat, path, offset if offset is not None else 0)

    local = g.device(prov(out.offsets.get("device")), name=out.device, local=True)
    if out.identity is not None:
        ident = g.identity(prov(out.identity.offset), name=out.identity.name,
                           fingerprint=out.identity.fingerprint, local=True, source=out.identity.source)
        g.edge("identity-owns-device", ident, local, prov(out.identity.offset))
    for rec in out.identities:
        g.identity(prov(rec.offset), name=rec.name, fingerprint=rec.fingerprint, source=rec.source)
    for req in out.access_requests:
        p = prov(req.offset)
        who = g.identity(p, name=req.name or None)
        refs = [who]
        if req.folder_id is not None:
            folder = g.folder(p, folder_id=req.folder_id)
            label = req.permission_label
            g.edge("request-for-folder", who, folder, p, permission=req.requested_permissions,
                   label=label.value if label else None, hypothesized=label is not None,
                   addr=req.addr, time=req.req_time, granted=req.granted_permissions)
            refs.append(folder)
        _epoch_event(g, "access-request", f"access request from {req.name or '?'}"
                     + (f" at {req.addr}" if req.addr else ""), p, req.req_time, refs)
    for rec in out.folders:
        _ingest_folder_record(g, rec, prov, local)
    for w in out.warnings:
        g.warnings.append(f"{path}: {w}")
    return g


def _ingest_folder_record(g, rec, prov, local):
    p = prov(rec.offset)
    folder = g.folder(p, folder_id=rec.folder_id, path=rec.path, name=rec.name, date_added=rec.date_added,
                      last_modified=rec.last_modified, in_trash=rec.in_trash,
                      discovery=sorted(m.value for m in rec.discovery_flags) or None)
    g.edge("device-has-folder", local, folder, p)
    label = rec.name or rec.folder_id
    _epoch_event(g, "folder-added", f"folder {label} added", p, rec.date_added, (folder,))
    _epoch_event(g, "folder-modified", f"folder {label} last modified", p, rec.last_modified, (folder,))
    for acl in rec.acl:
        ap = prov(acl.offset)
        who = g.identity(ap, name=acl.name)
        g.edge("identity-has-access", who, folder, ap, linked_time=acl.linked_time)
        _epoch_event(g, "acl-linked", f"identity {acl.name} linked to folder {label}", ap, acl.linked_time,
                     (who, folder))
    for peer in rec.peers:
        pp = prov(peer.offset)
        dev = g.device(pp, pid_hex=peer.peer_id.hex if peer.peer_id else None, name=peer.name)
        g.edge("device-has-folder", dev, folder, pp)
        if peer.last_addr is not None:
            g.edge("device-seen-at-endpoint", dev, g.endpoint(pp, peer.last_addr), pp, time=peer.last_seen)
        who = peer.name or (peer.peer_id.hex if peer.peer_id else "?")
        for kind, t in (("peer-last-seen", peer.last_seen), ("peer-last-sync", peer.last_sync_completed),
                        ("peer-last-data-sent", peer.last_data_sent)):
            _epoch_event(g, kind, f"peer {who}: {kind.replace('peer-', '').replace('-', ' ')}", pp, t, (dev, folder))


def _history_entry(g, entry, prov):
    parsed = metadata.parse_history_message(entry.msg)
    refs = []
    if parsed is not None:
        actor, action, what, name = parsed
        if what == "file":
            f = g.file(prov, name)
            refs.append(f)
            if actor:
                dev = g.device(prov, name=actor)
                g.edge("device-modified-file", dev, f, prov, action=action, time=entry.time)
                refs.append(dev)
    _epoch_event(g, "history", entry.msg, prov, entry.time, refs)


def ingest_history(g, entries, path):
    g.sources.add(SourceKind.HistoryDat.value)
    for entry in entries:
        _history_entry(g, entry, Provenance(SourceKind.HistoryDat, path, entry.offset or 0))
    return g


def ingest_identity_file(g, rec, path):
    g.sources.add(SourceKind.IdentityDat.value)
    local = rec.source is metadata.IdentitySource.IdentityDatFile
    g.identity(Provenance(SourceKind.IdentityDat, path, rec.offset or 0), name=rec.name,
               fingerprint=rec.fingerprint, local=local, source=rec.source)
    return g


def ingest_info(g, info, path, folder_id):
    g.sources.add(SourceKind.InfoDat.value)
    for acl in info.acl:
        p = Provenance(SourceKind.InfoDat, path, acl.offset or 0)
        folder = g.folder(p, folder_id=folder_id)
        who = g.identity(p, name=acl.name)
        g.edge("identity-has-access", who, folder, p, linked_time=acl.linked_time)
        _epoch_event(g, "acl-linked", f"identity {acl.name} linked to folder {folder_id}", p, acl.linked_time,
                     (who, folder))
    return g


def ingest_tree(g, scan, base=""):
    """Bind tree evidence; ``base`` prefixes relative paths in provenance."""
    g.sources.add(SourceKind.TreeScan.value)

    def rel(p):
        return f"{base}/{p}" if base else p

    for ev in scan.folders:
        if ev.kind is not metadata.EvidenceKind.SharedFolder and ev.share_id is None:
            continue
        p = Provenance(SourceKind.TreeScan, rel(ev.root_path), ev.root_path)
        folder = g.folder(p, tree=ev.root_path, tree_path=ev.root_path)
        if ev.share_id is not None:
            ip = Provenance(SourceKind.IdFile, rel(f"{ev.root_path}/.sync/ID"), 0)
            g.edge("folder-has-share", folder, g.share(ip, ev.share_id.hex), ip)
        for files, deleted, sub in ((ev.live_files, False, ""), (ev.archived_files, True, ".sync/Archive/")):
            for f in files:
                fp = Provenance(SourceKind.TreeScan, rel(f"{ev.root_path}/{sub}{f.name}"), f"{sub}{f.name}")
                node = g.file(fp, f.name, folder, deleted=deleted or None, size=f.size,
                              archived_mtime=f.mtime if deleted else None, mtime=None if deleted else f.mtime)
                g.edge("file-in-folder", node, folder, fp, deleted=deleted)
                kind = "archived-file-mtime" if deleted else "file-mtime"
                _epoch_event(g, kind, f"{'archived ' if deleted else ''}file {f.name} last modified", fp,
                             f.mtime, (node, folder))
    for mapping in scan.device_folders:
        p = Provenance(SourceKind.TreeScan, rel(mapping.path), mapping.path)
        dev = g.device(p, b32=mapping.peer_id_b32)
        for fid in mapping.folder_ids:
            if isinstance(fid, int):
                g.edge("device-has-folder", dev, g.folder(p, folder_id=fid), p)
            else:
                g.warnings.append(f"{rel(mapping.path)}: folder entry {fid!r} is not a folder ID")
    for w in scan.warnings:
        g.warnings.append(w)
    return g


def ingest_log(g, events, path):
    g.sources.add(SourceKind.SyncLog.value)
    for ev in events:
        if ev.kind is logparse.Kind.Unrecognized:
            continue
        p = Provenance(SourceKind.SyncLog, path, ev.line_no)
        refs = _log_event(g, ev, p)
        if ev.timestamp is not None:
            g.event(f"log:{ev.kind.value}", _split_desc(ev), p, naive=ev.timestamp, refs=refs or ())
    return g


def _split_desc(ev):
    body = ev.raw.rstrip("\r\n")
    return re.sub(r"^\[[^\]]*\]\s*", "", body)[:200]


def _log_event(g, ev, p):
    f = ev.fields
    K = logparse.Kind
    k = ev.kind
    if k is K.PlatformVersion:
        return [g.device(p, local=True, platform=f["platform"], version=f["version"])]
    if k is K.LocalPeerId:
        if f["peer_id_valid"]:
            return [g.device(p, pid_hex=f["peer_id_hex"], local=True)]
        return [g.device(p, local=True, peer_id_hex_invalid=f["peer_id_hex"])]
    if k in (K.MasterFolderCreate, K.MasterFolderDisconnect):
        return [g.device(p, local=True)]
    if k is K.IpAssigned:
        return [g.device(p, local=True, ip=f["addr"])]
    if k is K.IpChanged:
        return [g.device(p, local=True, ip=f["to"], previous_ip=f["from"])]
    if k is K.IncomingConnection:
        return [g.endpoint(p, f["addr"])]
    if k in (K.PingReceived, K.PeerFound) or (k is K.PeerAddress and "peer_id_hex" in f):
        dev = g.device(p, pid_hex=f["peer_id_hex"], version=f.get("version"))
        end = g.endpoint(p, f["addr"])
        g.edge("device-seen-at-endpoint", dev, end, p)
        return [dev, end]
    if k is K.PeerAddress:
        return [g.endpoint(p, f["addr"])]
    if k is K.IdMessage:
        return [g.device(p, pid_hex=f["peer_id_hex"], name=f["device_name"], version=f["version"])]
    if k is K.NewDeviceFound:
        return [g.device(p, b32=f["peer_id_b32"], name=f["device_name"])]
    if k in (K.HelloSent, K.HelloReceived):
        return [g.share(p, f["share_id_hex"])]
    if k is K.TrackerRequest:
        share = g.share(p, f["share_id_hex"])
        end = g.endpoint(p, f["tracker_addr"])
        g.edge("share-requested-at-endpoint", share, end, p)
        return [share, end]
    if k in (K.PeriodicScan, K.FolderRemoved):
        return [g.folder(p, path=f["path"], removed=True if k is K.FolderRemoved else None)]
    if k is K.FolderProcessing:
        return [g.folder(p, folder_id=f["folder_id"], name=f["name"])]
    if k is K.TorrentCreated:
        return [g.file(p, f["file"], torrent_mtime=f["mtime"], torrent_hash=f["hash_hex"])]
    if k in (K.FileTimeSet, K.FileInserted):
        head, name = _split_file_path(f["path"])
        folder = g.folder(p, path=head) if head else None
        node = g.file(p, name, folder, time_set=f.get("time"))
        if folder is not None:
            g.edge("file-in-folder", node, folder, p)
        return [node]
    if k is K.ApiResponse:
        return _api_response(g, ev, p)
    return []


def _api_response(g, ev, p):
    name = ev.fields["api_name"]
    value = logparse.iter_api_values(ev)
    refs = []
    if name == "getmfdevices" and isinstance(value, list):
        for d in value:
            if not isinstance(d, dict):
                continue
            ident = d.get("id")
            dev = g.device(p, b32=ident if isinstance(ident, str) else None,
                           name=d.get("devicename") or d.get("name"), lastseen=d.get("lastseen"),
                           lastsynccompleted=d.get("lastsynccompleted"))
            refs.append(dev)
            for fol in d.get("folders") or []:
                if isinstance(fol, dict) and isinstance(fol.get("id"), int):
                    g.edge("device-has-folder", dev, g.folder(p, folder_id=fol["id"]), p)
    elif name == "getpendingrequests" and isinstance(value, list):
        for r in value:
            if not isinstance(r, dict):
                continue
            user = r.get("user_identity") or {}
            who = g.identity(p, name=user.get("username"), fingerprint=user.get("fingerprint"),
                             devicename=user.get("devicename"))
            refs.append(who)
            fid = _int_or_none(r.get("id"))
            if fid is not None:
                level = r.get("access_level")
                label = metadata.permission_label(level) if isinstance(level, int) else None
                g.edge("request-for-folder", who, g.folder(p, folder_id=fid), p, permission=level,
                       label=label.value if label else None, hypothesized=label is not None,
                       addr=r.get("ip"), time=r.get("time"))
    elif name == "getsyncfolders":
        body = ev.fields.get("body_parsed")
        folders = body.get("folders") if isinstance(body, dict) else None
        for fo in folders or []:
            if not isinstance(fo, dict):
                continue
            folder = g.folder(p, folder_id=_int_or_none(fo.get("folderid")), path=fo.get("path"),
                              name=fo.get("name"))
            refs.append(folder)
            for peer in fo.get("peers") or []:
                pid = _first_str(peer, "id", "peer_id", "peerid") if isinstance(peer, dict) else None
                if pid is not None:
                    dev = g.device(p, pid_hex=pid, name=peer.get("name"))
                    g.edge("device-has-folder", dev, folder, p)
            for user in fo.get("users") or []:
                if isinstance(user, dict):
                    who = g.identity(p, name=_first_str(user, "name", "username"),
                                     fingerprint=_first_str(user, "fingerprint", "id"))
                    g.edge("identity-has-access", who, folder, p, access=user.get("access"))
    elif name == "history" and isinstance(value, list):
        for h in value:
            if isinstance(h, dict) and isinstance(h.get("msg"), str):
                entry = metadata.HistoryEntry(h.get("id"), h["msg"], h.get("time"))
                _history_entry(g, entry, p)
    elif name in ("getfoldersstoragepath", "setfoldersstoragepath"):
        body = ev.fields.get("body_parsed")
        storage = value if isinstance(value, str) else body.get("path") if isinstance(body, dict) else None
        if storage:
            refs.append(g.device(p, local=True, storage_path=storage))
    return refs


def _int_or_none(v):
    if isinstance(v, bool):
        return None
    if isinstance(v, int):
        return v
    if isinstance(v, str) and re.fullmatch(r"-?\d{1,19}", v):
        return int(v)
    return None


def ingest_capture(g, result, path):
    g.sources.add(SourceKind.Capture.value)
    for msg in result.messages:
        rec = msg.origin
        p = Provenance(SourceKind.Capture, path, rec.index)
        v = msg.variant
        refs = []
        if isinstance(v, netdissect.LanPing):
            dev = g.device(p, pid_hex=v.peer.hex)
            g.edge("device-seen-at-endpoint", dev, g.endpoint(p, rec.src), p, time=rec.ts_sec)
            for s in v.shares:
                g.edge("device-announces-share", dev, g.share(p, s.hex), p, time=rec.ts_sec)
            refs.append(dev)
        elif isinstance(v, netdissect.TrackerGetPeers):
            dev = g.device(p, pid_hex=v.peer.hex)
            share = g.share(p, v.share.hex)
            g.edge("device-seen-at-endpoint", dev, g.endpoint(p, v.la), p, time=rec.ts_sec)
            g.edge("device-seen-at-endpoint", dev, g.endpoint(p, rec.src), p, time=rec.ts_sec)
            g.edge("device-announces-share", dev, share, p, time=rec.ts_sec)
            g.edge("share-requested-at-endpoint", share, g.endpoint(p, rec.dst), p, time=rec.ts_sec)
            refs += [dev, share]
        elif isinstance(v, netdissect.TrackerPeersResponse):
            share = g.share(p, v.share.hex)
            refs.append(share)
            for peer in v.peers:
                dev = g.device(p, pid_hex=peer.p.hex)
                for addr in (peer.a, peer.la):
                    if addr is not None:
                        g.edge("device-seen-at-endpoint", dev, g.endpoint(p, addr), p, time=v.time)
                g.edge("device-announces-share", dev, share, p, time=v.time)
                refs.append(dev)
        g.event(f"packet:{msg.kind}", f"{msg.kind} {rec.src} -> {rec.dst}", p,
                epoch=rec.ts_sec + rec.ts_usec / 1e6, refs=refs)
    return g


_HINT_KEYS = {
    "Device": ("peer_id", "peer_id_b32", "name"),
    "Identity": ("fingerprint", "name"),
    "Folder": ("folder_id", "path"),
    "Share": ("share_id",),
    "Endpoint": ("ip",),
    "File": ("name",),
}
_HINT_KINDS = set(_HINT_KEYS)


def ingest_hints(g, rows, path):
    if not isinstance(rows, list):
        raise BadHintSchema(f"{path}: hints must be a JSON array")
    g.sources.add(SourceKind.ExternalHint.value)
    for n, row in enumerate(rows):
        def bad(reason):
            return BadHintSchema(f"{path}: hint row {n}: {reason}")
        if not isinstance(row, dict):
            raise bad("not an object")
        kind = row.get("entity_kind")
        attrs = row.get("attributes")
        if kind not in _HINT_KINDS:
            raise bad(f"entity_kind {kind!r} is not one of {sorted(_HINT_KINDS)}")
        if not isinstance(attrs, dict):
            raise bad("attributes must be an object")
        ts = row.get("timestamp")
        if ts is not None and (not isinstance(ts, int) or isinstance(ts, bool)):
            raise bad("timestamp must be integer epoch seconds")
        if not any(attrs.get(k) is not None for k in _HINT_KEYS[kind]):
            raise bad(f"{kind} hint needs one of {', '.join(_HINT_KEYS[kind])}")
        p = Provenance(SourceKind.ExternalHint, path, n)
        a = dict(attrs)
        try:
            if kind == "Device":
                m = g.device(p, pid_hex=a.pop("peer_id", None), b32=a.pop("peer_id_b32", None),
                             name=a.pop("name", None), **a)
            elif kind == "Identity":
                m = g.identity(p, name=a.pop("name", None), fingerprint=a.pop("fingerprint", None), **a)
            elif kind == "Folder":
                m = g.folder(p, folder_id=a.pop("folder_id", None), path=a.pop("path", None), **a)
            elif kind == "Share":
                m = g.share(p, a.pop("share_id"), **a)
            elif kind == "Endpoint":
                m = g.endpoint(p, NetAddr(a.pop("ip"), int(a.pop("port"))))
            else:
                folder = g.folder(p, folder_id=a.pop("folder_id")) if "folder_id" in a else None
                m = g.file(p, a.pop("name"), folder, **a)
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            raise bad(f"missing or invalid identifying attribute ({exc})") from None
        if ts is not None:
            g.event("hint", row.get("description") or f"{kind} hint", p, epoch=ts, refs=(m,))
    return g


# --- case directory -----------------------------------------------------------

def _dat_kind(path, value):
    parts = path.parts
    if len(parts) >= 2 and parts[-2] == "identities":
        return "identity-peer"
    return metadata.detect_kind(path, value)


def ingest_dat_file(g, full, rel):
    try:
        value, _ = metadata.load_dat(full)
    except (OSError, bencode.BencodeError) as exc:
        g.warnings.append(f"{rel}: {exc}")
        return
    kind = _dat_kind(Path(rel), value)
    try:
        if kind == "settings":
            ingest_settings(g, metadata.parse_settings(value), rel)
        elif kind == "sync":
            ingest_sync_dat(g, metadata.parse_sync_dat(value), rel)
        elif kind == "history":
            ingest_history(g, metadata.parse_history(value), rel)
        elif kind == "identity":
            ingest_identity_file(g, metadata.parse_identity(value, metadata.IdentitySource.IdentityDatFile), rel)
        elif kind == "identity-peer":
            rec = metadata.parse_identity(value, metadata.IdentitySource.IdentitiesDirFile, Path(rel).name)
            ingest_identity_file(g, rec, rel)
        elif kind == "info":
            fid = _int_or_none(Path(rel).parent.name)
            ingest_info(g, metadata.parse_info(value), rel, fid)
        else:
            g.warnings.append(f"{rel}: unrecognised .dat content")
    except metadata.MetadataError as exc:
        g.warnings.append(f"{rel}: {exc}")


def _is_dat(path):
    name = path.name.lower()
    return (name.endswith(".dat") or name.endswith(".dat.old")
            or (path.parent.name == "identities" and path.is_file()))


def load_case(case_dir, registry=None):
    """Ingest every artifact of a case directory (dats/, logs/, tree/, captures/, hints.json)."""
    case = Path(case_dir)
    if not case.is_dir():
        raise ForensicError(f"{case}: not a case directory")
    g = EvidenceGraph()
    if registry is not None:
        g.registry = registry
    dats = case / "dats"
    if dats.is_dir():
        for full in sorted(p for p in dats.rglob("*") if p.is_file() and _is_dat(p)):
            ingest_dat_file(g, full, full.relative_to(case).as_posix())
    logs = case / "logs"
    if logs.is_dir():
        for full in sorted(p for p in logs.rglob("*") if p.is_file()):
            events, _ = logparse.parse_log_file(full)
            ingest_log(g, events, full.relative_to(case).as_posix())
    tree = case / "tree"
    if tree.is_dir():
        scan = metadata.scan_tree(tree)
        ingest_tree(g, scan, "tree")
        for ev in scan.folders:
            for art in ev.artifacts:
                ingest_dat_file(g, tree / art, f"tree/{art}")
    captures = case / "captures"
    if captures.is_dir():
        for full in sorted(p for p in captures.rglob("*") if p.is_file()):
            rel = full.relative_to(case).as_posix()
            try:
                result = netdissect.discover(netdissect.read_capture(full), g.registry)
            except netdissect.CaptureError as exc:
                g.warnings.append(f"{rel}: {exc}")
                continue
            ingest_capture(g, result, rel)
            g.warnings.extend(f"{rel}: {d}" for d in result.diagnostics)
    hints = case / "hints.json"
    if hints.is_file():
        try:
            rows = json.loads(hints.read_text())
        except ValueError as exc:
            raise BadHintSchema(f"hints.json: not valid JSON ({exc})") from None
        ingest_hints(g, rows, "hints.json")
    return g


def correlate_case(case_dir, registry=None, tz_offset_minutes=0):
    return load_case(case_dir, registry).snapshot(tz_offset_minutes)


def utc_iso(epoch):
    return datetime.fromtimestamp(epoch, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
