"""Parsers for the application-folder .dat files and a read-only tree scanner.

Every parser works on an already decoded bencode value. Known keys are
mapped onto typed records; everything else is kept verbatim in
``unknown`` so nothing in the evidence is dropped. Problems with a single
entry become warnings on the result instead of aborting the parse.
"""
import enum
import os
import re
import stat
from dataclasses import dataclass, field
from pathlib import Path

from . import bencode
from .bencode import text
from .errors import ForensicError
from .keycodec import ALPHABET, BadLength, NetAddr, PeerId, ShareId, decode_netaddr


class MetadataError(ForensicError):
    pass


class NotADict(MetadataError):
    pass


class NotParseable(MetadataError):
    pass


class BadShareIdLength(MetadataError):
    pass


class NotHex(MetadataError):
    pass


class IdentitySource(enum.Enum):
    SyncDatIdentity = "SyncDatIdentity"
    SyncDatIdentities = "SyncDatIdentities"
    IdentityDatFile = "IdentityDatFile"
    IdentitiesDirFile = "IdentitiesDirFile"


class PermissionLabel(enum.Enum):
    ReadOnly = "ReadOnly"
    ReadWrite = "ReadWrite"
    Owner = "Owner"
    Unknown = "Unknown"


# Meaning of the numeric codes is an inference, never a documented fact.
PERMISSION_CODES = {2: PermissionLabel.ReadOnly, 3: PermissionLabel.ReadWrite, 4: PermissionLabel.Owner}


class DiscoveryMethod(enum.Enum):
    Relay = "Use relay server when required"
    Tracker = "Use tracker server"
    Lan = "Search LAN"
    Dht = "Search DHT network"
    PredefinedHosts = "Predefined hosts"


_DISCOVERY_KEYS = {
    DiscoveryMethod.Relay: {"relay", "userelay", "userelayserver", "userelayserverwhenrequired", "relayserver"},
    DiscoveryMethod.Tracker: {"tracker", "usetracker", "usetrackerserver", "trackerserver"},
    DiscoveryMethod.Lan: {"lan", "searchlan", "uselan", "landiscovery", "localpeerdiscovery"},
    DiscoveryMethod.Dht: {"dht", "searchdht", "usedht", "searchdhtnetwork"},
    DiscoveryMethod.PredefinedHosts: {"predefinedhosts", "usehosts", "knownhosts", "usepredefinedhosts"},
}


def _discovery_method(key):
    norm = re.sub(r"[^a-z]", "", key.lower())
    for method, names in _DISCOVERY_KEYS.items():
        if norm in names:
            return method
    return None


def permission_label(code):
    if code is None:
        return None
    return PERMISSION_CODES.get(code, PermissionLabel.Unknown)


@dataclass
class SettingsRecord:
    exe_path: str | None = None
    install_time: int | None = None
    peer_id: PeerId | None = None
    log_size: int | None = None
    search_list: object = None
    tracker_last: object = None
    unknown: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)
    offsets: dict = field(default_factory=dict)


@dataclass
class IdentityRecord:
    name: str | None
    public_keys: object
    private_keys: object
    source: IdentitySource
    fingerprint: str | None = None
    unknown: dict = field(default_factory=dict)
    offset: int | None = None


@dataclass
class AccessRequest:
    name: str | None = None
    addr: NetAddr | None = None
    public_keys: object = None
    invite: str | None = None
    folder_id: int | None = None
    req_time: int | None = None
    requested_permissions: int | None = None
    granted_permissions: int | None = None
    unknown: dict = field(default_factory=dict)
    offset: int | None = None

    @property
    def permission_label(self):
        return permission_label(self.requested_permissions)


@dataclass
class AclEntry:
    name: str | None = None
    public_keys: object = None
    issuer: object = None
    linked_time: int | None = None
    unknown: dict = field(default_factory=dict)
    offset: int | None = None


@dataclass
class PeerStatus:
    name: str | None = None
    peer_id: PeerId | None = None
    last_addr: NetAddr | None = None
    last_sync_completed: int | None = None
    last_seen: int | None = None
    last_data_sent: int | None = None
    unknown: dict = field(default_factory=dict)
    offset: int | None = None


@dataclass
class FolderRecord:
    folder_id: int | None = None
    path: str | None = None
    name: str | None = None
    date_added: int | None = None
    last_modified: int | None = None
    discovery_flags: set = field(default_factory=set)
    in_trash: bool = False
    acl: list = field(default_factory=list)
    peers: list = field(default_factory=list)
    unknown: dict = field(default_factory=dict)
    offset: int | None = None


@dataclass
class SyncDat:
    device: str | None = None
    identity: IdentityRecord | None = None
    identities: list = field(default_factory=list)
    access_requests: list = field(default_factory=list)
    folders: list = field(default_factory=list)
    unknown: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)
    offsets: dict = field(default_factory=dict)


@dataclass
class HistoryEntry:
    id: int
    msg: str
    time: int | None
    offset: int | None = None


@dataclass
class InfoDat:
    acl: list = field(default_factory=list)
    unknown: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)


def _offset(value):
    span = getattr(value, "span", None)
    return span[0] if span else None


def _key(k):
    return k.decode("utf-8", "surrogateescape") if isinstance(k, bytes) else str(k)


class _Reader:
    """Pulls typed fields out of one dict, remembering what was consumed."""

    def __init__(self, d, where, warnings):
        self.d = d
        self.where = where
        self.warnings = warnings
        self.used = set()

    def raw(self, *names):
        for name in names:
            k = name.encode()
            if k in self.d:
                self.used.add(k)
                return self.d[k]
        return None

    def text(self, *names):
        v = self.raw(*names)
        if v is None:
            return None
        if not isinstance(v, bytes):
            self._bad(names[0], "expected a byte string")
            return None
        return text(v)

    def int(self, *names, nonneg=False):
        v = self.raw(*names)
        if v is None:
            return None
        if isinstance(v, bytes) and re.fullmatch(rb"-?\d{1,19}", v):
            v = int(v)
        if not isinstance(v, int):
            self._bad(names[0], "expected an integer")
            return None
        if nonneg and v < 0:
            self._bad(names[0], f"negative value {v}")
            return None
        return int(v)

    def peer_id(self, *names):
        v = self.raw(*names)
        if v is None:
            return None
        if isinstance(v, bytes) and len(v) == 20:
            return PeerId(bytes(v))
        if isinstance(v, bytes) and len(v) == 40:
            try:
                return PeerId.from_hex(v.decode("ascii"))
            except ValueError:
                pass
        if isinstance(v, bytes) and len(v) == 32:
            try:
                return PeerId.from_b32(v.decode("ascii"))
            except (ForensicError, UnicodeDecodeError):
                pass
        self._bad(names[0], "not a 20-byte peer ID")
        return None

    def addr(self, *names):
        v = self.raw(*names)
        if v is None:
            return None
        try:
            return decode_netaddr(v) if isinstance(v, bytes) else None
        except BadLength:
            self._bad(names[0], f"packed address has {len(v)} bytes, expected 6")
            return None

    def _bad(self, name, reason):
        # Keep the original value so nothing is lost.
        self.used.discard(name.encode())
        self.warnings.append(f"{self.where}.{name}: {reason}")

    def unknown(self):
        return {_key(k): v for k, v in self.d.items() if k not in self.used}


def _entries(value):
    """Entries of a list, or the values of a dict keyed by ID (with keys)."""
    if isinstance(value, list):
        return [(None, v) for v in value]
    if isinstance(value, dict):
        return list(value.items())
    return []


def parse_settings(v):
    if not isinstance(v, dict):
        raise NotADict(f"settings.dat root is {type(v).__name__}, expected a dict")
    rec = SettingsRecord()
    r = _Reader(v, "settings", rec.warnings)
    rec.exe_path = r.text("exe_path")
    rec.install_time = r.int("install_time", nonneg=True)
    rec.peer_id = r.peer_id("peer_id")
    rec.log_size = r.int("log_size", nonneg=True)
    rec.search_list = r.raw("search_list")
    rec.tracker_last = r.raw("tracker_last")
    for name in ("exe_path", "install_time", "peer_id", "log_size"):
        node = v.get(name.encode())
        if node is not None:
            rec.offsets[name] = _offset(node)
    rec.unknown = r.unknown()
    return rec


def parse_identity(v, source, fingerprint=None, warnings=None):
    warnings = warnings if warnings is not None else []
    if not isinstance(v, dict):
        raise NotADict(f"identity entry is {type(v).__name__}, expected a dict")
    r = _Reader(v, "identity", warnings)
    name = r.text("name", "username")
    public = r.raw("public_keys", "public_key")
    private = r.raw("private_keys", "private_key")
    fp = fingerprint or r.text("fingerprint")
    if private is not None and source not in (IdentitySource.SyncDatIdentity, IdentitySource.IdentityDatFile):
        # Peer identities should not carry private keys; keep the bytes opaque.
        r.used.discard(b"private_keys")
        r.used.discard(b"private_key")
        warnings.append(f"identity {name!r}: private key material in a peer identity entry")
        private = None
    return IdentityRecord(name=name, public_keys=public, private_keys=private, source=source,
                          fingerprint=fp, unknown=r.unknown(), offset=_offset(v))


def _parse_acl(value, where, warnings):
    acl = []
    for idx, (key, entry) in enumerate(_entries(value)):
        if not isinstance(entry, dict):
            warnings.append(f"{where}[{idx}]: acl entry is not a dict")
            continue
        r = _Reader(entry, f"{where}[{idx}]", warnings)
        item = AclEntry(
            name=r.text("name"),
            public_keys=r.raw("public_keys", "public_key"),
            issuer=r.raw("issuer", "issuers", "signature_issuer", "signed_by"),
            linked_time=r.int("linked_time", "link_time", "linked", "time", "added", nonneg=True),
            offset=_offset(entry),
        )
        if item.name is None and isinstance(key, bytes):
            item.name = text(key)
        item.unknown = r.unknown()
        acl.append(item)
    return acl


def _parse_peers(value, where, warnings):
    peers = []
    for idx, (key, entry) in enumerate(_entries(value)):
        if not isinstance(entry, dict):
            warnings.append(f"{where}[{idx}]: peer entry is not a dict")
            continue
        r = _Reader(entry, f"{where}[{idx}]", warnings)
        peer = PeerStatus(
            name=r.text("name"),
            peer_id=r.peer_id("id", "peer_id", "peer"),
            last_addr=r.addr("last_addr"),
            last_sync_completed=r.int("last_sync_completed", nonneg=True),
            last_seen=r.int("last_seen", nonneg=True),
            last_data_sent=r.int("last_data_sent", nonneg=True),
            offset=_offset(entry),
        )
        if peer.peer_id is None and isinstance(key, bytes) and len(key) == 20:
            peer.peer_id = PeerId(bytes(key))
        peer.unknown = r.unknown()
        peers.append(peer)
    return peers


def _basename(path):
    return re.split(r"[\\/]", path.rstrip("\\/"))[-1] if path else None


def parse_folder(entry, where, warnings):
    if not isinstance(entry, dict):
        raise NotADict(f"{where}: folder entry is not a dict")
    r = _Reader(entry, where, warnings)
    folder = FolderRecord(offset=_offset(entry))
    folder.folder_id = r.int("folder_id", "id")
    folder.path = r.text("path")
    folder.name = r.text("name") or _basename(folder.path)
    folder.date_added = r.int("date_added", "added", "time_added", "added_time", nonneg=True)
    folder.last_modified = r.int("last_modified", "modified", "mtime", nonneg=True)
    trash = r.raw("in_trash", "trash", "deleted", "moved_to_trash")
    folder.in_trash = bool(trash) if isinstance(trash, int) else False
    acl = r.raw("acl")
    if acl is not None:
        folder.acl = _parse_acl(acl, f"{where}.acl", warnings)
    peers = r.raw("peers")
    if peers is not None:
        folder.peers = _parse_peers(peers, f"{where}.peers", warnings)
    for k, v in entry.items():
        if k in r.used or not isinstance(v, int):
            continue
        method = _discovery_method(_key(k))
        if method is not None:
            r.used.add(k)
            if v:
                folder.discovery_flags.add(method)
    folder.unknown = r.unknown()
    return folder


def parse_sync_dat(v):
    if not isinstance(v, dict):
        raise NotADict(f"sync.dat root is {type(v).__name__}, expected a dict")
    out = SyncDat()
    r = _Reader(v, "sync", out.warnings)
    out.device = r.text("device")
    ident = r.raw("identity")
    if ident is not None:
        try:
            out.identity = parse_identity(ident, IdentitySource.SyncDatIdentity, warnings=out.warnings)
        except MetadataError as exc:
            out.warnings.append(f"identity: {exc}")
    idents = r.raw("identities")
    for idx, (key, entry) in enumerate(_entries(idents)):
        try:
            fp = text(key) if isinstance(key, bytes) else None
            out.identities.append(parse_identity(entry, IdentitySource.SyncDatIdentities, fp, out.warnings))
        except MetadataError as exc:
            out.warnings.append(f"identities[{idx}]: {exc}")
    requests = r.raw("access-requests", "access_requests")
    for idx, (_, entry) in enumerate(_entries(requests)):
        if not isinstance(entry, dict):
            out.warnings.append(f"access-requests[{idx}]: entry is not a dict")
            continue
        rr = _Reader(entry, f"access-requests[{idx}]", out.warnings)
        req = AccessRequest(
            addr=rr.addr("addr"),
            name=rr.text("name"),
            public_keys=rr.raw("public_keys", "public_key"),
            invite=rr.text("invite"),
            folder_id=rr.int("folder_id", "folder", "id"),
            req_time=rr.int("req_time", "time", nonneg=True),
            requested_permissions=rr.int("requested_permissions"),
            granted_permissions=rr.int("granted_permissions"),
            offset=_offset(entry),
        )
        req.unknown = rr.unknown()
        out.access_requests.append(req)
    folders = r.raw("folders")
    for idx, (_, entry) in enumerate(_entries(folders)):
        try:
            out.folders.append(parse_folder(entry, f"folders[{idx}]", out.warnings))
        except MetadataError as exc:
            out.warnings.append(str(exc))
    if not out.folders:
        out.warnings.append("EmptyFolders: sync.dat lists no folders (a live install always has one)")
    for name in ("device", "identity", "identities", "access-requests", "folders"):
        node = v.get(name.encode())
        if node is not None:
            out.offsets[name] = _offset(node)
    out.unknown = r.unknown()
    return out


def parse_history(v):
    if isinstance(v, dict):
        for name in (b"history", b"value", b"entries", b"events"):
            if isinstance(v.get(name), list):
                v = v[name]
                break
        else:
            lists = [x for x in v.values() if isinstance(x, list)]
            if len(lists) != 1:
                raise NotParseable("history container holds no single entry list")
            v = lists[0]
    if not isinstance(v, list):
        raise NotParseable(f"history root is {type(v).__name__}")
    entries = []
    for entry in v:
        if not isinstance(entry, dict):
            continue
        hid = entry.get(b"id")
        msg = entry.get(b"msg")
        t = entry.get(b"time")
        if not isinstance(hid, int) or not isinstance(msg, bytes):
            continue
        entries.append(HistoryEntry(int(hid), text(msg), int(t) if isinstance(t, int) else None,
                                    _offset(entry)))
    entries.sort(key=lambda e: e.id)
    return entries


_HISTORY_MSG = re.compile(
    r"^(?:(?P<actor>.+?) )?(?P<action>added|updated|removed|deleted|renamed|moved|restored)"
    r" (?P<what>file|folder) (?P<name>.+)$",
    re.IGNORECASE,
)
_ANONYMOUS_ACTORS = {"remote peer", "peer", "you", "this device"}


def parse_history_message(msg):
    """Split "<device> updated file <name>" into (device or None, action, kind, name)."""
    m = _HISTORY_MSG.match(msg.strip())
    if not m:
        return None
    actor = m.group("actor")
    if actor is not None and actor.lower() in _ANONYMOUS_ACTORS:
        actor = None
    return actor, m.group("action").lower(), m.group("what").lower(), m.group("name")


def parse_info(v):
    if not isinstance(v, dict):
        raise NotADict(f"info.dat root is {type(v).__name__}, expected a dict")
    out = InfoDat()
    r = _Reader(v, "info", out.warnings)
    acl = r.raw("acl")
    if acl is not None:
        out.acl = _parse_acl(acl, "info.acl", out.warnings)
    out.unknown = r.unknown()
    return out


_HEX = re.compile(rb"[0-9A-Fa-f]+")


def parse_id_file(raw):
    """Share ID from a .sync/ID file: raw 20/32 bytes or whitespace-separated hex."""
    raw = bytes(raw)
    if not raw:
        raise BadShareIdLength("ID file is empty")
    compact = re.sub(rb"\s+", b"", raw)
    if compact and _HEX.fullmatch(compact):
        if len(compact) % 2 == 0 and len(compact) // 2 in (20, 32):
            return ShareId(bytes.fromhex(compact.decode("ascii")))
        if len(raw) not in (20, 32):
            raise BadShareIdLength(f"hex ID file encodes {len(compact) / 2:g} bytes, expected 20 or 32")
    if len(raw) in (20, 32):
        return ShareId(raw)
    if compact and compact.isascii() and compact.isalnum():
        raise NotHex("ID file is text but not hexadecimal")
    raise BadShareIdLength(f"ID file holds {len(raw)} bytes, expected 20 or 32")


# --- tree scanner -------------------------------------------------------------

class EvidenceKind(enum.Enum):
    SharedFolder = "SharedFolder"
    IdentityAppFolder = "IdentityAppFolder"
    DeviceFoldersDir = "DeviceFoldersDir"


@dataclass(frozen=True)
class FileEntry:
    name: str
    size: int
    mtime: int


@dataclass
class FolderEvidence:
    root_path: str
    kind: EvidenceKind
    share_id: ShareId | None = None
    archived_files: list = field(default_factory=list)
    live_files: list = field(default_factory=list)
    artifacts: list = field(default_factory=list)


@dataclass
class DeviceFolderMapping:
    peer_id_b32: str
    folder_ids: list
    path: str


@dataclass
class ScanResult:
    folders: list = field(default_factory=list)
    device_folders: list = field(default_factory=list)
    warnings: list = field(default_factory=list)


_SYNC_USER = re.compile(r"^\.?SyncUser\d+$")
_B32_NAME = re.compile(f"^[{ALPHABET}]+$")


def _folder_id_value(name):
    return int(name) if re.fullmatch(r"-?\d{1,19}", name) else name


def scan_tree(root):
    """Walk an exported directory tree (read-only) and classify what it holds."""
    root = Path(root)
    result = ScanResult()
    if not root.is_dir():
        raise MetadataError(f"{root}: not a readable directory")
    dirs = {}

    def onerror(exc):
        result.warnings.append(f"Unreadable: {exc.filename}: {exc.strerror}")

    for dirpath, dirnames, filenames in os.walk(root, onerror=onerror, followlinks=False):
        dirnames.sort()
        rel = Path(dirpath).relative_to(root).as_posix()
        files = []
        for name in sorted(filenames):
            full = os.path.join(dirpath, name)
            try:
                st = os.lstat(full)
            except OSError as exc:
                result.warnings.append(f"Unreadable: {full}: {exc.strerror}")
                continue
            if stat.S_ISREG(st.st_mode):
                files.append(FileEntry(name, st.st_size, int(st.st_mtime)))
        dirs[rel] = (list(dirnames), files)

    def child(rel, name):
        return name if rel == "." else f"{rel}/{name}"

    def collect(rel, skip):
        """Files under rel (names relative to rel), not descending into skip."""
        out = []
        stack = [(rel, "")]
        while stack:
            cur, prefix = stack.pop()
            subdirs, files = dirs.get(cur, ([], []))
            out.extend(FileEntry(prefix + f.name, f.size, f.mtime) for f in files)
            for d in subdirs:
                path = child(cur, d)
                if path not in skip:
                    stack.append((path, prefix + d + "/"))
        return sorted(out, key=lambda f: f.name)

    shared = {rel for rel, (subdirs, _) in dirs.items() if ".sync" in subdirs}
    for rel in sorted(dirs):
        subdirs, files = dirs[rel]
        name = rel.rsplit("/", 1)[-1]
        is_user = bool(_SYNC_USER.match(name))
        if rel in shared or is_user:
            ev = FolderEvidence(rel, EvidenceKind.IdentityAppFolder if is_user else EvidenceKind.SharedFolder)
            dot = child(rel, ".sync")
            if rel in shared:
                id_path = root / dot / "ID"
                if id_path.is_file():
                    try:
                        ev.share_id = parse_id_file(id_path.read_bytes())
                    except (MetadataError, OSError) as exc:
                        result.warnings.append(f"{dot}/ID: {exc}")
                ev.archived_files = collect(child(dot, "Archive"), set())
                skip = {dot} | {s for s in shared if s != rel and s.startswith(rel + "/")}
                ev.live_files = collect(rel, skip)
            if is_user:
                ev.artifacts = _identity_artifacts(rel, dirs, child)
            result.folders.append(ev)
        parts = rel.split("/")
        if len(parts) >= 3 and parts[-1] == "folders" and parts[-3] == "devices":
            b32 = parts[-2]
            if not _B32_NAME.match(b32):
                result.warnings.append(f"{rel}: device directory {b32!r} is not base32")
            entries = sorted(set(subdirs) | {f.name for f in files})
            result.device_folders.append(
                DeviceFolderMapping(b32, [_folder_id_value(e) for e in entries], rel))
            result.folders.append(FolderEvidence(rel, EvidenceKind.DeviceFoldersDir))
    return result


def _identity_artifacts(rel, dirs, child):
    found = []
    _, files = dirs[rel]
    if any(f.name == "identity.dat" for f in files):
        found.append(child(rel, "identity.dat"))
    ident_dir = child(rel, "identities")
    if ident_dir in dirs:
        found.extend(child(ident_dir, f.name) for f in dirs[ident_dir][1])
    folders_dir = child(rel, "folders")
    if folders_dir in dirs:
        for sub in dirs[folders_dir][0]:
            sub_rel = child(folders_dir, sub)
            if any(f.name == "info.dat" for f in dirs.get(sub_rel, ([], []))[1]):
                found.append(child(sub_rel, "info.dat"))
    return found


def load_dat(path):
    """Read and decode a .dat file; returns (value, DecodeResult)."""
    data = Path(path).read_bytes()
    result = bencode.decode(data)
    return result.value, result


def detect_kind(path, value=None):
    name = Path(path).name.lower()
    if name.endswith(".old"):
        name = name[:-4]
    for kind in ("settings", "sync", "history", "identity", "info"):
        if name == f"{kind}.dat":
            return kind
    if value is not None and isinstance(value, dict):
        keys = set(value)
        if keys & {b"folders", b"access-requests", b"device"}:
            return "sync"
        if keys & {b"install_time", b"exe_path", b"peer_id"}:
            return "settings"
        if b"acl" in keys:
            return "info"
        if keys & {b"name", b"public_keys"}:
            return "identity"
    if isinstance(value, list):
        return "history"
    return None


def is_superseded(path):
    return Path(path).name.lower().endswith(".old")
