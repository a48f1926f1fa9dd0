"""sync.log parser.

Each physical line becomes exactly one LogEvent. Recognition is anchored
on stable substrings of the known messages; anything else is kept as an
Unrecognized event, so the concatenated ``raw`` fields always reproduce
the input exactly.
"""
import enum
import json
import re
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path


class Kind(enum.Enum):
    PlatformVersion = "PlatformVersion"
    LocalPeerId = "LocalPeerId"
    MasterFolderCreate = "MasterFolderCreate"
    MasterFolderDisconnect = "MasterFolderDisconnect"
    IpAssigned = "IpAssigned"
    IpChanged = "IpChanged"
    IncomingConnection = "IncomingConnection"
    PingReceived = "PingReceived"
    PeerAddress = "PeerAddress"
    PeerFound = "PeerFound"
    IdMessage = "IdMessage"
    NewDeviceFound = "NewDeviceFound"
    HelloSent = "HelloSent"
    HelloReceived = "HelloReceived"
    TrackerRequest = "TrackerRequest"
    PeriodicScan = "PeriodicScan"
    FolderProcessing = "FolderProcessing"
    TorrentCreated = "TorrentCreated"
    FileTimeSet = "FileTimeSet"
    FileInserted = "FileInserted"
    FolderRemoved = "FolderRemoved"
    ApiResponse = "ApiResponse"
    ApiRequest = "ApiRequest"
    ApiCallback = "ApiCallback"
    Unrecognized = "Unrecognized"


NAMED_APIS = frozenset({
    "getmfdevices", "getsyncfolders", "getpendingrequests", "getfoldersstoragepath",
    "setfoldersstoragepath", "addsyncfolder", "history",
})


@dataclass(frozen=True)
class LogEvent:
    timestamp: datetime | None
    line_no: int
    raw: str
    kind: Kind
    fields: dict = field(default_factory=dict)
    prefix: str | None = None
    tags: tuple = ()

    def to_json(self):
        return {
            "line_no": self.line_no,
            "timestamp": self.timestamp.isoformat(sep=" ") if self.timestamp else None,
            "kind": self.kind.value,
            "prefix": self.prefix,
            "tags": list(self.tags),
            "fields": self.fields,
            "raw": self.raw,
        }


@dataclass
class LogStats:
    total: int = 0
    recognized: int = 0
    unrecognized: int = 0
    by_kind: Counter = field(default_factory=Counter)


_TS = re.compile(r"^\[(\d{4}-\d{2}-\d{2} \d{2}:\d{2}:\d{2})\]\s?")
# "SD[BBAD]: ", "SF[1F7E] [A2B5]: ", "SSLEH[0x15fa28b0]: ", "MD[init]: "
_PREFIX = re.compile(r"^([A-Za-z]+)((?:\s*\[[^\]\s]*\])+):\s*")
_TAG = re.compile(r"\[([^\]\s]*)\]")

_HEX = r"[0-9A-Fa-f]+"
_ADDR = r"\d{1,3}(?:\.\d{1,3}){3}:\d{1,5}"
_IP = r"\d{1,3}(?:\.\d{1,3}){3}"
_B32 = r"[A-Z2-7]+"


def _hex_field(fields, name, value, widths=(40,)):
    fields[name] = value
    fields[name.replace("_hex", "_valid")] = len(value) in widths and re.fullmatch(_HEX, value) is not None


def _b32_field(fields, name, value):
    fields[name] = value
    fields[name.replace("_b32", "_valid")] = len(value) == 32


# Order matters: more specific anchors come first.
_RULES = []


def _rule(kind, anchor, pattern):
    def register(build):
        _RULES.append((kind, anchor, re.compile(pattern), build))
        return build
    return register


@_rule(Kind.PlatformVersion, "platform:", r"platform:\s*(?P<platform>.*?)(?:\s+version:\s*(?P<version>\S+))?\s*$")
def _(m, f):
    f["platform"] = m["platform"]
    f["version"] = m["version"]


@_rule(Kind.PlatformVersion, "version:", r"^version:\s*(?P<version>\S+)\s*$")
def _(m, f):
    f["platform"] = None
    f["version"] = m["version"]


@_rule(Kind.LocalPeerId, "My PeerID:", rf"My PeerID:\s*(?P<id>{_HEX})")
def _(m, f):
    _hex_field(f, "peer_id_hex", m["id"])


@_rule(Kind.MasterFolderCreate, "Master Folder: create", r"Master Folder: create")
def _(m, f):
    pass


@_rule(Kind.MasterFolderDisconnect, "disconnect master folder", r"disconnect master folder")
def _(m, f):
    pass


@_rule(Kind.IpChanged, "Changing IP address from", rf"Changing IP address from (?P<a>{_IP}) to (?P<b>{_IP})")
def _(m, f):
    f["from"] = m["a"]
    f["to"] = m["b"]


@_rule(Kind.IpAssigned, "Using IP address", rf"Using IP address (?P<a>{_IP})")
def _(m, f):
    f["addr"] = m["a"]


@_rule(Kind.IncomingConnection, "Incoming connection from", rf"Incoming connection from (?P<a>{_ADDR})")
def _(m, f):
    f["addr"] = m["a"]


@_rule(Kind.PingReceived, "Got ping",
       rf"Got ping \(broadcast: (?P<b>\d+)\) from peer (?P<a>{_ADDR}) \((?P<id>{_HEX})\)")
def _(m, f):
    f["addr"] = m["a"]
    f["broadcast"] = m["b"] != "0"
    _hex_field(f, "peer_id_hex", m["id"])


@_rule(Kind.PeerAddress, "Peer ", rf"^Peer (?P<n>\d+): (?P<local>local IP )?(?P<a>{_ADDR})(?:\s+(?P<id>{_HEX}))?\s*$")
def _(m, f):
    f["index"] = int(m["n"])
    f["addr"] = m["a"]
    f["local"] = bool(m["local"])
    if m["id"]:
        _hex_field(f, "peer_id_hex", m["id"])


@_rule(Kind.PeerFound, "Found peer",
       rf"Found peer (?P<id>{_HEX}) (?P<a>{_ADDR})(?: direct:(?P<d>\d+))?(?: transport:(?P<t>\d+))?"
       r"(?: version: ?(?P<v>\S+))?")
def _(m, f):
    _hex_field(f, "peer_id_hex", m["id"])
    f["addr"] = m["a"]
    f["direct"] = None if m["d"] is None else m["d"] != "0"
    f["transport"] = None if m["t"] is None else int(m["t"])
    f["version"] = m["v"]


@_rule(Kind.IdMessage, "Got id message from peer",
       rf"Got id message from peer (?P<name>.+?) \((?P<id>{_HEX})\)(?:\s+(?P<v>\S+))?")
def _(m, f):
    f["device_name"] = m["name"]
    _hex_field(f, "peer_id_hex", m["id"])
    f["version"] = m["v"]


@_rule(Kind.NewDeviceFound, "new device found", rf"new device found (?P<name>.+?) \((?P<id>{_B32})\)")
def _(m, f):
    f["device_name"] = m["name"]
    _b32_field(f, "peer_id_b32", m["id"])


@_rule(Kind.HelloSent, "hello packet", rf"hello packet \{{\s*share:\s*(?P<id>{_HEX})\s*\}} has been sent")
def _(m, f):
    _hex_field(f, "share_id_hex", m["id"], (40, 64))


@_rule(Kind.HelloReceived, "received hello packet", rf"received hello packet,?\s*\{{\s*share:\s*(?P<id>{_HEX})\s*\}}")
def _(m, f):
    _hex_field(f, "share_id_hex", m["id"], (40, 64))


@_rule(Kind.TrackerRequest, "Requesting peers from tracker",
       rf"Requesting peers from tracker (?P<a>{_ADDR}) for share (?P<id>{_HEX})")
def _(m, f):
    f["tracker_addr"] = m["a"]
    _hex_field(f, "share_id_hex", m["id"], (40, 64))


@_rule(Kind.PeriodicScan, "started periodic scan for", r'started periodic scan for "(?P<p>.*)"')
def _(m, f):
    f["path"] = m["p"]


@_rule(Kind.FolderProcessing, "Processing folder", r'Processing folder "(?P<name>.*)" \((?P<id>-?\d+)\)')
def _(m, f):
    f["name"] = m["name"]
    f["folder_id"] = int(m["id"])


@_rule(Kind.TorrentCreated, "new torrent created for file",
       rf"new torrent created for file (?P<file>.+?) mt:(?P<mt>-?\d+) (?P<h>{_HEX})\s*$")
def _(m, f):
    f["file"] = m["file"]
    f["mtime"] = int(m["mt"])
    f["hash_hex"] = m["h"]


@_rule(Kind.FileTimeSet, "setting time for file", r'setting time for file "(?P<p>.*)" to (?P<t>-?\d+)')
def _(m, f):
    f["path"] = m["p"]
    f["time"] = int(m["t"])


@_rule(Kind.FileInserted, "insert file", r'insert file "(?P<p>.*)"(?:\s*=\s*(?P<s>\S+))?')
def _(m, f):
    f["path"] = m["p"]
    f["suffix"] = m["s"]


@_rule(Kind.FolderRemoved, "Folder being removed", r'files at "(?P<p>.*)" are being removed')
def _(m, f):
    f["path"] = m["p"]


@_rule(Kind.ApiResponse, "API: <--", r"API: <-- (?P<name>[A-Za-z_]\w*)\(")
def _(m, f):
    api = _extract(m.string, m.start())
    f["api_name"] = api["api_name"]
    f["named"] = api["api_name"] in NAMED_APIS
    f["body_text"] = api["body_text"]
    f["complete"] = api["complete"]
    f["body_parsed"], f["lenient"] = _parse_body(api["body_text"]) if api["complete"] else (None, False)


@_rule(Kind.ApiRequest, "API: -->", r"API: --> (?P<name>[A-Za-z_]\w*)\((?P<params>.*)\)\s*$")
def _(m, f):
    f["api_name"] = m["name"]
    f["named"] = m["name"] in NAMED_APIS
    f["params_text"] = m["params"]


@_rule(Kind.ApiCallback, "API: callback", r"API: callback id=(?P<id>\d+),\s*value=(?P<v>.*)$")
def _(m, f):
    f["callback_id"] = int(m["id"])
    f["value_text"] = m["v"]


def _split_terminator(line):
    body = line
    if body.endswith("\n"):
        body = body[:-1]
    if body.endswith("\r"):
        body = body[:-1]
    return body


def parse_line(line, line_no=1):
    """Classify one line; never raises."""
    body = _split_terminator(line)
    timestamp = None
    m = _TS.match(body)
    if m:
        try:
            timestamp = datetime.strptime(m.group(1), "%Y-%m-%d %H:%M:%S")
        except ValueError:
            timestamp = None
        body = body[m.end():]
    prefix, tags = None, ()
    pm = _PREFIX.match(body)
    if pm:
        prefix = pm.group(1)
        tags = tuple(_TAG.findall(pm.group(2)))
        body = body[pm.end():]
    for kind, anchor, pattern, build in _RULES:
        if anchor not in body:
            continue
        mm = pattern.search(body)
        if mm is None:
            continue
        fields = {}
        build(mm, fields)
        return LogEvent(timestamp, line_no, line, kind, fields, prefix, tags)
    return LogEvent(timestamp, line_no, line, Kind.Unrecognized, {}, prefix, tags)


def split_lines(stream):
    """Split on '\\n' keeping terminators, so ''.join(result) == stream."""
    parts = stream.split("\n")
    lines = [p + "\n" for p in parts[:-1]]
    if parts[-1]:
        lines.append(parts[-1])
    return lines


def parse_log(stream):
    if isinstance(stream, (bytes, bytearray)):
        stream = bytes(stream).decode("utf-8", "surrogateescape")
    events = [parse_line(line, i) for i, line in enumerate(split_lines(stream), start=1)]
    stats = LogStats(total=len(events))
    for ev in events:
        stats.by_kind[ev.kind.value] += 1
    stats.unrecognized = stats.by_kind.get(Kind.Unrecognized.value, 0)
    stats.recognized = stats.total - stats.unrecognized
    return events, stats


def parse_log_file(path):
    return parse_log(Path(path).read_bytes())


_OPEN = {"(": ")", "[": "]", "{": "}"}


def _extract(line, start):
    """Balanced scan of the body after 'API: <-- name(' starting near ``start``."""
    m = re.compile(r"API: <-- (?P<name>[A-Za-z_]\w*)\(").search(line, start)
    name = m["name"]
    i = m.end()
    stack = [")"]
    in_str = False
    j = i
    while j < len(line):
        c = line[j]
        if in_str:
            if c == "\\":
                j += 1
            elif c == '"':
                in_str = False
        elif c == '"':
            in_str = True
        elif c in _OPEN:
            stack.append(_OPEN[c])
        elif c in ")]}":
            if c != stack[-1]:
                break
            stack.pop()
            if not stack:
                return {"api_name": name, "body_text": line[i:j], "complete": True}
        j += 1
    return {"api_name": name, "body_text": _split_terminator(line[i:]).rstrip(), "complete": False}


_BAD_ESCAPE = re.compile(r'\\(?!["\\/bfnrt]|u[0-9A-Fa-f]{4})')


def _parse_body(text):
    """JSON parse; retry once with stray backslashes (Windows paths) doubled."""
    try:
        return json.loads(text), False
    except ValueError:
        pass
    try:
        return json.loads(_BAD_ESCAPE.sub(r"\\\\", text)), True
    except ValueError:
        return None, False


def extract_api_json(line):
    """Body of an 'API: <-- name(...)' line, or None when the line has none."""
    m = re.search(r"API: <-- [A-Za-z_]\w*\(", line)
    if m is None:
        return None
    return _extract(line, m.start())


def iter_api_values(event):
    """Parsed API body 'value' (or the body itself) of an ApiResponse, else None."""
    if event.kind is not Kind.ApiResponse:
        return None
    body = event.fields.get("body_parsed")
    if isinstance(body, dict) and "value" in body:
        return body["value"]
    return body
