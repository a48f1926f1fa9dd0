"""Case report built from an evidence-graph snapshot.

``build_report`` produces one JSON-shaped dict; ``render_json`` serialises
it and ``render_text`` is a plain projection of the same dict.
"""
import json
from collections import defaultdict
from datetime import datetime, timedelta, timezone

REPORT_VERSION = 1
NO_EVIDENCE = "no evidence"

SECTIONS = [
    ("installation", "Application versions and installation times"),
    ("devices", "Peer IDs, device names, identities and addresses"),
    ("folders", "Shared folders"),
    ("access_requests", "Folder access requests"),
    ("peers_per_share", "Peers per share"),
    ("files", "Synced file inventory"),
]

# Attribute names holding epoch seconds.
TIME_ATTRS = {"install_time", "date_added", "last_modified", "mtime", "archived_mtime", "time", "lastseen",
              "lastsynccompleted", "linked_time", "time_set", "torrent_mtime"}


def utc_iso(epoch):
    return datetime.fromtimestamp(epoch, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def parse_tz_offset(text):
    """'+HH:MM' / '-HH:MM' -> minutes east of UTC."""
    if text is None:
        return None
    sign = -1 if text.startswith("-") else 1
    body = text.lstrip("+-")
    hh, _, mm = body.partition(":")
    if not hh.isdigit() or (mm and not mm.isdigit()) or int(hh) > 14 or int(mm or 0) >= 60:
        raise ValueError(f"bad UTC offset {text!r}; expected +HH:MM or -HH:MM")
    return sign * (int(hh) * 60 + int(mm or 0))


def _values(node, attr):
    return [a["value"] for a in node["attrs"].get(attr, [])]


def _fact(node, attr):
    """All values of one attribute, each with its provenance; times rendered."""
    out = []
    for a in node["attrs"].get(attr, []):
        v = a["value"]
        item = {"value": v, "prov": a["prov"]}
        if attr in TIME_ATTRS and isinstance(v, (int, float)) and not isinstance(v, bool) and v >= 0:
            item["utc"] = utc_iso(v)
        out.append(item)
    return out


def _facts(node, attrs):
    return {a: _fact(node, a) for a in attrs if node["attrs"].get(a)}


def _section(items):
    return {"status": "ok" if items else NO_EVIDENCE, "items": items}


def build_report(snap, tz_offset_minutes=None):
    data = snap.data if hasattr(snap, "data") else snap
    nodes = {n["id"]: n for n in data["nodes"]}
    out_edges = defaultdict(list)
    in_edges = defaultdict(list)
    for e in data["edges"]:
        out_edges[e["src"]].append(e)
        in_edges[e["dst"]].append(e)

    def linked(cid, kind, direction="out"):
        edges = out_edges[cid] if direction == "out" else in_edges[cid]
        return [e for e in edges if e["kind"] == kind]

    devices = [n for n in data["nodes"] if n["kind"] == "device"]
    local = [n for n in devices if n["attrs"].get("local")]

    installation = []
    for n in local:
        item = {"device": n["id"], "prov": n["prov"]}
        item.update(_facts(n, ["install_time", "exe_path", "version", "platform", "storage_path"]))
        creates = [ev for ev in data["timeline"] if ev["kind"] == "log:MasterFolderCreate"]
        if creates:
            item["master_folder_created"] = [_render_event(ev, tz_offset_minutes) for ev in creates]
        installation.append(item)

    device_items = []
    for n in devices:
        item = {"device": n["id"], "local": n in local, "prov": n["prov"]}
        item.update(_facts(n, ["peer_id", "peer_id_b32", "name", "ip", "previous_ip", "version",
                               "peer_id_hex_invalid", "lastseen", "lastsynccompleted"]))
        item["identities"] = [{"identity": e["src"], "prov": e["prov"]}
                              for e in linked(n["id"], "identity-owns-device", "in")]
        item["endpoints"] = [{"endpoint": e["dst"], "class": _values(nodes[e["dst"]], "class"), "prov": e["prov"]}
                             for e in linked(n["id"], "device-seen-at-endpoint")]
        device_items.append(item)
    for n in data["nodes"]:
        if n["kind"] == "identity":
            item = {"identity": n["id"], "prov": n["prov"]}
            item.update(_facts(n, ["name", "fingerprint", "source", "devicename"]))
            device_items.append(item)

    for n in data["nodes"]:
        if n["kind"] == "endpoint":
            device_items.append({"endpoint": n["id"], "class": _values(n, "class"), "prov": n["prov"]})

    folder_items = []
    for n in data["nodes"]:
        if n["kind"] != "folder":
            continue
        item = {"folder": n["id"], "prov": n["prov"]}
        item.update(_facts(n, ["folder_id", "name", "path", "tree_path", "date_added", "last_modified",
                               "discovery", "in_trash", "removed"]))
        item["shares"] = [{"share": e["dst"], "prov": e["prov"]} for e in linked(n["id"], "folder-has-share")]
        item["devices"] = [{"device": e["src"], "prov": e["prov"]} for e in linked(n["id"], "device-has-folder", "in")]
        item["access"] = [{"identity": e["src"], "prov": e["prov"]}
                          for e in linked(n["id"], "identity-has-access", "in")]
        folder_items.append(item)

    requests = []
    for e in data["edges"]:
        if e["kind"] != "request-for-folder":
            continue
        a = e["attrs"]
        item = {"identity": e["src"], "folder": e["dst"], "prov": e["prov"],
                "permission": a.get("permission", []), "label": a.get("label", []),
                "addr": a.get("addr", []), "time": [{"value": t, "utc": utc_iso(t), "prov": e["prov"]}
                                                    for t in a.get("time", []) if isinstance(t, int)]}
        if a.get("label"):
            item["label_basis"] = "hypothesized"
        requests.append(item)

    shares = []
    for n in data["nodes"]:
        if n["kind"] != "share":
            continue
        peers = {}
        for e in linked(n["id"], "device-announces-share", "in"):
            peers.setdefault(e["src"], set()).update(_prov_keys(e["prov"]))
        for fe in linked(n["id"], "folder-has-share", "in"):
            for de in linked(fe["src"], "device-has-folder", "in"):
                peers.setdefault(de["src"], set()).update(_prov_keys(de["prov"] + fe["prov"]))
        shares.append({
            "share": n["id"], "valid": _values(n, "valid"), "prov": n["prov"],
            "folders": [e["src"] for e in linked(n["id"], "folder-has-share", "in")],
            "peers": [{"device": d, "prov": [_unkey(k) for k in sorted(p)]} for d, p in sorted(peers.items())],
            "requested_at": [{"endpoint": e["dst"], "prov": e["prov"]}
                             for e in linked(n["id"], "share-requested-at-endpoint")],
        })

    files = []
    for n in data["nodes"]:
        if n["kind"] != "file":
            continue
        item = {"file": n["id"], "prov": n["prov"]}
        item.update(_facts(n, ["name", "folder", "deleted", "size", "mtime", "archived_mtime", "torrent_mtime",
                               "torrent_hash", "time_set"]))
        item["modified_by"] = [{"device": e["src"], "action": e["attrs"].get("action", []), "prov": e["prov"]}
                               for e in linked(n["id"], "device-modified-file", "in")]
        files.append(item)

    timeline = _timeline(data["timeline"], tz_offset_minutes)
    return {
        "report_version": REPORT_VERSION,
        "tz_offset": _fmt_offset(tz_offset_minutes),
        "sections": {
            "installation": _section(installation),
            "devices": _section(device_items),
            "folders": _section(folder_items),
            "access_requests": _section(requests),
            "peers_per_share": _section(shares),
            "files": _section(files),
        },
        "findings": data["findings"],
        "timeline": timeline,
        "warnings": data.get("warnings", []),
    }


def _prov_keys(provs):
    return {json.dumps(p, sort_keys=True) for p in provs}


def _unkey(k):
    return json.loads(k)


def _fmt_offset(minutes):
    if minutes is None:
        return None
    sign = "-" if minutes < 0 else "+"
    m = abs(minutes)
    return f"{sign}{m // 60:02d}:{m % 60:02d}"


def _render_event(ev, tz_offset_minutes):
    item = {"kind": ev["kind"], "description": ev["description"], "refs": ev["refs"], "prov": ev["prov"]}
    if ev["clock"] == "utc":
        item["time"] = utc_iso(ev["epoch"])
    else:
        item["time"] = f"{ev['naive']} (local, unanchored)"
        if tz_offset_minutes is not None:
            naive = datetime.fromisoformat(ev["naive"])
            item["utc_assuming_offset"] = (naive - timedelta(minutes=tz_offset_minutes)).strftime("%Y-%m-%dT%H:%M:%SZ")
    return item


def _timeline(events, tz_offset_minutes):
    def epoch(ev):
        if ev["clock"] == "local" and tz_offset_minutes is not None:
            naive = datetime.fromisoformat(ev["naive"])
            return (naive - datetime(1970, 1, 1)).total_seconds() - tz_offset_minutes * 60
        return ev["epoch"]

    ordered = sorted(enumerate(events), key=lambda ie: (epoch(ie[1]), ie[0]))
    return [_render_event(ev, tz_offset_minutes) for _, ev in ordered]


def render_json(snap, tz_offset_minutes=None):
    report = build_report(snap, tz_offset_minutes)
    return (json.dumps(report, sort_keys=True, indent=1, ensure_ascii=False) + "\n").encode("utf-8")


def _fmt_prov(provs):
    return "; ".join(f"{p['source_kind']}:{p['path']}@{p['locator']}" for p in provs)


def _fmt_value(v):
    if isinstance(v, dict) and "value" in v:
        s = str(v["value"])
        if "utc" in v:
            s += f" ({v['utc']})"
        return s
    return str(v)


def _text_item(item, indent="  "):
    lines = []
    head_key = next(k for k in item if k not in ("prov",))
    lines.append(f"{indent}- {item[head_key]}")
    for k, v in item.items():
        if k in (head_key, "prov"):
            continue
        if isinstance(v, list):
            if not v:
                continue
            if all(isinstance(x, dict) and "value" in x for x in v):
                for x in v:
                    lines.append(f"{indent}    {k}: {_fmt_value(x)}  [{_fmt_prov(x.get('prov', []))}]")
            elif all(isinstance(x, dict) for x in v):
                for x in v:
                    main = next((x[key] for key in x if key != "prov"), "")
                    extra = ", ".join(f"{kk}={vv}" for kk, vv in x.items() if kk != "prov" and vv != main)
                    lines.append(f"{indent}    {k}: {main}{' (' + extra + ')' if extra else ''}"
                                 f"{'  [' + _fmt_prov(x['prov']) + ']' if x.get('prov') else ''}")
            else:
                lines.append(f"{indent}    {k}: {', '.join(str(x) for x in v)}")
        else:
            lines.append(f"{indent}    {k}: {v}")
    lines.append(f"{indent}    source: {_fmt_prov(item.get('prov', []))}")
    return lines


def render_text(snap, tz_offset_minutes=None):
    report = build_report(snap, tz_offset_minutes)
    lines = [f"Case report (version {report['report_version']})"]
    if report["tz_offset"]:
        lines.append(f"Local log times interpreted with UTC offset {report['tz_offset']}")
    for n, (key, title) in enumerate(SECTIONS, start=1):
        sec = report["sections"][key]
        lines.append("")
        lines.append(f"{n}. {title}")
        if sec["status"] == NO_EVIDENCE:
            lines.append(f"  ({NO_EVIDENCE})")
            continue
        for item in sec["items"]:
            lines.extend(_text_item(item))
    lines.append("")
    lines.append("Findings")
    for f in report["findings"]:
        weak = " (weak)" if f.get("weak") else ""
        lines.append(f"  - [{f['kind']}{weak}] {f['description']}")
        if f["prov"]:
            lines.append(f"      source: {_fmt_prov(f['prov'])}")
    lines.append("")
    lines.append("Timeline")
    for ev in report["timeline"]:
        utc = f" = {ev['utc_assuming_offset']}" if "utc_assuming_offset" in ev else ""
        lines.append(f"  {ev['time']}{utc}  {ev['kind']}: {ev['description']}  [{_fmt_prov(ev['prov'])}]")
    return "\n".join(lines) + "\n"
