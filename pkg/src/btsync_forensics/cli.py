"""Command-line entry point: ``btsync-forensics <subcommand> ...``.

Exit codes: 0 success, 1 typed parse/analysis error or unreadable input,
2 usage error. Machine output is JSON on stdout unless --output is given.
"""
import argparse
import dataclasses
import enum
import json
import logging
import sys
from datetime import datetime
from pathlib import Path

from . import __version__, correlate, fixtures, keycodec, logparse, metadata, netdissect, report
from .errors import ForensicError
from .keycodec import NetAddr, PeerId, ShareId

log = logging.getLogger("btsync_forensics")

METHODOLOGY = """\
methodology mapping:
  parse-dat     installation time, local peer ID and device name (settings.dat);
                identities, access requests, folders and peer status (sync.dat);
                file activity (history.dat); identity and ACL files
  parse-log     non-encoded peer IDs, device names, fingerprints, addresses,
                tracker/relay contacts and API bodies from sync.log
  parse-link    folder name, folder ID, peer ID and expiry from a sharing link
  key           master-key type and permission; share ID derived from a key
  scan          shared folders (.sync/ID, archive), identity app folders and
                per-device folder mappings in an exported tree
  dissect       LAN pings and tracker exchanges recovered from a capture
  correlate     merges every source of a case into one evidence graph with
                provenance, findings (links, conflicts, gaps) and a timeline
  report        presentation: the six report sections, findings and timeline
  gen-fixtures  synthetic case with a ground-truth manifest for testing
"""


class UsageError(Exception):
    pass


def jsonable(v):
    """Convert parser output (dataclasses, enums, IDs, bencode values) to JSON data."""
    if v is None or isinstance(v, (bool, str)):
        return v
    if isinstance(v, int):
        return int(v)
    if isinstance(v, float):
        return v
    if isinstance(v, (bytes, bytearray)):
        try:
            s = bytes(v).decode("utf-8")
            if s.isprintable():
                return s
        except UnicodeDecodeError:
            pass
        return {"hex": bytes(v).hex()}
    if isinstance(v, enum.Enum):
        return v.value
    if isinstance(v, (PeerId, ShareId)):
        return v.hex
    if isinstance(v, NetAddr):
        return str(v)
    if isinstance(v, datetime):
        return v.isoformat(sep=" ")
    if hasattr(v, "to_json"):
        return v.to_json()
    if dataclasses.is_dataclass(v):
        return {f.name: jsonable(getattr(v, f.name)) for f in dataclasses.fields(v)}
    if isinstance(v, dict):
        return {(k.decode("utf-8", "replace") if isinstance(k, bytes) else str(k)): jsonable(x)
                for k, x in v.items()}
    if isinstance(v, (set, frozenset)):
        return sorted((jsonable(x) for x in v), key=repr)
    if isinstance(v, (list, tuple)):
        return [jsonable(x) for x in v]
    return str(v)


def dump_json(obj):
    return (json.dumps(obj, sort_keys=True, indent=1, ensure_ascii=False) + "\n").encode("utf-8")


# --- subcommands -------------------------------------------------------------

DAT_KINDS = ("auto", "settings", "sync", "history", "identity", "info", "id")


def cmd_parse_dat(args):
    path = Path(args.path)
    if args.kind == "id":
        share = metadata.parse_id_file(path.read_bytes())
        return {"path": str(path), "kind": "id", "share_id": share.hex, "width": share.width.value}
    value, result = metadata.load_dat(path)
    out = {"path": str(path), "superseded": metadata.is_superseded(path),
           "decode_warnings": jsonable(result.warnings), "trailing_bytes": result.trailing}
    if args.raw:
        out["value"] = jsonable(value)
        return out
    kind = metadata.detect_kind(path, value) if args.kind == "auto" else args.kind
    if kind is None:
        raise ForensicError(f"{path}: cannot tell which .dat file this is; pass --kind")
    try:
        if kind == "settings":
            rec = metadata.parse_settings(value)
        elif kind == "sync":
            rec = metadata.parse_sync_dat(value)
        elif kind == "history":
            rec = [dict(jsonable(e), parsed=jsonable(metadata.parse_history_message(e.msg)))
                   for e in metadata.parse_history(value)]
        elif kind == "identity":
            rec = metadata.parse_identity(value, metadata.IdentitySource.IdentityDatFile)
        else:
            rec = metadata.parse_info(value)
    except metadata.MetadataError as exc:
        raise ForensicError(f"{path}: {exc}") from None
    out["kind"] = kind
    out["record"] = jsonable(rec)
    return out


def cmd_parse_log(args):
    events, stats = logparse.parse_log_file(args.path)
    if args.only:
        wanted = set(args.only)
        unknown = wanted - {k.value for k in logparse.Kind}
        if unknown:
            raise UsageError(f"unknown event kind(s): {', '.join(sorted(unknown))}")
        events = [e for e in events if e.kind.value in wanted]
    log.info("%s: %d lines, %d recognised", args.path, stats.total, stats.recognized)
    out_events = []
    for e in events:
        item = e.to_json()
        api = logparse.extract_api_json(e.raw)
        if api is not None:
            item["api"] = jsonable(api)
        out_events.append(item)
    return {"path": str(args.path), "events": out_events,
            "stats": {"total": stats.total, "recognized": stats.recognized,
                      "unrecognized": stats.unrecognized, "by_kind": dict(sorted(stats.by_kind.items()))}}


def cmd_parse_link(args):
    link = keycodec.parse_sync_link(args.url)
    return {
        "base": link.base,
        "folder_name": link.folder_name,
        "size_approx": link.size_approx,
        "folder_id": link.folder_id.hex().upper() if link.folder_id else None,
        "temp_key": link.temp_key,
        "expiry": link.expiry,
        "peer_id": link.peer_id.hex if link.peer_id else None,
        "peer_id_b32": link.peer_id.b32 if link.peer_id else None,
        "extras": [list(kv) for kv in link.extras],
    }


def cmd_key(args):
    if args.key_command == "classify":
        key = keycodec.classify_key(args.key)
        return {"key_type": key.key_type, "permission": key.permission.value, "description": key.description,
                "length": len(args.key), "extra": key.extra,
                "share_id": keycodec.share_id_of_key(args.key).hex}
    text = args.peer_id
    if keycodec.is_hex_id(text):
        pid = PeerId.from_hex(text)
    else:
        pid = PeerId.from_b32(text.upper())
    return {"hex": pid.hex, "b32": pid.b32}


def cmd_scan(args):
    root = Path(args.root)
    if not root.is_dir():
        raise ForensicError(f"{root}: not a directory")
    return jsonable(metadata.scan_tree(root))


def cmd_dissect(args, registry):
    cap = netdissect.read_capture(args.path, strict=args.strict)
    result = netdissect.discover(cap, registry)
    messages = []
    for m in result.messages:
        rec = m.origin
        messages.append({
            "packet": rec.index, "ts": rec.ts_sec + rec.ts_usec / 1e6, "utc": report.utc_iso(rec.ts_sec),
            "src": str(rec.src), "dst": str(rec.dst),
            "src_class": registry.classify(rec.src).value, "dst_class": registry.classify(rec.dst).value,
            "message": netdissect.message_to_json(m.variant),
        })
    for d in result.diagnostics:
        log.info("%s: %s", args.path, d)
    return {"path": str(args.path), "messages": messages, "stats": result.stats,
            "diagnostics": result.diagnostics}


def cmd_correlate(args, registry, tz):
    snap = correlate.correlate_case(args.case, registry, tz or 0)
    for w in snap.data.get("warnings", []):
        log.info("warning: %s", w)
    return snap.to_json().encode("utf-8")


def cmd_report(args, tz):
    path = Path(args.graph)
    text = path.read_text(encoding="utf-8")
    try:
        snap = correlate.GraphSnapshot.from_json(text)
    except (ValueError, ForensicError) as exc:
        raise ForensicError(f"{path}: not an evidence graph file ({exc})") from None
    if args.format == "text":
        return report.render_text(snap, tz).encode("utf-8")
    return report.render_json(snap, tz)


def cmd_gen_fixtures(args):
    manifest = fixtures.gen_case(args.seed, args.profile, args.out)
    return {"out": str(args.out), "profile": manifest["profile"], "seed": manifest["seed"],
            "devices": len(manifest["devices"]), "folders": len(manifest["folders"]),
            "files": len(manifest["files"]), "expected_edges": len(manifest["expected_edges"])}


# --- argument parsing --------------------------------------------------------

def _global_options(parser, suppress):
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("-o", "--output", default=default, help="write output to this file instead of stdout")
    parser.add_argument("--registry", default=default, help="JSON endpoint registry replacing the built-in one")
    parser.add_argument("--tz-offset", default=default, metavar="+HH:MM",
                        help="UTC offset of the examined machine, used for naive log times")
    parser.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS if suppress else False,
                        help="log warnings and statistics to stderr")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="btsync-forensics",
        description="Forensic examination of BitTorrent Sync 2.x artifacts.",
        epilog=METHODOLOGY,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _global_options(parser, suppress=False)
    common = argparse.ArgumentParser(add_help=False)
    _global_options(common, suppress=True)
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True

    p = sub.add_parser("parse-dat", parents=[common], help="decode a .dat file (or a .sync/ID file)")
    p.add_argument("path")
    p.add_argument("--kind", choices=DAT_KINDS, default="auto")
    p.add_argument("--raw", action="store_true", help="print the decoded bencode tree only")

    p = sub.add_parser("parse-log", parents=[common], help="extract events from sync.log")
    p.add_argument("path")
    p.add_argument("--only", action="append", metavar="KIND", help="keep only this event kind (repeatable)")

    p = sub.add_parser("parse-link", parents=[common], help="decode a sharing link")
    p.add_argument("url")

    p = sub.add_parser("key", parents=[common], help="master key and peer ID utilities")
    ksub = p.add_subparsers(dest="key_command", metavar="action")
    ksub.required = True
    kp = ksub.add_parser("classify", parents=[common], help="key type, permission and share ID")
    kp.add_argument("key")
    kp = ksub.add_parser("peer-id", parents=[common], help="convert a peer ID between hex and base32")
    kp.add_argument("peer_id")

    p = sub.add_parser("scan", parents=[common], help="classify an exported directory tree")
    p.add_argument("root")

    p = sub.add_parser("dissect", parents=[common], help="recover discovery messages from a capture")
    p.add_argument("path")
    p.add_argument("--strict", action="store_true", help="fail on a truncated final record")

    p = sub.add_parser("correlate", parents=[common], help="build the evidence graph of a case directory")
    p.add_argument("--case", required=True, help="directory with dats/, logs/, tree/, captures/, hints.json")

    p = sub.add_parser("report", parents=[common], help="render a case report from a graph file")
    p.add_argument("graph")
    p.add_argument("--format", choices=("json", "text"), default="json")

    p = sub.add_parser("gen-fixtures", parents=[common], help="write a synthetic case")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--profile", choices=[pr.value for pr in fixtures.Profile], required=True)
    p.add_argument("--out", required=True)
    return parser


def _run(args):
    tz = report.parse_tz_offset(args.tz_offset) if args.tz_offset else None
    registry = netdissect.Registry.load(args.registry) if args.registry else netdissect.DEFAULT
    cmd = args.command
    if cmd == "parse-dat":
        return cmd_parse_dat(args)
    if cmd == "parse-log":
        return cmd_parse_log(args)
    if cmd == "parse-link":
        return cmd_parse_link(args)
    if cmd == "key":
        return cmd_key(args)
    if cmd == "scan":
        return cmd_scan(args)
    if cmd == "dissect":
        return cmd_dissect(args, registry)
    if cmd == "correlate":
        return cmd_correlate(args, registry, tz)
    if cmd == "report":
        return cmd_report(args, tz)
    return cmd_gen_fixtures(args)


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    try:
        result = _run(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"{parser.prog}: error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        if args.tz_offset and "UTC offset" in str(exc):
            parser.print_usage(sys.stderr)
            print(f"{parser.prog}: error: {exc}", file=sys.stderr)
            return 2
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ForensicError as exc:
        msg = str(exc)
        source = next((getattr(args, a) for a in ("path", "root", "case", "graph") if getattr(args, a, None)), None)
        if source is not None and str(source) not in msg:
            msg = f"{source}: {msg}"
        print(f"error: {msg}", file=sys.stderr)
        return 1
    except OSError as exc:
        name = exc.filename if exc.filename is not None else "input"
        print(f"error: {name}: {exc.strerror or exc}", file=sys.stderr)
        return 1
    data = result if isinstance(result, bytes) else dump_json(result)
    if args.output:
        try:
            Path(args.output).write_bytes(data)
        except OSError as exc:
            print(f"error: {args.output}: {exc.strerror or exc}", file=sys.stderr)
            return 1
    else:
        sys.stdout.buffer.write(data)
        sys.stdout.flush()
    return 0


if __name__ == "__main__":
    sys.exit(main())
