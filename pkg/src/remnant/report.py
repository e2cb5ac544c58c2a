"""Report shapes shared by the recovery pipeline and the CLI.

A report is one plain dict with ``meta``, ``summary``, ``files``,
``audit`` and ``simulation`` sections (see docs/report_schema.md).  The
human rendering is derived from that dict and nothing else, so the two
output forms cannot drift apart.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .filetypes import CLASSES

SCHEMA_VERSION = 1
TOOL_NAME = "remnant"


def cluster_runs(clusters) -> list[list[int]]:
    """Compress a cluster list into [start, length] runs for reporting."""
    runs: list[list[int]] = []
    for c in clusters:
        if runs and c == runs[-1][0] + runs[-1][1]:
            runs[-1][1] += 1
        else:
            runs.append([c, 1])
    return runs


def exact_percent(numerator: int, denominator: int) -> float | None:
    """numerator/denominator as a percentage with one decimal, half-up.

    Computed in integer arithmetic so the rendering is an exact rational
    rounded once, not a float artifact.
    """
    if denominator == 0:
        return None
    tenths = (numerator * 1000 * 2 + denominator) // (denominator * 2)
    return tenths / 10.0


@dataclass
class RecoveredFile:
    """One recovered payload plus everything the report needs to say."""

    name: str
    size: int
    sha256: str
    file_class: str
    confidence: str
    source: dict
    path: str = ""                      # directory path inside the volume
    flags: list[str] = field(default_factory=list)
    output_path: str | None = None
    byte_identical: bool | None = None
    data: bytes | None = None           # in-memory payload, never serialized

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "path": self.path,
            "size": self.size,
            "sha256": self.sha256,
            "class": self.file_class,
            "confidence": self.confidence,
            "flags": list(self.flags),
            "source": self.source,
            "output": self.output_path,
            "byte_identical": self.byte_identical,
        }


def summarize(files, truth_files=None) -> dict:
    """Build the per-class summary table.

    With ground truth, ``attempted`` counts the truth corpus and
    ``byte_identical`` the truth files whose exact content came back;
    the percentage is identical/attempted.  Without truth the counts
    describe only what was listed and the percentage stays null.
    """
    listed_by_class = {c: 0 for c in CLASSES}
    listed_by_class["unknown"] = 0
    for f in files:
        listed_by_class.setdefault(f.file_class, 0)
        listed_by_class[f.file_class] += 1

    rows = []
    if truth_files is not None:
        recovered_hashes = {f.sha256 for f in files}
        attempted_by_class: dict[str, int] = {}
        identical_by_class: dict[str, int] = {}
        for t in truth_files:
            attempted_by_class.setdefault(t["class"], 0)
            identical_by_class.setdefault(t["class"], 0)
            attempted_by_class[t["class"]] += 1
            if t["sha256"] in recovered_hashes:
                identical_by_class[t["class"]] += 1
        for cls in sorted(attempted_by_class):
            att = attempted_by_class[cls]
            ident = identical_by_class[cls]
            rows.append({
                "class": cls,
                "attempted": att,
                "listed": listed_by_class.get(cls, 0),
                "byte_identical": ident,
                "percent": exact_percent(ident, att),
            })
        total_att = sum(attempted_by_class.values())
        total_ident = sum(identical_by_class.values())
    else:
        for cls, n in sorted(listed_by_class.items()):
            if n == 0:
                continue
            rows.append({
                "class": cls,
                "attempted": n,
                "listed": n,
                "byte_identical": None,
                "percent": None,
            })
        total_att = len(files)
        total_ident = None

    return {
        "classes": rows,
        "totals": {
            "attempted": total_att,
            "listed": len(files),
            "byte_identical": total_ident,
            "percent": exact_percent(total_ident, total_att)
            if total_ident is not None else None,
            "bytes_recovered": sum(f.size for f in files),
        },
    }


def make_report(meta: dict, summary: dict | None = None, files=(),
                audit: dict | None = None,
                simulation: dict | None = None) -> dict:
    meta = dict(meta)
    meta.setdefault("tool", TOOL_NAME)
    meta.setdefault("schema_version", SCHEMA_VERSION)
    return {
        "meta": meta,
        "summary": summary,
        "files": [f.to_dict() if isinstance(f, RecoveredFile) else f
                  for f in files],
        "audit": audit,
        "simulation": simulation,
    }


def _fmt_percent(p) -> str:
    return "n/a" if p is None else "%.1f%%" % p


def _fmt_value(v) -> str:
    if isinstance(v, str):
        return v
    return json.dumps(v, sort_keys=True)


def render_text(report: dict) -> str:
    """Human-readable rendering of a report dict (same facts, no more)."""
    out = []
    meta = report["meta"]
    out.append("%s %s" % (meta.get("tool", TOOL_NAME), meta.get("command", "")))
    for key in sorted(meta):
        if key in ("tool", "command", "schema_version"):
            continue
        if meta[key] is not None:
            out.append("  %s: %s" % (key, _fmt_value(meta[key])))

    summary = report.get("summary")
    if summary:
        out.append("")
        out.append("%-12s %9s %7s %15s %9s"
                   % ("class", "attempted", "listed", "byte-identical", "percent"))
        for row in summary["classes"]:
            out.append("%-12s %9d %7d %15s %9s"
                       % (row["class"], row["attempted"], row["listed"],
                          "-" if row["byte_identical"] is None
                          else row["byte_identical"],
                          _fmt_percent(row["percent"])))
        t = summary["totals"]
        out.append("%-12s %9d %7d %15s %9s"
                   % ("total", t["attempted"], t["listed"],
                      "-" if t["byte_identical"] is None else t["byte_identical"],
                      _fmt_percent(t["percent"])))
        out.append("bytes recovered: %d" % t["bytes_recovered"])

    files = report.get("files") or []
    if files:
        out.append("")
        for f in files:
            where = (f["path"] + "/" + f["name"]) if f["path"] else f["name"]
            if "sha256" in f:           # recovered payload row
                line = "  %-40s %10d B  %-20s %s" % (
                    where, f["size"], f["confidence"], f["sha256"][:12])
            else:                       # scan listing row
                status = "deleted" if f["deleted"] else "live"
                kind = "dir " if f.get("is_directory") else "file"
                line = "  %-40s %10d B  %-8s %s" % (
                    where, f["size"], status, kind)
                if f.get("confidence"):
                    line += "  %-20s" % f["confidence"]
                if f.get("modified"):
                    line += "  %s" % f["modified"]
            if f["flags"]:
                line += "  [" + ",".join(f["flags"]) + "]"
            out.append(line)

    audit = report.get("audit")
    if audit:
        out.append("")
        out.append("sanitization audit: %s" % audit["verdict"])
        for row in audit["files"]:
            out.append("  %-40s %-12s %d/%d bytes recoverable"
                       % (row["path"], row["verdict"],
                          row["recoverable_bytes"], row["size_bytes"]))
        out.append("recoverable: %d of %d bytes; %d recoverable / %d "
                   "partial / %d sanitized file(s)"
                   % (audit["recoverable_bytes"], audit["total_bytes"],
                      audit["recoverable_files"], audit["partial_files"],
                      audit["sanitized_files"]))

    sim = report.get("simulation")
    if sim:
        out.append("")
        out.append("simulation (%s):" % sim.get("experiment", "?"))
        for key in sorted(sim):
            if key in ("experiment", "iterations", "remanence",
                       "state_hash"):
                continue
            out.append("  %s: %s" % (key, _fmt_value(sim[key])))
        for it in sim.get("iterations", []):
            out.append("  iteration %2d: recoverable %8d B, copies %3d, "
                       "identical %.2f"
                       % (it["iteration"], it["recoverable_bytes"],
                          it["copy_count"], it["byte_identical_fraction"]))
        rem = sim.get("remanence")
        if rem:
            out.append("  remanence: %d payload(s), live %d, stale %d, "
                       "retired %d, recoverable %d B"
                       % (len(rem["payloads"]), rem["live_copies"],
                          rem["stale_copies"], rem["retired_copies"],
                          rem["recoverable_bytes"]))
            for p in rem["payloads"]:
                out.append("    %s lpns=%s copies=%d "
                           "(live %d, stale %d, retired %d)"
                           % (p["digest"][:16], p["lpns"], p["copies"],
                              p["live"], p["stale"], p["retired"]))
        if sim.get("state_hash"):
            out.append("  state hash: %s" % sim["state_hash"])
    return "\n".join(out) + "\n"


def dump_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True)
