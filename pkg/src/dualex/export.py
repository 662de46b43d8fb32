"""Graphviz DOT rendering of scored targets and CSV statistics tables."""

from __future__ import annotations

import csv
import io
from typing import TYPE_CHECKING, Iterable

from .graph import Cfg
from .scoring import ScoreMap

if TYPE_CHECKING:
    from .pipeline import RunReport

BASE_SIZE = 0.3  # inches, diameter of a node with no hits
STATS_COLUMNS = ["config", "target", "matched_queries", "avg_matched_query_nodes",
                 "max_score", "min_score"]


class ExportError(ValueError):
    pass


def _q(s: str) -> str:
    return '"' + s.replace("\\", "\\\\").replace('"', '\\"') + '"'


def node_color(score: int) -> str:
    if score > 0:
        return "red"
    if score < 0:
        return "blue"
    return "black"


def node_size(scores: ScoreMap, node_id: str) -> float:
    return BASE_SIZE * (1 + scores.malicious_hits[node_id] + scores.benign_hits[node_id])


def export_dot(target: Cfg, scores: ScoreMap) -> str:
    """DOT text: red for S > 0, blue for S < 0, black for 0; size grows with hit count."""
    ids = [n.id for n in target.nodes]
    if set(ids) != set(scores.score) or set(ids) != set(scores.malicious_hits):
        raise ExportError(f"score map for {scores.target_id!r} does not cover the nodes of {target.id!r}")
    kind, arrow = ("digraph", "->") if target.directed else ("graph", "--")
    lines = [f"{kind} {_q(target.id)} {{",
             "  node [shape=circle, style=filled, fixedsize=true, label=\"\", fontcolor=white];"]
    for v in ids:
        s = scores.score[v]
        size = node_size(scores, v)
        lines.append(f"  {_q(v)} [fillcolor={node_color(s)}, width={size:.3f}, height={size:.3f}, "
                     f"tooltip={_q(f'{v}: S={s}')}];")
    for e in target.edges:
        lines.append(f"  {_q(e.src)} {arrow} {_q(e.dst)};")
    lines.append("}")
    return "\n".join(lines) + "\n"


def export_stats_csv(reports: Iterable["RunReport"]) -> str:
    """One row per (config, target) across all reports."""
    reports = list(reports)
    if not reports:
        raise ExportError("no reports to export")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(STATS_COLUMNS)
    for rep in reports:
        for row in rep.rows:
            avg = row["avg_matched_query_nodes"]
            w.writerow([rep.fingerprint, row["target"], row["matched_queries"],
                        "" if avg is None else repr(float(avg)), row["max_score"], row["min_score"]])
    return buf.getvalue()
