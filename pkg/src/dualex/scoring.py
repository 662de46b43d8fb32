"""Node risk scoring against a verified query box.

For every malicious prototype that matches the target at all, each target
node covered by at least one of its mappings gains +1.  Then, for every
benign prototype, each covered node whose score is still <= 0 loses 1.  A
node touched by any malicious prototype therefore keeps a score equal to the
number of malicious prototypes covering it, and uncovered nodes stay at 0.

Mapping multiplicity is kept separately as per-node hit counts; it drives
node size in visualisations and does not feed the score.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .graph import Cfg
from .matching import DEFAULT_CAP, DEFAULT_DELTA, EXACT, MONOMORPHISM, MatchQuery, MatchResult, vf2_match
from .querybox import QueryBox


class ScoringError(ValueError):
    pass


@dataclass(frozen=True)
class MatchSettings:
    mode: str = MONOMORPHISM
    predicate: str = EXACT
    delta: float = DEFAULT_DELTA
    cap: int = DEFAULT_CAP


@dataclass
class ScoreMap:
    target_id: str
    node_ids: list[str]
    score: dict[str, int]
    malicious_hits: dict[str, int]
    benign_hits: dict[str, int]
    # per prototype id: (partition, nodes in prototype, matched?, truncated?)
    matches: list[tuple[str, str, int, bool, bool]] = field(default_factory=list)

    @property
    def truncated(self) -> bool:
        return any(m[4] for m in self.matches)

    def positive(self) -> set[str]:
        return {v for v, s in self.score.items() if s > 0}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["node_id", "score", "malicious_hits", "benign_hits"])
        for v in self.node_ids:
            w.writerow([v, self.score[v], self.malicious_hits[v], self.benign_hits[v]])
        return buf.getvalue()


def _match(proto: Cfg, target: Cfg, settings: MatchSettings) -> MatchResult:
    return vf2_match(MatchQuery(proto, target, settings.mode, settings.predicate,
                                settings.delta, settings.cap))


def risk_score(target: Cfg, box: QueryBox, settings: MatchSettings = MatchSettings(),
               results: Optional[dict[str, MatchResult]] = None) -> ScoreMap:
    """Score every target node against the box.

    ``results`` may carry precomputed match results keyed by prototype id.
    """
    if len(box) == 0:
        raise ScoringError("query box is empty; nothing to explain against")
    ids = [n.id for n in target.nodes]
    score = {v: 0 for v in ids}
    mal_hits = {v: 0 for v in ids}
    ben_hits = {v: 0 for v in ids}
    records = []

    def run(proto):
        r = results.get(proto.graph.id) if results else None
        return r if r is not None else _match(proto.graph, target, settings)

    for proto in box.malicious:
        r = run(proto)
        records.append((proto.graph.id, proto.partition, len(proto.graph.nodes), r.matched, r.truncated))
        for v in r.covered():
            score[v] += 1
        for v, c in r.hit_counts().items():
            mal_hits[v] += c
    for proto in box.benign:
        r = run(proto)
        records.append((proto.graph.id, proto.partition, len(proto.graph.nodes), r.matched, r.truncated))
        for v in r.covered():
            if score[v] <= 0:
                score[v] -= 1
        for v, c in r.hit_counts().items():
            ben_hits[v] += c
    return ScoreMap(target.id, ids, score, mal_hits, ben_hits, records)


@dataclass(frozen=True)
class TargetStats:
    target_id: str
    matched_queries: int
    avg_matched_query_nodes: Optional[float]  # None when nothing matched
    matched_malicious: int
    matched_benign: int
    max_score: int
    min_score: int
    positive_nodes: int
    negative_nodes: int
    truncated: bool


def target_stats(scores: ScoreMap) -> TargetStats:
    matched = [m for m in scores.matches if m[3]]
    avg = sum(m[2] for m in matched) / len(matched) if matched else None
    vals = list(scores.score.values()) or [0]
    return TargetStats(
        target_id=scores.target_id,
        matched_queries=len(matched),
        avg_matched_query_nodes=avg,
        matched_malicious=sum(1 for m in matched if m[1] == "malicious"),
        matched_benign=sum(1 for m in matched if m[1] == "benign"),
        max_score=max(vals),
        min_score=min(vals),
        positive_nodes=sum(1 for s in vals if s > 0),
        negative_nodes=sum(1 for s in vals if s < 0),
        truncated=scores.truncated,
    )


def match_stats(targets: Sequence[Cfg], box: QueryBox,
                settings: MatchSettings = MatchSettings()) -> list[TargetStats]:
    """Per-target matched-query counts and average matched prototype size."""
    if len(box) == 0:
        return [TargetStats(t.id, 0, None, 0, 0, 0, 0, 0, 0, False) for t in targets]
    return [target_stats(risk_score(t, box, settings)) for t in targets]


def summarize(stats: Sequence[TargetStats]) -> dict:
    """Aggregate over targets; averages skip targets with no matches."""
    with_match = [s for s in stats if s.matched_queries > 0]
    avgs = [s.avg_matched_query_nodes for s in with_match]
    return {
        "targets": len(stats),
        "matched_targets": len(with_match),
        "mean_matched_queries": (sum(s.matched_queries for s in stats) / len(stats)) if stats else None,
        "mean_avg_matched_query_nodes": (sum(avgs) / len(avgs)) if avgs else None,
    }
