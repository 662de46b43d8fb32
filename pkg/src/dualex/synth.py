"""Synthetic planted-motif CFG corpora.

Each graph is a directed Erdős–Rényi background whose nodes carry one of a
pool of background block features.  Malicious graphs get one malicious motif
(and, with some probability, a benign one); benign graphs get one benign
motif.  Planting overwrites the chosen nodes' features, replaces every edge
among them with the motif's edges, and then rewires the boundary so the motif
has at least one entry and one exit edge to the background.

Opcode ranges are disjoint across background, malicious and benign blocks, so
a malicious motif's features can never occur in a benign graph.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .features import node_feature, random_instruction
from .graph import BENIGN, MALICIOUS, Cfg, EdgeRecord, NodeRecord

BACKGROUND_OPCODES = tuple(range(0x00, 0x80))
MALICIOUS_OPCODES = tuple(range(0x80, 0xC0))
BENIGN_OPCODES = tuple(range(0xC0, 0x100))


@dataclass(frozen=True)
class Motif:
    name: str
    kind: str
    n_nodes: int
    edges: tuple[tuple[int, int], ...]
    features: tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        if self.kind not in (BENIGN, MALICIOUS):
            raise ValueError(f"motif {self.name!r}: kind must be benign or malicious")
        if len(self.features) != self.n_nodes:
            raise ValueError(f"motif {self.name!r}: need one feature per node")
        for s, d in self.edges:
            if not (0 <= s < self.n_nodes and 0 <= d < self.n_nodes) or s == d:
                raise ValueError(f"motif {self.name!r}: bad edge {(s, d)}")

    def as_graph(self) -> Cfg:
        nodes = tuple(NodeRecord(f"m{i}", f) for i, f in enumerate(self.features))
        edges = tuple(EdgeRecord(f"m{s}", f"m{d}") for s, d in self.edges)
        return Cfg(self.name, nodes, edges, directed=True, label=self.kind)


def make_motif(name: str, kind: str, edges: Sequence[tuple[int, int]], seed: int,
               opcodes: Sequence[int] | None = None) -> Motif:
    n = 1 + max(max(e) for e in edges)
    pool = opcodes or (MALICIOUS_OPCODES if kind == MALICIOUS else BENIGN_OPCODES)
    rng = np.random.default_rng(seed)
    feats = tuple(
        node_feature([random_instruction(rng, pool) for _ in range(int(rng.integers(1, 4)))])
        for _ in range(n)
    )
    return Motif(name, kind, n, tuple(edges), feats)


def default_motifs() -> tuple[Motif, ...]:
    return (
        # decode loop with a back edge and two exits
        make_motif("mal-decode-loop", MALICIOUS,
                   [(0, 1), (1, 2), (2, 3), (3, 1), (2, 4), (4, 5), (3, 5)], seed=101),
        # fan-out dispatcher
        make_motif("mal-dispatch", MALICIOUS,
                   [(0, 1), (0, 2), (0, 3), (1, 4), (2, 4), (3, 4)], seed=102),
        # diamond with a tail
        make_motif("ben-diamond", BENIGN, [(0, 1), (0, 2), (1, 3), (2, 3), (3, 4)], seed=201),
        # straight-line call chain with a guard
        make_motif("ben-chain", BENIGN, [(0, 1), (1, 2), (2, 3), (1, 3), (3, 4)], seed=202),
    )


@dataclass(frozen=True)
class SynthParams:
    motifs: tuple[Motif, ...] = field(default_factory=default_motifs)
    min_nodes: int = 20
    max_nodes: int = 60
    avg_degree: float = 2.0
    malicious_ratio: float = 0.5
    background_templates: int = 48
    benign_in_malicious: float = 0.5


@dataclass(frozen=True)
class PlantRecord:
    graph_id: str
    motif: str
    kind: str
    nodes: tuple[str, ...]  # graph node id for each motif node, in motif order


def _check_params(n_graphs: int, params: SynthParams) -> None:
    if n_graphs < 2:
        raise ValueError("need at least two graphs")
    kinds = {m.kind for m in params.motifs}
    if kinds != {BENIGN, MALICIOUS}:
        raise ValueError("need at least one malicious and one benign motif")
    if not 1 <= params.min_nodes <= params.max_nodes:
        raise ValueError("bad node-count range")
    biggest_mal = max(m.n_nodes for m in params.motifs if m.kind == MALICIOUS)
    biggest_ben = max(m.n_nodes for m in params.motifs if m.kind == BENIGN)
    need = biggest_mal + (biggest_ben if params.benign_in_malicious > 0 else 0)
    need = max(need, biggest_ben)
    if need > params.min_nodes:
        raise ValueError(f"motifs need {need} nodes but graphs may have only {params.min_nodes}")


def synth_corpus(seed: int, n_graphs: int, params: SynthParams | None = None
                 ) -> tuple[list[Cfg], dict[str, list[PlantRecord]]]:
    """Generate ``n_graphs`` labelled graphs plus their planting records."""
    params = params or SynthParams()
    _check_params(n_graphs, params)
    rng = np.random.default_rng(seed)
    templates = [
        node_feature([random_instruction(rng, BACKGROUND_OPCODES)
                      for _ in range(int(rng.integers(1, 4)))])
        for _ in range(params.background_templates)
    ]
    n_mal = int(round(n_graphs * params.malicious_ratio))
    labels = np.array([MALICIOUS] * n_mal + [BENIGN] * (n_graphs - n_mal))
    labels = labels[rng.permutation(n_graphs)]
    mal_motifs = [m for m in params.motifs if m.kind == MALICIOUS]
    ben_motifs = [m for m in params.motifs if m.kind == BENIGN]

    graphs: list[Cfg] = []
    records: dict[str, list[PlantRecord]] = {}
    width = len(str(n_graphs - 1))
    for gi in range(n_graphs):
        gid = f"g{gi:0{width}d}"
        label = str(labels[gi])
        to_plant: list[Motif] = []
        if label == MALICIOUS:
            to_plant.append(mal_motifs[int(rng.integers(len(mal_motifs)))])
            if rng.random() < params.benign_in_malicious:
                to_plant.append(ben_motifs[int(rng.integers(len(ben_motifs)))])
        else:
            to_plant.append(ben_motifs[int(rng.integers(len(ben_motifs)))])
        g, recs = _one_graph(rng, gid, label, to_plant, templates, params)
        graphs.append(g)
        records[gid] = recs
    return graphs, records


def _one_graph(rng: np.random.Generator, gid: str, label: str, motifs: list[Motif],
               templates: list[np.ndarray], params: SynthParams) -> tuple[Cfg, list[PlantRecord]]:
    n = int(rng.integers(params.min_nodes, params.max_nodes + 1))
    feats = [templates[int(t)] for t in rng.integers(len(templates), size=n)]
    p = min(1.0, params.avg_degree / max(n - 1, 1))
    adj = rng.random((n, n)) < p
    np.fill_diagonal(adj, False)

    chosen = rng.choice(n, size=sum(m.n_nodes for m in motifs), replace=False)
    planted = np.zeros(n, dtype=bool)
    placements = []
    pos = 0
    for m in motifs:
        where = [int(x) for x in chosen[pos:pos + m.n_nodes]]
        pos += m.n_nodes
        placements.append((m, where))
        planted[where] = True
    for m, where in placements:
        for a in where:
            for b in where:
                adj[a, b] = False
        for s, d in m.edges:
            adj[where[s], where[d]] = True
        for i, f in zip(where, m.features):
            feats[i] = f

    outside = np.flatnonzero(~planted)
    for m, where in placements:
        inside = np.zeros(n, dtype=bool)
        inside[where] = True
        if len(outside) == 0:
            continue
        # rewire: one edge in from the background to the motif entry,
        # one edge out from the motif's last node
        if not adj[np.ix_(~inside, inside)].any():
            adj[int(rng.choice(outside)), where[0]] = True
        if not adj[np.ix_(inside, ~inside)].any():
            adj[where[-1], int(rng.choice(outside))] = True

    ids = [f"n{i}" for i in range(n)]
    nodes = tuple(NodeRecord(ids[i], feats[i]) for i in range(n))
    src, dst = np.nonzero(adj)
    edges = tuple(EdgeRecord(ids[s], ids[d]) for s, d in zip(src, dst))
    recs = [PlantRecord(gid, m.name, m.kind, tuple(ids[i] for i in where)) for m, where in placements]
    return Cfg(gid, nodes, edges, directed=True, label=label), recs


def records_to_json(records: dict[str, list[PlantRecord]]) -> dict:
    return {gid: [{"motif": r.motif, "kind": r.kind, "nodes": list(r.nodes)} for r in recs]
            for gid, recs in records.items()}


def records_from_json(doc: dict) -> dict[str, list[PlantRecord]]:
    return {gid: [PlantRecord(gid, r["motif"], r["kind"], tuple(r["nodes"])) for r in recs]
            for gid, recs in doc.items()}
