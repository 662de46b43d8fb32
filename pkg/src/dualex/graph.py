"""Attributed control-flow graph model.

A :class:`Cfg` is an immutable graph whose nodes carry a 438-bit instruction
feature and, once embedded, a 64-dim real vector.  Edges may carry an
explanation weight in ``[0, 1]``.  Construction never raises on malformed
content; call :func:`validate` (or :meth:`Cfg.check`) to get the list of
violations.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import cached_property
from typing import Iterable, Optional, Sequence

import numpy as np

FEATURE_BITS = 438
EMBED_DIM = 64

BENIGN = "benign"
MALICIOUS = "malicious"
LABELS = (BENIGN, MALICIOUS)


class GraphError(ValueError):
    pass


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class NodeRecord:
    id: str
    feature: np.ndarray
    embedding: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        feat = np.array(self.feature, dtype=np.uint8).reshape(-1)
        object.__setattr__(self, "feature", _frozen(feat))
        if self.embedding is not None:
            emb = np.array(self.embedding, dtype=np.float64).reshape(-1)
            object.__setattr__(self, "embedding", _frozen(emb))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, NodeRecord):
            return NotImplemented
        if self.id != other.id or not np.array_equal(self.feature, other.feature):
            return False
        if (self.embedding is None) != (other.embedding is None):
            return False
        if self.embedding is None:
            return True
        return self.embedding.tobytes() == other.embedding.tobytes()

    def __hash__(self) -> int:
        return hash((self.id, self.feature.tobytes()))

    def with_embedding(self, embedding: Optional[np.ndarray]) -> "NodeRecord":
        return NodeRecord(self.id, self.feature, embedding)


@dataclass(frozen=True)
class EdgeRecord:
    src: str
    dst: str
    weight: Optional[float] = None


@dataclass(frozen=True)
class Issue:
    """One invariant violation found by :func:`validate`."""

    kind: str
    ref: str
    message: str

    def __str__(self) -> str:
        return f"{self.kind} [{self.ref}]: {self.message}"


@dataclass(frozen=True)
class Cfg:
    id: str
    nodes: tuple[NodeRecord, ...]
    edges: tuple[EdgeRecord, ...]
    directed: bool = True
    label: Optional[str] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "edges", tuple(self.edges))

    # cached views; safe because every field is immutable

    @cached_property
    def index(self) -> dict[str, int]:
        return {n.id: i for i, n in enumerate(self.nodes)}

    @cached_property
    def edge_pairs(self) -> np.ndarray:
        """``(|E|, 2)`` int array of node indices in edge-list order."""
        idx = self.index
        out = np.zeros((len(self.edges), 2), dtype=np.int64)
        for i, e in enumerate(self.edges):
            out[i] = idx[e.src], idx[e.dst]
        return out

    @cached_property
    def arcs(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Message arcs ``(src, dst, edge)``; undirected edges yield both directions."""
        pairs = self.edge_pairs
        eid = np.arange(len(pairs))
        if self.directed:
            return pairs[:, 0].copy(), pairs[:, 1].copy(), eid
        src = np.concatenate([pairs[:, 0], pairs[:, 1]])
        dst = np.concatenate([pairs[:, 1], pairs[:, 0]])
        return src, dst, np.concatenate([eid, eid])

    @cached_property
    def successors(self) -> tuple[frozenset[int], ...]:
        succ: list[set[int]] = [set() for _ in self.nodes]
        for s, d in self.edge_pairs:
            succ[s].add(int(d))
            if not self.directed:
                succ[d].add(int(s))
        return tuple(frozenset(s) for s in succ)

    @cached_property
    def predecessors(self) -> tuple[frozenset[int], ...]:
        if not self.directed:
            return self.successors
        pred: list[set[int]] = [set() for _ in self.nodes]
        for s, d in self.edge_pairs:
            pred[d].add(int(s))
        return tuple(frozenset(p) for p in pred)

    @cached_property
    def embedding_matrix(self) -> np.ndarray:
        missing = [n.id for n in self.nodes if n.embedding is None]
        if missing:
            raise GraphError(f"graph {self.id!r}: nodes without embeddings: {missing}")
        if not self.nodes:
            return np.zeros((0, EMBED_DIM))
        return _frozen(np.stack([n.embedding for n in self.nodes]))

    @property
    def has_embeddings(self) -> bool:
        return all(n.embedding is not None for n in self.nodes)

    def node(self, node_id: str) -> NodeRecord:
        return self.nodes[self.index[node_id]]

    def check(self) -> "Cfg":
        issues = validate(self)
        if issues:
            raise GraphError(f"graph {self.id!r} is invalid: " + "; ".join(map(str, issues)))
        return self

    def with_embeddings(self, embeddings: Sequence[np.ndarray] | np.ndarray) -> "Cfg":
        if len(embeddings) != len(self.nodes):
            raise GraphError("embedding count does not match node count")
        nodes = tuple(n.with_embedding(e) for n, e in zip(self.nodes, embeddings))
        return replace(self, nodes=nodes)

    def with_weights(self, weights: Optional[Iterable[float]]) -> "Cfg":
        if weights is None:
            edges = tuple(EdgeRecord(e.src, e.dst) for e in self.edges)
        else:
            w = list(weights)
            if len(w) != len(self.edges):
                raise GraphError("weight count does not match edge count")
            edges = tuple(EdgeRecord(e.src, e.dst, float(x)) for e, x in zip(self.edges, w))
        return replace(self, edges=edges)

    def with_label(self, label: Optional[str]) -> "Cfg":
        return replace(self, label=label)

    def subgraph(self, node_ids: Iterable[str], graph_id: Optional[str] = None) -> "Cfg":
        """Induced subgraph on ``node_ids``, keeping this graph's node and edge order."""
        keep = set(node_ids)
        nodes = tuple(n for n in self.nodes if n.id in keep)
        edges = tuple(e for e in self.edges if e.src in keep and e.dst in keep)
        return Cfg(graph_id or self.id, nodes, edges, self.directed, self.label)


def validate(g: Cfg, require_label: bool = False) -> list[Issue]:
    """Return every invariant violation in ``g``; an empty list means valid."""
    issues: list[Issue] = []
    seen: set[str] = set()
    for n in g.nodes:
        if n.id in seen:
            issues.append(Issue("duplicate-node", n.id, "node id appears more than once"))
        seen.add(n.id)
        if n.feature.shape != (FEATURE_BITS,):
            issues.append(Issue("feature-length", n.id,
                                f"feature has {n.feature.size} bits, expected {FEATURE_BITS}"))
        elif np.any(n.feature > 1):
            issues.append(Issue("feature-value", n.id, "feature entries must be 0 or 1"))
        if n.embedding is not None:
            if n.embedding.shape != (EMBED_DIM,):
                issues.append(Issue("embedding-length", n.id,
                                    f"embedding has {n.embedding.size} values, expected {EMBED_DIM}"))
            elif not np.all(np.isfinite(n.embedding)):
                issues.append(Issue("embedding-value", n.id, "embedding has non-finite values"))

    pairs: set[tuple[str, str]] = set()
    for i, e in enumerate(g.edges):
        ref = f"edge {i} ({e.src}->{e.dst})"
        for end in (e.src, e.dst):
            if end not in seen:
                issues.append(Issue("dangling-edge", ref, f"endpoint {end!r} is not a node"))
        if e.src == e.dst:
            issues.append(Issue("self-loop", ref, "self-loops are not allowed"))
        key = (e.src, e.dst) if g.directed else tuple(sorted((e.src, e.dst)))
        if key in pairs:
            issues.append(Issue("duplicate-edge", ref, "edge appears more than once"))
        pairs.add(key)
        if e.weight is not None and not (0.0 <= e.weight <= 1.0):
            issues.append(Issue("edge-weight", ref, f"weight {e.weight} outside [0, 1]"))

    if g.label is not None and g.label not in LABELS:
        issues.append(Issue("label", g.id, f"unknown label {g.label!r}"))
    elif g.label is None and require_label:
        issues.append(Issue("label", g.id, "corpus graphs need a label"))
    return issues


def to_undirected(g: Cfg) -> Cfg:
    """Collapse ``g`` to an undirected graph.

    Antiparallel pairs become one edge whose weight is the max of the pair.
    Each undirected edge is stored once, lower node index first, in order of
    first appearance.
    """
    idx = g.index
    order: list[tuple[str, str]] = []
    weights: dict[tuple[str, str], Optional[float]] = {}
    for e in g.edges:
        a, b = (e.src, e.dst) if idx[e.src] <= idx[e.dst] else (e.dst, e.src)
        key = (a, b)
        if key not in weights:
            order.append(key)
            weights[key] = e.weight
        elif e.weight is not None:
            prev = weights[key]
            weights[key] = e.weight if prev is None else max(prev, e.weight)
    edges = tuple(EdgeRecord(a, b, weights[(a, b)]) for a, b in order)
    return Cfg(g.id, g.nodes, edges, directed=False, label=g.label)


def with_directionality(g: Cfg, directed: bool) -> Cfg:
    if directed:
        if not g.directed:
            raise GraphError(f"graph {g.id!r} is undirected; cannot restore directions")
        return g
    return g if not g.directed else to_undirected(g)


def class_index(label: str) -> int:
    """Logit position for ``label``: 0 = benign, 1 = malicious."""
    return LABELS.index(label)


def make_graph(graph_id: str, features: Sequence[np.ndarray], edges: Iterable[tuple],
               directed: bool = True, label: Optional[str] = None,
               embeddings: Optional[Sequence[np.ndarray]] = None) -> Cfg:
    """Convenience builder with node ids ``n0..n{k}``.

    ``edges`` holds ``(i, j)`` or ``(i, j, weight)`` tuples of integer positions.
    """
    nodes = tuple(
        NodeRecord(f"n{i}", f, None if embeddings is None else embeddings[i])
        for i, f in enumerate(features)
    )
    recs = []
    for e in edges:
        w = float(e[2]) if len(e) > 2 else None
        recs.append(EdgeRecord(f"n{e[0]}", f"n{e[1]}", w))
    return Cfg(graph_id, nodes, tuple(recs), directed, label)


__all__ = [
    "BENIGN", "MALICIOUS", "LABELS", "EMBED_DIM", "FEATURE_BITS",
    "Cfg", "EdgeRecord", "GraphError", "Issue", "NodeRecord",
    "class_index", "make_graph", "to_undirected", "validate", "with_directionality",
]
