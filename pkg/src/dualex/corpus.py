"""Line-delimited corpus format.

A corpus file is UTF-8 text.  The first non-blank line is a header::

    {"format": "dualex-cfg", "version": 1, "feature_bits": 438}

and every following non-blank line is one graph document::

    {"id": "g0001", "label": "malicious", "directed": true,
     "nodes": [{"id": "n0", "feature": "<110 hex digits>", "embedding": [..64 floats..]}, ...],
     "edges": [["n0", "n1"], ["n1", "n2", 0.75], ...]}

``label`` may be null, ``embedding`` may be omitted, and the optional third
edge element is the explanation weight.  Features are the 438 bits packed
MSB-first with two zero pad bits.  Floats are written with shortest
round-trip repr, so a load/dump cycle is bit-exact.  An empty file is an
empty corpus.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Iterable, Iterator, Union

import numpy as np

from .features import EncodingError, from_hex, to_hex
from .graph import FEATURE_BITS, Cfg, EdgeRecord, NodeRecord, validate

FORMAT_NAME = "dualex-cfg"
FORMAT_VERSION = 1


class CorpusError(ValueError):
    """Malformed corpus content; ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


def header() -> dict[str, Any]:
    return {"format": FORMAT_NAME, "version": FORMAT_VERSION, "feature_bits": FEATURE_BITS}


def graph_to_doc(g: Cfg) -> dict[str, Any]:
    nodes = []
    for n in g.nodes:
        rec: dict[str, Any] = {"id": n.id, "feature": to_hex(n.feature)}
        if n.embedding is not None:
            rec["embedding"] = [float(x) for x in n.embedding]
        nodes.append(rec)
    edges = [[e.src, e.dst] if e.weight is None else [e.src, e.dst, float(e.weight)]
             for e in g.edges]
    return {"id": g.id, "label": g.label, "directed": g.directed, "nodes": nodes, "edges": edges}


def _field(doc: dict, key: str, kind: type | tuple, line: int | None) -> Any:
    if key not in doc:
        raise CorpusError(f"missing field {key!r}", line)
    val = doc[key]
    if not isinstance(val, kind):
        raise CorpusError(f"field {key!r} has wrong type {type(val).__name__}", line)
    return val


def doc_to_graph(doc: Any, line: int | None = None) -> Cfg:
    if not isinstance(doc, dict):
        raise CorpusError("graph document must be an object", line)
    gid = _field(doc, "id", str, line)
    directed = _field(doc, "directed", bool, line)
    label = doc.get("label")
    if label is not None and not isinstance(label, str):
        raise CorpusError(f"graph {gid!r}: label must be a string or null", line)

    nodes = []
    seen: set[str] = set()
    for pos, nd in enumerate(_field(doc, "nodes", list, line)):
        if not isinstance(nd, dict):
            raise CorpusError(f"graph {gid!r}: node #{pos} must be an object", line)
        nid = _field(nd, "id", str, line)
        if nid in seen:
            raise CorpusError(f"graph {gid!r}: duplicate node id {nid!r}", line)
        seen.add(nid)
        try:
            feat = from_hex(_field(nd, "feature", str, line))
        except EncodingError as exc:
            raise CorpusError(f"graph {gid!r}: node {nid!r}: {exc}", line) from None
        emb = nd.get("embedding")
        if emb is not None:
            if not isinstance(emb, list) or not all(isinstance(x, (int, float)) for x in emb):
                raise CorpusError(f"graph {gid!r}: node {nid!r}: embedding must be a number list", line)
            emb = np.array(emb, dtype=np.float64)
        nodes.append(NodeRecord(nid, feat, emb))

    edges = []
    for pos, ed in enumerate(_field(doc, "edges", list, line)):
        if (not isinstance(ed, list) or len(ed) not in (2, 3)
                or not all(isinstance(x, str) for x in ed[:2])
                or (len(ed) == 3 and not isinstance(ed[2], (int, float)))):
            raise CorpusError(f"graph {gid!r}: edge #{pos} must be [src, dst] or [src, dst, weight]", line)
        edges.append(EdgeRecord(ed[0], ed[1], float(ed[2]) if len(ed) == 3 else None))

    g = Cfg(gid, tuple(nodes), tuple(edges), directed, label)
    issues = validate(g)
    if issues:
        raise CorpusError(f"graph {gid!r}: " + "; ".join(map(str, issues)), line)
    return g


def serialize(g: Cfg) -> bytes:
    """One graph as a single JSON line (with trailing newline)."""
    issues = validate(g)
    if issues:
        raise CorpusError(f"refusing to serialize invalid graph {g.id!r}: "
                          + "; ".join(map(str, issues)))
    return (json.dumps(graph_to_doc(g), separators=(",", ":")) + "\n").encode()


def deserialize(data: Union[bytes, str]) -> Cfg:
    text = data.decode() if isinstance(data, bytes) else data
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CorpusError(f"malformed JSON: {exc.msg} (column {exc.colno})", exc.lineno) from None
    return doc_to_graph(doc, 1)


def dump_corpus(graphs: Iterable[Cfg]) -> bytes:
    parts = [(json.dumps(header(), separators=(",", ":")) + "\n").encode()]
    parts.extend(serialize(g) for g in graphs)
    return b"".join(parts)


def iter_corpus(data: Union[bytes, str]) -> Iterator[Cfg]:
    text = data.decode() if isinstance(data, bytes) else data
    saw_header = False
    ids: set[str] = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            continue
        try:
            doc = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise CorpusError(f"malformed JSON: {exc.msg} (column {exc.colno})", lineno) from None
        if not saw_header:
            if not isinstance(doc, dict) or doc.get("format") != FORMAT_NAME:
                raise CorpusError(f"expected {FORMAT_NAME!r} header line", lineno)
            if doc.get("version") != FORMAT_VERSION:
                raise CorpusError(f"unsupported corpus version {doc.get('version')!r}", lineno)
            if doc.get("feature_bits", FEATURE_BITS) != FEATURE_BITS:
                raise CorpusError(f"corpus declares {doc.get('feature_bits')} feature bits, "
                                  f"expected {FEATURE_BITS}", lineno)
            saw_header = True
            continue
        g = doc_to_graph(doc, lineno)
        if g.id in ids:
            raise CorpusError(f"duplicate graph id {g.id!r}", lineno)
        ids.add(g.id)
        yield g


def load_corpus(data: Union[bytes, str]) -> list[Cfg]:
    return list(iter_corpus(data))


def read_corpus(path: Union[str, Path]) -> list[Cfg]:
    return load_corpus(Path(path).read_bytes())


def write_corpus(path: Union[str, Path], graphs: Iterable[Cfg]) -> None:
    Path(path).write_bytes(dump_corpus(graphs))
