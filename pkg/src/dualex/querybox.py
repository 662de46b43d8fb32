"""Verified prototype repository ("query box") and its on-disk layout.

One directory per configuration fingerprint::

    <root>/<fingerprint>/manifest.json     # provenance + verification record
    <root>/<fingerprint>/prototypes.jsonl  # corpus-format graphs, label = partition
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

from . import corpus as corpus_io
from .explain import DEFAULT_IG_STEPS, ExtractionError, explain, gec_extract
from .gnn import GnnModel, predict
from .graph import BENIGN, MALICIOUS, Cfg

FORMAT_NAME = "dualex-querybox"
FORMAT_VERSION = 1


class QueryBoxError(ValueError):
    pass


@dataclass(frozen=True)
class Prototype:
    graph: Cfg          # labelled with its partition
    source: str
    explainer: str
    k: int
    probability: float  # model confidence in the partition at verification time

    @property
    def partition(self) -> str:
        return self.graph.label


@dataclass
class QueryBox:
    fingerprint: str
    explainer: str
    k: int
    malicious: list[Prototype] = field(default_factory=list)
    benign: list[Prototype] = field(default_factory=list)
    # source ids whose extracted subgraph failed verification or had no edges
    rejected: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.malicious) + len(self.benign)

    def prototypes(self) -> list[Prototype]:
        return self.malicious + self.benign

    def add(self, proto: Prototype) -> None:
        if proto.partition == MALICIOUS:
            self.malicious.append(proto)
        elif proto.partition == BENIGN:
            self.benign.append(proto)
        else:
            raise QueryBoxError(f"prototype {proto.graph.id!r} has no partition label")


def build_query_box(m: GnnModel, graphs: Sequence[Cfg], explainer: str, k: int,
                    fingerprint: str = "", ig_steps: int = DEFAULT_IG_STEPS) -> QueryBox:
    """Explain, extract and verify every correctly classified graph, in corpus order."""
    box = QueryBox(fingerprint, explainer, k)
    for g in graphs:
        pred = predict(m, g)
        if pred.label != g.label:
            continue
        w = explain(explainer, m, g, target_class=g.label, ig_steps=ig_steps)
        try:
            sub = gec_extract(w, k, graph_id=f"{g.id}/{explainer}/k{k}")
        except ExtractionError:
            box.rejected.append(g.id)
            continue
        sub = sub.with_label(g.label)
        check = predict(m, sub)
        if check.label != g.label:
            box.rejected.append(g.id)
            continue
        box.add(Prototype(sub, g.id, explainer, k, check.probability))
    return box


def reverify(m: GnnModel, box: QueryBox) -> list[str]:
    """Ids of stored prototypes the model no longer assigns to their partition."""
    return [p.graph.id for p in box.prototypes() if predict(m, p.graph).label != p.partition]


def save_query_box(box: QueryBox, root: Union[str, Path]) -> Path:
    if not box.fingerprint:
        raise QueryBoxError("query box needs a fingerprint to be persisted")
    out = Path(root) / box.fingerprint
    out.mkdir(parents=True, exist_ok=True)
    protos = box.prototypes()
    corpus_io.write_corpus(out / "prototypes.jsonl", [p.graph for p in protos])
    manifest = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "fingerprint": box.fingerprint,
        "explainer": box.explainer,
        "k": box.k,
        "counts": {MALICIOUS: len(box.malicious), BENIGN: len(box.benign)},
        "rejected": list(box.rejected),
        "prototypes": [
            {"id": p.graph.id, "partition": p.partition, "source": p.source,
             "explainer": p.explainer, "k": p.k, "nodes": len(p.graph.nodes),
             "edges": len(p.graph.edges),
             "verification": {"predicted": p.partition, "probability": p.probability}}
            for p in protos
        ],
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return out


def load_query_box(path: Union[str, Path]) -> QueryBox:
    path = Path(path)
    try:
        manifest = json.loads((path / "manifest.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise QueryBoxError(f"cannot read query-box manifest in {path}: {exc}") from None
    if manifest.get("format") != FORMAT_NAME or manifest.get("version") != FORMAT_VERSION:
        raise QueryBoxError(f"{path} is not a version-{FORMAT_VERSION} query box")
    graphs = {g.id: g for g in corpus_io.read_corpus(path / "prototypes.jsonl")}
    box = QueryBox(manifest["fingerprint"], manifest["explainer"], manifest["k"],
                   rejected=list(manifest.get("rejected", [])))
    for rec in manifest["prototypes"]:
        g = graphs.get(rec["id"])
        if g is None:
            raise QueryBoxError(f"manifest lists {rec['id']!r} but prototypes.jsonl lacks it")
        if g.label != rec["partition"]:
            raise QueryBoxError(f"prototype {rec['id']!r} label disagrees with manifest partition")
        box.add(Prototype(g, rec["source"], rec["explainer"], rec["k"],
                          rec["verification"]["probability"]))
    return box
