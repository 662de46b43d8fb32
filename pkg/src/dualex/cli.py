"""Command-line interface: ``dualex <subcommand> ...``.

Artifacts land under ``--out`` or, when omitted, under ``$DUALEX_ARTIFACTS``
(default ``./artifacts``).  Failures print ``error [<stage>]: ...`` to stderr
and exit nonzero.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path
from typing import Any, Callable, Optional, Sequence

import numpy as np

from . import corpus as corpus_io
from .autoencoder import AutoencoderModel, corpus_features, embed_corpus, train_autoencoder
from .explain import EXPLAINERS, WeightedExplanation, explain, gec_extract
from .export import export_dot, export_stats_csv
from .gnn import KINDS, GnnModel, predict, train
from .graph import MALICIOUS, with_directionality
from .matching import MatchQuery, vf2_match
from .pipeline import (GRAPH_TYPES, MODES, PREDICATES, PipelineConfig, PipelineError, grid_search,
                       load_reports, run_pipeline)
from .querybox import build_query_box, load_query_box, save_query_box
from .scoring import MatchSettings, risk_score
from .synth import SynthParams, default_motifs, records_to_json, synth_corpus

ARTIFACT_ENV = "DUALEX_ARTIFACTS"

CHOICES = {"model": KINDS, "explainer": EXPLAINERS, "mode": MODES,
           "graph_type": GRAPH_TYPES, "predicate": PREDICATES}
DEFAULT_AXES = ("model", "explainer", "mode", "graph_type")


class CliError(Exception):
    def __init__(self, stage: str, message: str):
        super().__init__(message)
        self.stage = stage


def artifact_root(out: Optional[str]) -> Path:
    return Path(out or os.environ.get(ARTIFACT_ENV) or "artifacts")


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def _add_config_flags(p: argparse.ArgumentParser, corpus_required: bool = True) -> None:
    for f in dataclasses.fields(PipelineConfig):
        if f.name == "corpus":
            p.add_argument("--corpus", required=corpus_required, help="corpus file (JSON lines)")
            continue
        kw: dict[str, Any] = {"default": f.default, "type": type(f.default),
                              "help": f"default: {f.default}"}
        if f.name in CHOICES:
            kw["choices"] = CHOICES[f.name]
        p.add_argument(_flag(f.name), dest=f.name, **kw)


def _config(args: argparse.Namespace) -> PipelineConfig:
    vals = {f.name: getattr(args, f.name) for f in dataclasses.fields(PipelineConfig)}
    try:
        return PipelineConfig(**vals)
    except ValueError as exc:
        raise CliError("config", str(exc)) from None


def _read(path: str, stage: str = "load"):
    try:
        return corpus_io.read_corpus(path)
    except (OSError, ValueError) as exc:
        raise CliError(stage, f"{path}: {exc}") from None


def _pick(graphs, graph_id: Optional[str]):
    if graph_id is None:
        return graphs
    chosen = [g for g in graphs if g.id == graph_id]
    if not chosen:
        raise CliError("load", f"no graph with id {graph_id!r}")
    return chosen


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


# subcommands ------------------------------------------------------------------

def cmd_synth(a: argparse.Namespace) -> None:
    params = SynthParams(default_motifs(), min_nodes=a.min_nodes, max_nodes=a.max_nodes,
                         avg_degree=a.avg_degree, malicious_ratio=a.malicious_ratio)
    graphs, records = synth_corpus(a.seed, a.n_graphs, params)
    out = Path(a.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    corpus_io.write_corpus(out, graphs)
    rec_path = Path(a.records) if a.records else out.with_suffix(".plants.json")
    rec_path.write_text(json.dumps(records_to_json(records), indent=1, sort_keys=True) + "\n")
    print(f"wrote {len(graphs)} graphs to {out} and planting records to {rec_path}")


def cmd_train_ae(a: argparse.Namespace) -> None:
    graphs = _read(a.corpus)
    model = train_autoencoder(corpus_features(graphs), a.epochs, a.lr, a.seed)
    model.save(a.out)
    print(f"loss {model.loss_history[0]:.6f} -> {model.loss_history[-1]:.6f}; saved {a.out}")


def cmd_embed(a: argparse.Namespace) -> None:
    graphs = _read(a.corpus)
    model = AutoencoderModel.load(a.ae)
    corpus_io.write_corpus(a.out, embed_corpus(model, graphs))
    print(f"embedded {len(graphs)} graphs into {a.out}")


def cmd_train_gnn(a: argparse.Namespace) -> None:
    graphs = [with_directionality(g, a.graph_type == "directed") for g in _read(a.corpus)]
    model = train(GnnModel.initialize(a.model, a.seed), graphs, a.epochs, a.lr, a.weight_decay, a.seed)
    model.save(a.out)
    print(f"train accuracy {model.history[-1] if model.history else float('nan'):.4f}; saved {a.out}")


def cmd_predict(a: argparse.Namespace) -> None:
    model = GnnModel.load(a.gnn)
    lines = ["graph_id,label,predicted,probability"]
    for g in _pick(_read(a.corpus), a.graph_id):
        p = predict(model, g)
        lines.append(f"{g.id},{g.label or ''},{p.label},{p.probability!r}")
    _emit("\n".join(lines) + "\n", a.out)


def cmd_explain(a: argparse.Namespace) -> None:
    model = GnnModel.load(a.gnn)
    graphs = _pick(_read(a.corpus), a.graph_id)
    target = None if a.target_class == "predicted" else a.target_class
    annotated = [explain(a.explainer, model, g, target, a.ig_steps).annotated() for g in graphs]
    corpus_io.write_corpus(a.out, annotated)
    print(f"wrote {len(annotated)} edge-weighted graphs to {a.out}")


def cmd_extract(a: argparse.Namespace) -> None:
    subs = []
    for g in _pick(_read(a.corpus), a.graph_id):
        if any(e.weight is None for e in g.edges):
            raise CliError("extract", f"graph {g.id!r} has unweighted edges; run `explain` first")
        w = WeightedExplanation(g, np.array([e.weight for e in g.edges]), "given", -1)
        subs.append(gec_extract(w, a.k, f"{g.id}/k{a.k}").with_label(g.label))
    corpus_io.write_corpus(a.out, subs)
    print(f"wrote {len(subs)} subgraphs to {a.out}")


def cmd_build_box(a: argparse.Namespace) -> None:
    model = GnnModel.load(a.gnn)
    graphs = _read(a.corpus)
    fp = a.fingerprint or f"{a.explainer}-k{a.k}"
    box = build_query_box(model, graphs, a.explainer, a.k, fp, a.ig_steps)
    path = save_query_box(box, artifact_root(a.out) / "boxes")
    print(f"{len(box.malicious)} malicious and {len(box.benign)} benign prototypes "
          f"({len(box.rejected)} rejected) in {path}")


def cmd_match(a: argparse.Namespace) -> None:
    box = load_query_box(a.box)
    out = []
    for g in _pick(_read(a.corpus), a.graph_id):
        for p in box.prototypes():
            r = vf2_match(MatchQuery(p.graph, g, a.mode, a.predicate, a.delta, a.cap))
            out.append({"target": g.id, "prototype": p.graph.id, "partition": p.partition,
                        "mappings": len(r.mappings), "truncated": r.truncated})
    _emit(json.dumps(out, indent=1) + "\n", a.out)


def cmd_score(a: argparse.Namespace) -> None:
    box = load_query_box(a.box)
    graphs = _pick(_read(a.corpus), a.graph_id)
    if a.gnn:
        model = GnnModel.load(a.gnn)
        graphs = [g for g in graphs if predict(model, g).label == MALICIOUS]
    out = artifact_root(a.out) / "scores"
    out.mkdir(parents=True, exist_ok=True)
    settings = MatchSettings(a.mode, a.predicate, a.delta, a.cap)
    for g in graphs:
        s = risk_score(g, box, settings)
        (out / f"{g.id}.csv").write_text(s.to_csv())
        (out / f"{g.id}.dot").write_text(export_dot(g, s))
    print(f"scored {len(graphs)} targets into {out}")


def cmd_run(a: argparse.Namespace) -> None:
    cfg = _config(a)
    root = artifact_root(a.out)
    rep = run_pipeline(cfg, root)
    print(f"{rep.fingerprint}: train {rep.train_accuracy:.4f}, test "
          f"{'n/a' if rep.test_accuracy is None else f'{rep.test_accuracy:.4f}'}, "
          f"{len(rep.rows)} scored targets; report in {root / 'runs' / rep.fingerprint}")


def _parse_axis(text: str) -> tuple[str, list[Any]]:
    name, sep, values = text.partition("=")
    name = name.strip().replace("-", "_")
    fields = {f.name: f for f in dataclasses.fields(PipelineConfig)}
    if not sep or name not in fields or not values:
        raise CliError("config", f"bad --axis {text!r}; expected name=v1,v2,...")
    conv = type(fields[name].default)
    try:
        return name, [conv(v) for v in values.split(",")]
    except ValueError as exc:
        raise CliError("config", f"--axis {text!r}: {exc}") from None


def cmd_grid(a: argparse.Namespace) -> None:
    base = _config(a)
    if a.axis:
        axes = dict(_parse_axis(s) for s in a.axis)
    else:
        axes = {name: list(CHOICES[name]) for name in DEFAULT_AXES}
    root = artifact_root(a.out)
    reports = grid_search(base, axes, root)
    failed = [r for r in reports if not r.ok]
    print(f"{len(reports)} cells, {len(failed)} failed; table in {root / 'grid.csv'}")
    for r in failed:
        print(f"  {r.fingerprint} failed at [{r.error['stage']}]: {r.error['message']}", file=sys.stderr)


def cmd_report(a: argparse.Namespace) -> None:
    root = artifact_root(a.root)
    reports = load_reports(root)
    if not reports:
        raise CliError("report", f"no run reports under {root / 'runs'}")
    _emit(export_stats_csv(reports), a.out)


# parser -------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dualex", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def add(name: str, fn: Callable, help: str) -> argparse.ArgumentParser:
        sp = sub.add_parser(name, help=help)
        sp.set_defaults(func=fn)
        return sp

    sp = add("synth", cmd_synth, "generate a planted-motif corpus")
    sp.add_argument("--out", required=True)
    sp.add_argument("--records", help="planting records path (default: <out>.plants.json)")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--n-graphs", type=int, default=300)
    sp.add_argument("--min-nodes", type=int, default=20)
    sp.add_argument("--max-nodes", type=int, default=60)
    sp.add_argument("--avg-degree", type=float, default=2.0)
    sp.add_argument("--malicious-ratio", type=float, default=0.5)

    sp = add("train-ae", cmd_train_ae, "train the feature autoencoder")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--epochs", type=int, default=700)
    sp.add_argument("--lr", type=float, default=0.01)
    sp.add_argument("--seed", type=int, default=0)

    sp = add("embed", cmd_embed, "attach autoencoder embeddings to a corpus")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--ae", required=True)
    sp.add_argument("--out", required=True)

    sp = add("train-gnn", cmd_train_gnn, "train a graph classifier on an embedded corpus")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--model", choices=KINDS, default=KINDS[0])
    sp.add_argument("--graph-type", choices=GRAPH_TYPES, default="directed")
    sp.add_argument("--epochs", type=int, default=250)
    sp.add_argument("--lr", type=float, default=1e-4)
    sp.add_argument("--weight-decay", type=float, default=5e-4)
    sp.add_argument("--seed", type=int, default=0)

    sp = add("predict", cmd_predict, "classify graphs")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--gnn", required=True)
    sp.add_argument("--graph-id")
    sp.add_argument("--out", help="CSV path (default: stdout)")

    sp = add("explain", cmd_explain, "write edge-attribution scores as edge weights")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--gnn", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--graph-id")
    sp.add_argument("--explainer", choices=EXPLAINERS, default=EXPLAINERS[0])
    sp.add_argument("--target-class", choices=("predicted", "benign", "malicious"), default="predicted")
    sp.add_argument("--ig-steps", type=int, default=32)

    sp = add("extract", cmd_extract, "greedy k-edge subgraphs from edge-weighted graphs")
    sp.add_argument("--corpus", required=True, help="output of `explain`")
    sp.add_argument("--out", required=True)
    sp.add_argument("--graph-id")
    sp.add_argument("--k", type=int, default=8)

    sp = add("build-box", cmd_build_box, "explain, extract and verify a corpus into a query box")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--gnn", required=True)
    sp.add_argument("--out", help=f"artifact root (default: ${ARTIFACT_ENV})")
    sp.add_argument("--explainer", choices=EXPLAINERS, default=EXPLAINERS[0])
    sp.add_argument("--k", type=int, default=8)
    sp.add_argument("--ig-steps", type=int, default=32)
    sp.add_argument("--fingerprint", help="box directory name (default: <explainer>-k<k>)")

    for name, fn, help in (("match", cmd_match, "match a query box against targets"),
                           ("score", cmd_score, "node risk scores for targets")):
        sp = add(name, fn, help)
        sp.add_argument("--box", required=True, help="query-box directory")
        sp.add_argument("--corpus", required=True, help="target graphs (embedded for cosine)")
        sp.add_argument("--graph-id")
        sp.add_argument("--out")
        sp.add_argument("--mode", choices=MODES, default=MODES[0])
        sp.add_argument("--predicate", choices=PREDICATES, default=PREDICATES[0])
        sp.add_argument("--delta", type=float, default=0.9)
        sp.add_argument("--cap", type=int, default=10000)
        if name == "score":
            sp.add_argument("--gnn", help="score only targets this model predicts malicious")

    sp = add("run", cmd_run, "run the full pipeline for one configuration")
    _add_config_flags(sp)
    sp.add_argument("--out", help=f"artifact root (default: ${ARTIFACT_ENV})")

    sp = add("grid", cmd_grid, "sweep configurations")
    _add_config_flags(sp)
    sp.add_argument("--out", help=f"artifact root (default: ${ARTIFACT_ENV})")
    sp.add_argument("--axis", action="append",
                    help="name=v1,v2 (repeatable); default sweeps model, explainer, mode and graph type")

    sp = add("report", cmd_report, "statistics table over all stored runs")
    sp.add_argument("--root", help=f"artifact root (default: ${ARTIFACT_ENV})")
    sp.add_argument("--out", help="CSV path (default: stdout)")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except PipelineError as exc:
        print(f"error [{exc.stage}]: {exc.message}", file=sys.stderr)
        return 2
    except CliError as exc:
        print(f"error [{exc.stage}]: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, KeyError) as exc:
        print(f"error [{args.command}]: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
