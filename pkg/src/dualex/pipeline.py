"""End-to-end runs and grid sweeps.

A run goes: load corpus -> train autoencoder on every node feature -> embed
-> seeded train/test split -> train GNN -> explain, extract and verify the
training graphs into a query box -> predict the test graphs -> score only the
ones predicted malicious -> write the report.

Artifact layout under ``out_dir``::

    boxes/<fingerprint>/                 query box (manifest + prototypes)
    runs/<fingerprint>/report.json
    runs/<fingerprint>/autoencoder.json
    runs/<fingerprint>/gnn.json
    runs/<fingerprint>/scores/<target>.csv
    runs/<fingerprint>/dot/<target>.dot
"""

from __future__ import annotations

import dataclasses
import hashlib
import itertools
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Sequence, Union

import numpy as np

from . import corpus as corpus_io
from .autoencoder import AutoencoderModel, corpus_features, embed_corpus, train_autoencoder
from .explain import EXPLAINERS, SALIENCY
from .export import export_dot, export_stats_csv
from .gnn import KINDS, GnnModel, accuracy, predict, train
from .graph import MALICIOUS, Cfg, with_directionality
from .matching import COSINE, EXACT, ISOMORPHISM, MONOMORPHISM
from .querybox import QueryBox, build_query_box, save_query_box
from .scoring import MatchSettings, ScoreMap, risk_score, target_stats

DIRECTED = "directed"
UNDIRECTED = "undirected"
GRAPH_TYPES = (DIRECTED, UNDIRECTED)
MODES = (MONOMORPHISM, ISOMORPHISM)
PREDICATES = (EXACT, COSINE)

REPORT_FORMAT = "dualex-report"
REPORT_VERSION = 1


class PipelineError(RuntimeError):
    """A run failure tagged with the stage it happened in."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
        self.message = message


@dataclass(frozen=True)
class PipelineConfig:
    corpus: str
    model: str = KINDS[0]
    explainer: str = SALIENCY
    mode: str = MONOMORPHISM
    graph_type: str = DIRECTED
    k: int = 8
    delta: float = 0.9
    predicate: str = EXACT
    ae_seed: int = 0
    gnn_seed: int = 0
    split_seed: int = 0
    ae_epochs: int = 700
    ae_lr: float = 0.01
    gnn_epochs: int = 250
    gnn_lr: float = 1e-4
    weight_decay: float = 5e-4
    ig_steps: int = 32
    cap: int = 10000
    train_fraction: float = 0.8

    def __post_init__(self) -> None:
        for name, allowed in (("model", KINDS), ("explainer", EXPLAINERS), ("mode", MODES),
                              ("graph_type", GRAPH_TYPES), ("predicate", PREDICATES)):
            if getattr(self, name) not in allowed:
                raise ValueError(f"{name} must be one of {', '.join(allowed)}; got {getattr(self, name)!r}")
        if self.k < 1:
            raise ValueError(f"k must be >= 1; got {self.k}")
        if not 0.0 <= self.delta <= 1.0:
            raise ValueError(f"delta must lie in [0, 1]; got {self.delta}")
        if not 0.0 < self.train_fraction <= 1.0:
            raise ValueError(f"train_fraction must lie in (0, 1]; got {self.train_fraction}")
        for name in ("ae_epochs", "gnn_epochs", "cap", "ig_steps"):
            if getattr(self, name) < (0 if name.endswith("epochs") else 1):
                raise ValueError(f"{name} out of range: {getattr(self, name)}")

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "PipelineConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config fields: {', '.join(sorted(unknown))}")
        return cls(**d)

    def replace(self, **changes: Any) -> "PipelineConfig":
        return dataclasses.replace(self, **changes)

    @property
    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    @property
    def directed(self) -> bool:
        return self.graph_type == DIRECTED

    @property
    def match_settings(self) -> MatchSettings:
        return MatchSettings(self.mode, self.predicate, self.delta, self.cap)


@dataclass
class RunReport:
    fingerprint: str
    config: dict[str, Any]
    status: str = "ok"
    error: Optional[dict[str, str]] = None
    corpus_sha256: str = ""
    split: dict[str, list[str]] = field(default_factory=dict)
    train_accuracy: Optional[float] = None
    test_accuracy: Optional[float] = None
    ae_final_loss: Optional[float] = None
    box: dict[str, Any] = field(default_factory=dict)
    predictions: list[dict[str, Any]] = field(default_factory=list)
    # one per malicious-predicted test graph
    rows: list[dict[str, Any]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["format"] = REPORT_FORMAT
        d["version"] = REPORT_VERSION
        return d

    def to_json(self) -> bytes:
        return (json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n").encode()

    @classmethod
    def from_json(cls, data: Union[bytes, str]) -> "RunReport":
        d = json.loads(data)
        if d.pop("format", None) != REPORT_FORMAT or d.pop("version", None) != REPORT_VERSION:
            raise ValueError("not a version-1 run report")
        return cls(**d)


# in-memory model cache shared by grid cells -----------------------------------

def _digest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


class ModelCache:
    """Trained models keyed by everything that determines them."""

    def __init__(self) -> None:
        self.autoencoders: dict[tuple, AutoencoderModel] = {}
        self.gnns: dict[tuple, GnnModel] = {}


def _ae_key(cfg: PipelineConfig, corpus_sha: str) -> tuple:
    return (corpus_sha, cfg.ae_seed, cfg.ae_epochs, cfg.ae_lr)


def _gnn_key(cfg: PipelineConfig, corpus_sha: str) -> tuple:
    return _ae_key(cfg, corpus_sha) + (cfg.model, cfg.graph_type, cfg.split_seed, cfg.train_fraction,
                                       cfg.gnn_seed, cfg.gnn_epochs, cfg.gnn_lr, cfg.weight_decay)


def split_indices(n: int, fraction: float, seed: int) -> tuple[list[int], list[int]]:
    """Seeded shuffle, first ``round(n * fraction)`` go to training (at least one)."""
    order = np.random.default_rng(seed).permutation(n)
    n_train = min(n, max(1, int(round(n * fraction))))
    return sorted(order[:n_train].tolist()), sorted(order[n_train:].tolist())


def _stage(name: str):
    """Re-raise anything but PipelineError as PipelineError(name)."""

    class _Ctx:
        def __enter__(self):
            return self

        def __exit__(self, et, ev, tb):
            if ev is None or isinstance(ev, PipelineError):
                return False
            raise PipelineError(name, f"{type(ev).__name__}: {ev}") from ev

    return _Ctx()


def run_pipeline(cfg: PipelineConfig, out_dir: Union[str, Path, None] = None,
                 cache: Optional[ModelCache] = None) -> RunReport:
    """Execute one configuration; with ``out_dir`` every artifact is written too."""
    cache = cache if cache is not None else ModelCache()
    report = RunReport(cfg.fingerprint, cfg.to_dict())

    with _stage("load"):
        raw = Path(cfg.corpus).read_bytes()
        graphs = corpus_io.load_corpus(raw)
        if not graphs:
            raise PipelineError("load", f"corpus {cfg.corpus} holds no graphs")
        for g in graphs:
            if g.label is None:
                raise PipelineError("load", f"graph {g.id!r} has no label")
    report.corpus_sha256 = sha = _digest(raw)

    with _stage("train-ae"):
        key = _ae_key(cfg, sha)
        ae = cache.autoencoders.get(key)
        if ae is None:
            ae = train_autoencoder(corpus_features(graphs), cfg.ae_epochs, cfg.ae_lr, cfg.ae_seed)
            cache.autoencoders[key] = ae
    report.ae_final_loss = ae.loss_history[-1]

    with _stage("embed"):
        graphs = [with_directionality(g, cfg.directed) for g in embed_corpus(ae, graphs)]

    train_idx, test_idx = split_indices(len(graphs), cfg.train_fraction, cfg.split_seed)
    train_set = [graphs[i] for i in train_idx]
    test_set = [graphs[i] for i in test_idx]
    report.split = {"train": [g.id for g in train_set], "test": [g.id for g in test_set]}

    with _stage("train-gnn"):
        key = _gnn_key(cfg, sha)
        gnn = cache.gnns.get(key)
        if gnn is None:
            gnn = train(GnnModel.initialize(cfg.model, cfg.gnn_seed), train_set, cfg.gnn_epochs,
                        cfg.gnn_lr, cfg.weight_decay, cfg.gnn_seed)
            cache.gnns[key] = gnn
    report.train_accuracy = accuracy(gnn, train_set)
    report.test_accuracy = accuracy(gnn, test_set) if test_set else None

    with _stage("build-box"):
        box = build_query_box(gnn, train_set, cfg.explainer, cfg.k, cfg.fingerprint, cfg.ig_steps)
    report.box = {"malicious": len(box.malicious), "benign": len(box.benign),
                  "rejected": list(box.rejected)}

    with _stage("predict"):
        preds = [(g, predict(gnn, g)) for g in test_set]
    report.predictions = [{"target": g.id, "label": g.label, "predicted": p.label,
                           "probability": p.probability} for g, p in preds]
    targets = [g for g, p in preds if p.label == MALICIOUS]

    scored: list[tuple[Cfg, ScoreMap]] = []
    with _stage("score"):
        if targets and len(box) == 0:
            raise PipelineError("score", "query box is empty; no prototype survived verification")
        for g in targets:
            scored.append((g, risk_score(g, box, cfg.match_settings)))
    by_id = {p["target"]: p for p in report.predictions}
    for g, s in scored:
        st = target_stats(s)
        report.rows.append({
            "target": g.id,
            "label": g.label,
            "probability": by_id[g.id]["probability"],
            "matched_queries": st.matched_queries,
            "matched_malicious": st.matched_malicious,
            "matched_benign": st.matched_benign,
            "avg_matched_query_nodes": st.avg_matched_query_nodes,
            "max_score": st.max_score,
            "min_score": st.min_score,
            "positive_nodes": st.positive_nodes,
            "negative_nodes": st.negative_nodes,
            "truncated": st.truncated,
        })

    if out_dir is not None:
        with _stage("write"):
            write_run(Path(out_dir), report, ae, gnn, box, scored)
    return report


def _safe_name(target_id: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in target_id)


def write_run(out_dir: Path, report: RunReport, ae: AutoencoderModel, gnn: GnnModel,
              box: QueryBox, scored: Sequence[tuple[Cfg, ScoreMap]]) -> Path:
    save_query_box(box, out_dir / "boxes")
    run_dir = out_dir / "runs" / report.fingerprint
    (run_dir / "scores").mkdir(parents=True, exist_ok=True)
    (run_dir / "dot").mkdir(exist_ok=True)
    ae.save(run_dir / "autoencoder.json")
    gnn.save(run_dir / "gnn.json")
    for g, s in scored:
        name = _safe_name(g.id)
        (run_dir / "scores" / f"{name}.csv").write_text(s.to_csv())
        (run_dir / "dot" / f"{name}.dot").write_text(export_dot(g, s))
    (run_dir / "report.json").write_bytes(report.to_json())
    return run_dir


def failed_report(cfg: PipelineConfig, err: PipelineError) -> RunReport:
    return RunReport(cfg.fingerprint, cfg.to_dict(), status="failed",
                     error={"stage": err.stage, "message": err.message})


def expand_grid(base: PipelineConfig, axes: Mapping[str, Iterable[Any]]) -> list[PipelineConfig]:
    """Cartesian product of the axes over ``base``; repeated axis values are dropped with a warning."""
    names = {f.name for f in dataclasses.fields(PipelineConfig)}
    clean: dict[str, list[Any]] = {}
    for axis, values in axes.items():
        if axis not in names:
            raise ValueError(f"unknown grid axis {axis!r}")
        values = list(values)
        if not values:
            raise ValueError(f"grid axis {axis!r} is empty")
        uniq = list(dict.fromkeys(values))
        if len(uniq) < len(values):
            warnings.warn(f"grid axis {axis!r} has repeated values; using {uniq}", stacklevel=2)
        clean[axis] = uniq
    keys = list(clean)
    return [base.replace(**dict(zip(keys, combo))) for combo in itertools.product(*clean.values())]


def grid_search(base: PipelineConfig, axes: Mapping[str, Iterable[Any]],
                out_dir: Union[str, Path, None] = None,
                cache: Optional[ModelCache] = None) -> list[RunReport]:
    """One run per grid cell, sharing trained models; reports come back in fingerprint order.

    A failing cell yields a report with ``status == "failed"`` and its stage
    instead of aborting the sweep.
    """
    cache = cache if cache is not None else ModelCache()
    reports = []
    for cfg in expand_grid(base, axes):
        try:
            reports.append(run_pipeline(cfg, out_dir, cache))
        except PipelineError as err:
            rep = failed_report(cfg, err)
            if out_dir is not None:
                d = Path(out_dir) / "runs" / cfg.fingerprint
                d.mkdir(parents=True, exist_ok=True)
                (d / "report.json").write_bytes(rep.to_json())
            reports.append(rep)
    reports.sort(key=lambda r: r.fingerprint)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "grid.csv").write_text(export_stats_csv(reports))
        summary = [{"fingerprint": r.fingerprint, "status": r.status, "config": r.config,
                    "train_accuracy": r.train_accuracy, "test_accuracy": r.test_accuracy,
                    "targets": len(r.rows)} for r in reports]
        (out / "grid.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    return reports


def load_reports(root: Union[str, Path]) -> list[RunReport]:
    """Every report under ``root/runs``, in fingerprint order."""
    paths = sorted((Path(root) / "runs").glob("*/report.json"))
    return [RunReport.from_json(p.read_bytes()) for p in paths]
