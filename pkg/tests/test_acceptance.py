"""Acceptance criteria 1-10, each at its stated tolerance.

Every test records one PASS/FAIL line (see ``acceptance_log``); the lines are
repeated in the terminal summary.
"""

from __future__ import annotations

import csv
import time
from pathlib import Path

import numpy as np
import pytest

from acceptance_log import record
from conftest import bit_feature, random_graph
from gradcheck import mask_gradient_error, smooth_mask
from oracles import brute_force_mappings, cosine
from dualex.cli import main as cli_main
from dualex.corpus import write_corpus
from dualex.explain import WeightedExplanation, gec_extract, gec_select
from dualex.gnn import KINDS, GnnModel
from dualex.graph import BENIGN, MALICIOUS, Cfg, make_graph, to_undirected
from dualex.matching import COSINE, EXACT, ISOMORPHISM, MONOMORPHISM, match
from dualex.pipeline import ModelCache, PipelineConfig, load_reports, run_pipeline
from dualex.querybox import Prototype, QueryBox, load_query_box, reverify
from dualex.scoring import MatchSettings, risk_score
from dualex.synth import SynthParams, synth_corpus

# settings for the end-to-end runs: prototypes of 4 edges fit inside every planted motif
DESK = dict(k=4, explainer="saliency", mode=MONOMORPHISM, predicate=EXACT)


def mapping_set(r):
    return {frozenset(m.items()) for m in r.mappings}


# 1 + 2 ---------------------------------------------------------------------------

def _trial(rng, directed):
    """Random (Q, T) with |V_T| <= 8; features from a 2-colour palette, embeddings
    clustered so cosine thresholds of 0.5 and 0.9 both cut through."""
    t = random_graph(rng, int(rng.integers(2, 9)), 0.35, directed, palette=2, gid="T")
    centres = rng.normal(size=(2, 64))
    spread = 0.8
    t = t.with_embeddings([centres[rng.integers(2)] + spread * rng.normal(size=64) for _ in t.nodes])
    size = int(rng.integers(1, min(5, len(t.nodes)) + 1))
    if rng.random() < 0.5:
        # a piece of the target with some edges dropped: guarantees monomorphic hits
        keep = sorted(rng.choice(len(t.nodes), size=size, replace=False).tolist())
        sub = t.subgraph([t.nodes[i].id for i in keep])
        edges = tuple(e for e in sub.edges if rng.random() < 0.8)
        return Cfg("Q", sub.nodes, edges, directed), t
    q = random_graph(rng, size, 0.5, directed, palette=2, gid="Q")
    q = q.with_embeddings([centres[rng.integers(2)] + spread * rng.normal(size=64) for _ in q.nodes])
    return q, t


def _oracle(q, t, mode, predicate, delta):
    if not q.directed:
        q, t = to_undirected(q), to_undirected(t)
    qi, ti = q.index, t.index
    if predicate == EXACT:
        ok = lambda i, j: bool((q.nodes[i].feature == t.nodes[j].feature).all())  # noqa: E731
    else:
        qe, te = q.embedding_matrix, t.embedding_matrix
        ok = lambda i, j: cosine(qe[i], te[j]) >= delta  # noqa: E731
    return brute_force_mappings(
        [n.id for n in q.nodes], [(qi[e.src], qi[e.dst]) for e in q.edges],
        [n.id for n in t.nodes], [(ti[e.src], ti[e.dst]) for e in t.edges],
        q.directed, mode == ISOMORPHISM, ok)


PREDICATE_SETTINGS = [(EXACT, 0.9), (COSINE, 0.5), (COSINE, 0.9)]
TRIALS_PER_CELL = 20  # 2 modes x 2 directions x 3 predicates x 20 = 240 pairs


@pytest.fixture(scope="module")
def trial_set():
    rng = np.random.default_rng(20240601)
    cells = []
    for directed in (True, False):
        for mode in (MONOMORPHISM, ISOMORPHISM):
            for predicate, delta in PREDICATE_SETTINGS:
                for _ in range(TRIALS_PER_CELL):
                    q, t = _trial(rng, directed)
                    cells.append((q, t, mode, predicate, delta))
    return cells


def test_criterion_01_matching_oracle_equivalence(trial_set):
    start = time.perf_counter()
    mismatches, nonempty = 0, 0
    for q, t, mode, predicate, delta in trial_set:
        got = mapping_set(match(q, t, mode, predicate, delta))
        nonempty += bool(got)
        if got != _oracle(q, t, mode, predicate, delta):
            mismatches += 1
    elapsed = time.perf_counter() - start
    passed = len(trial_set) >= 200 and mismatches == 0 and elapsed < 60
    record(1, "matching oracle equivalence", passed,
           f"{len(trial_set)} pairs ({nonempty} with matches), {mismatches} mismatches, {elapsed:.1f} s (< 60 s)")
    assert passed


def test_criterion_02_containment_and_monotonicity(trial_set):
    violations, checks = 0, 0
    seen = set()
    for q, t, _, _, _ in trial_set:
        if id(q) in seen:
            continue
        seen.add(id(q))
        for predicate, delta in PREDICATE_SETTINGS:
            iso = mapping_set(match(q, t, ISOMORPHISM, predicate, delta))
            mono = mapping_set(match(q, t, MONOMORPHISM, predicate, delta))
            violations += not iso <= mono
            checks += 1
        for mode in (MONOMORPHISM, ISOMORPHISM):
            hi = mapping_set(match(q, t, mode, COSINE, 0.95))
            lo = mapping_set(match(q, t, mode, COSINE, 0.9))
            violations += not hi <= lo
            checks += 1
    passed = violations == 0
    record(2, "mode containment and threshold monotonicity", passed,
           f"{checks} subset checks over {len(seen)} pairs, {violations} violations")
    assert passed


# 3 -----------------------------------------------------------------------------

def _proto(name, partition, bits, edges):
    g = make_graph(name, [bit_feature(b) for b in bits], edges, label=partition)
    return Prototype(g, "src", "saliency", max(len(edges), 1), 1.0)


def _box(*protos):
    box = QueryBox("fp", "saliency", 1)
    for p in protos:
        box.add(p)
    return box


def _hand_traces():
    path = make_graph("t", [bit_feature(i) for i in range(5)], [(0, 1), (1, 2), (2, 3), (3, 4)])
    edge = lambda name, part, a: _proto(name, part, [a, a + 1], [(0, 1)])  # noqa: E731
    cases = [
        (_box(edge("m1", MALICIOUS, 1), edge("m2", MALICIOUS, 2)), "n2", 2),
        (_box(edge("m", MALICIOUS, 1), edge("b1", BENIGN, 1), edge("b2", BENIGN, 1),
              _proto("b3", BENIGN, [2], [])), "n2", 1),
        (_box(edge("b1", BENIGN, 2), edge("b2", BENIGN, 3)), "n3", -2),
    ]
    ok = [risk_score(path, box).score[v] == want for box, v, want in cases]
    nothing = risk_score(path, _box(_proto("m", MALICIOUS, [9], []), _proto("b", BENIGN, [7, 8], [(0, 1)])))
    ok.append(set(nothing.score.values()) == {0})
    return ok


def _random_scoring_case(rng):
    directed = bool(rng.integers(2))
    target = random_graph(rng, int(rng.integers(3, 8)), 0.4, directed, palette=3, gid="t", embed=False)
    box = QueryBox("fp", "saliency", 2)
    for i in range(int(rng.integers(1, 7))):
        g = random_graph(rng, int(rng.integers(1, 4)), 0.6, directed, palette=3, gid=f"p{i}", embed=False)
        box.add(Prototype(g.with_label(MALICIOUS if rng.random() < 0.4 else BENIGN), "s", "saliency", 2, 1.0))
    return target, box


def _cover(q, t):
    qi, ti = q.index, t.index
    maps = brute_force_mappings(
        [n.id for n in q.nodes], [(qi[e.src], qi[e.dst]) for e in q.edges],
        [n.id for n in t.nodes], [(ti[e.src], ti[e.dst]) for e in t.edges],
        q.directed, False, lambda i, j: bool((q.nodes[i].feature == t.nodes[j].feature).all()))
    return {tv for m in maps for _, tv in m}


def test_criterion_03_scoring_conformance():
    traces = _hand_traces()
    rng = np.random.default_rng(7)
    broken = 0
    for _ in range(100):
        target, box = _random_scoring_case(rng)
        s = risk_score(target, box, MatchSettings())
        mal = [_cover(p.graph, target) for p in box.malicious]
        ben = [_cover(p.graph, target) for p in box.benign]
        for v in s.node_ids:
            m, b = sum(v in c for c in mal), sum(v in c for c in ben)
            sv = s.score[v]
            law = ((sv <= 0 or sv == m) and (sv >= 0 or (m == 0 and -sv <= b))
                   and (m + b > 0 or sv == 0))
            if not law:
                broken += 1
                break
    passed = all(traces) and broken == 0
    record(3, "risk-score conformance", passed,
           f"hand traces (+2, +1 benign-skip, -2, all-zero) {sum(traces)}/4; "
           f"law violations in {broken}/100 random box/target cases")
    assert passed


# 4 -----------------------------------------------------------------------------

def _gec_invariants_hold(rng):
    n = int(rng.integers(2, 10))
    g = random_graph(rng, n, 0.35, bool(rng.integers(2)), embed=False)
    if not g.edges:
        g = make_graph("g", [bit_feature(0)] * 2, [(0, 1)])
    scores = np.round(rng.random(len(g.edges)), 1)
    k = int(rng.integers(1, 10))
    pairs = g.edge_pairs
    chosen = gec_select(scores, pairs, k)
    in_set = set(pairs[chosen[0]].tolist())
    if chosen[0] != int(np.argmax(scores)):
        return False
    for step in range(1, len(chosen)):
        e = chosen[step]
        frontier = [f for f in range(len(scores)) if f not in chosen[:step]
                    and (pairs[f][0] in in_set or pairs[f][1] in in_set)]
        if e not in frontier or any(scores[f] > scores[e] for f in frontier):
            return False
        in_set.update(pairs[e].tolist())
    # connectivity, and stopping only at k or an exhausted component
    sub = to_undirected(gec_extract(WeightedExplanation(g, scores, "given", 1), k))
    reach = set(sub.edge_pairs[0].tolist())
    for _ in sub.nodes:
        for s, d in sub.edge_pairs.tolist():
            if s in reach or d in reach:
                reach.update((s, d))
    if len(reach) != len(sub.nodes):
        return False
    if len(chosen) < k:
        frontier_left = [f for f in range(len(scores)) if f not in chosen
                         and (pairs[f][0] in in_set or pairs[f][1] in in_set)]
        return not frontier_left
    return len(chosen) == k


def test_criterion_04_gec_conformance():
    hand = make_graph("hand", [bit_feature(i) for i in range(4)], [(0, 1), (1, 2), (0, 2), (2, 3)])
    w = WeightedExplanation(hand, np.array([0.9, 0.8, 0.1, 0.7]), "given", 1)
    name = lambda sub: {"ABCD"[int(e.src[1:])] + "ABCD"[int(e.dst[1:])] for e in sub.edges}  # noqa: E731
    k2 = name(gec_extract(w, 2)) == {"AB", "BC"}
    k3 = name(gec_extract(w, 3)) == {"AB", "BC", "CD"}
    rng = np.random.default_rng(11)
    good = sum(_gec_invariants_hold(rng) for _ in range(100))
    passed = k2 and k3 and good == 100
    record(4, "greedy edge-wise composition", passed,
           f"k=2 -> {{AB,BC}} {'ok' if k2 else 'WRONG'}, k=3 -> {{AB,BC,CD}} {'ok' if k3 else 'WRONG'}; "
           f"dominance+connectivity held on {good}/100 random graphs")
    assert passed


# 5 -----------------------------------------------------------------------------

def test_criterion_05_mask_gradient_correctness():
    rng = np.random.default_rng(5)
    worst = {}
    counts = {}
    for kind in KINDS:
        worst[kind], counts[kind] = 0.0, 0
        seed = 0
        while counts[kind] < 50:
            seed += 1
            g = random_graph(rng, int(rng.integers(2, 13)), 0.3, bool(rng.integers(2)))
            if not g.edges:
                continue
            m = GnnModel.initialize(kind, seed)
            mask = smooth_mask(m, g, rng)
            if mask is None:
                continue
            cls = int(rng.integers(2))
            worst[kind] = max(worst[kind], mask_gradient_error(m, g, mask, cls))
            counts[kind] += 1
    passed = all(v < 1e-4 for v in worst.values())
    record(5, "mask gradient vs central differences (step 1e-4)", passed,
           ", ".join(f"{k}: {counts[k]} graphs, max rel err {worst[k]:.2e}" for k in KINDS) + " (< 1e-4)")
    assert passed


# 6, 7, 8: one desk-scale corpus, both model kinds --------------------------------

@pytest.fixture(scope="module")
def desk(tmp_path_factory):
    root = tmp_path_factory.mktemp("desk")
    graphs, records = synth_corpus(7, 300, SynthParams(min_nodes=20, max_nodes=60))
    write_corpus(root / "corpus.jsonl", graphs)
    cache = ModelCache()
    start = time.perf_counter()
    reports = {}
    for kind in KINDS:
        cfg = PipelineConfig(str(root / "corpus.jsonl"), model=kind, **DESK)
        reports[kind] = (cfg, run_pipeline(cfg, root / "out", cache))
    elapsed = time.perf_counter() - start
    return {"root": root, "graphs": graphs, "records": records, "reports": reports, "elapsed": elapsed}


@pytest.mark.slow
def test_criterion_06_desk_scale_learning(desk):
    accs = {k: (rep.train_accuracy, rep.test_accuracy) for k, (_, rep) in desk["reports"].items()}
    sizes = [len(g.nodes) for g in desk["graphs"]]
    passed = (all(tr >= 0.95 and te >= 0.90 for tr, te in accs.values())
              and desk["elapsed"] < 300)
    record(6, "desk-scale learning", passed,
           f"{len(desk['graphs'])} graphs ({min(sizes)}-{max(sizes)} nodes), 250 epochs; "
           + ", ".join(f"{k}: train {tr:.3f} test {te:.3f}" for k, (tr, te) in accs.items())
           + f"; {desk['elapsed']:.0f} s total (< 300 s)")
    assert passed


@pytest.mark.slow
def test_criterion_07_query_box_soundness(desk):
    total, failed = 0, 0
    for kind, (cfg, _) in desk["reports"].items():
        box = load_query_box(desk["root"] / "out" / "boxes" / cfg.fingerprint)
        model = GnnModel.load(desk["root"] / "out" / "runs" / cfg.fingerprint / "gnn.json")
        total += len(box)
        failed += len(reverify(model, box))
    passed = total > 0 and failed == 0
    record(7, "query-box soundness after reload", passed,
           f"{total - failed}/{total} persisted prototypes re-verify")
    assert passed


@pytest.mark.slow
def test_criterion_08_discriminative_signal(desk):
    lines, passed = [], True
    for kind, (cfg, rep) in desk["reports"].items():
        run_dir = desk["root"] / "out" / "runs" / cfg.fingerprint
        wins = 0
        for row in rep.rows:
            planted = {v for r in desk["records"][row["target"]] if r.kind == MALICIOUS for v in r.nodes}
            with open(run_dir / "scores" / f"{row['target']}.csv") as fh:
                scores = {r["node_id"]: int(r["score"]) for r in csv.DictReader(fh)}
            positive = [v for v, s in scores.items() if s > 0]
            base_rate = len(planted) / len(scores)
            if positive and sum(v in planted for v in positive) / len(positive) > base_rate:
                wins += 1
        n = len(rep.rows)
        ok = n > 0 and wins / n >= 0.8
        passed &= ok
        lines.append(f"{kind}: {wins}/{n} malicious-predicted targets beat the base rate")
    record(8, "planted-motif enrichment among positive nodes", passed, "; ".join(lines) + " (need >= 80%)")
    assert passed


# 9, 10 ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def small_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("small")
    graphs, _ = synth_corpus(3, 40, SynthParams(min_nodes=20, max_nodes=40))
    write_corpus(root / "corpus.jsonl", graphs)
    return root / "corpus.jsonl"


def _files(root: Path):
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_criterion_09_run_determinism(small_corpus, tmp_path):
    argv = ["run", "--corpus", str(small_corpus), "--k", "4"]
    codes = [cli_main(argv + ["--out", str(tmp_path / name)]) for name in ("first", "second")]
    a, b = _files(tmp_path / "first"), _files(tmp_path / "second")
    kinds = {"report": 0, "checkpoint": 0, "scores": 0}
    for rel in a:
        if rel.name == "report.json":
            kinds["report"] += 1
        elif rel.name in ("gnn.json", "autoencoder.json"):
            kinds["checkpoint"] += 1
        elif rel.suffix == ".csv":
            kinds["scores"] += 1
    same = a.keys() == b.keys() and all(a[k] == b[k] for k in a)
    passed = codes == [0, 0] and same and kinds["report"] == 1 and kinds["checkpoint"] == 2 and kinds["scores"] > 0
    record(9, "run determinism", passed,
           f"{len(a)} files compared ({kinds['report']} report, {kinds['checkpoint']} checkpoints, "
           f"{kinds['scores']} score files): {'byte-identical' if same else 'DIFFERENT'}")
    assert passed


@pytest.mark.slow
def test_criterion_10_grid_completeness(small_corpus, tmp_path):
    code = cli_main(["grid", "--corpus", str(small_corpus), "--ae-epochs", "100", "--gnn-epochs", "30",
                     "--gnn-lr", "1e-3", "--k", "4", "--ig-steps", "8", "--out", str(tmp_path)])
    reports = load_reports(tmp_path)
    fps = {r.fingerprint for r in reports}
    boxes = list((tmp_path / "boxes").glob("*/manifest.json"))
    axes = {(r.config["model"], r.config["explainer"], r.config["mode"], r.config["graph_type"])
            for r in reports}
    passed = code == 0 and len(reports) == 16 and len(fps) == 16 and len(axes) == 16 and len(boxes) == 16
    record(10, "grid completeness", passed,
           f"2x2x2x2 grid -> {len(reports)} reports, {len(fps)} distinct fingerprints, "
           f"{len(boxes)} query boxes, {sum(not r.ok for r in reports)} failed cells")
    assert passed
