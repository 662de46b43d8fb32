from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import strategies as st

sys.path.insert(0, str(Path(__file__).parent))

from dualex.autoencoder import corpus_features, embed_corpus, train_autoencoder  # noqa: E402
from dualex.gnn import GnnModel, train  # noqa: E402
from dualex.graph import EMBED_DIM, FEATURE_BITS, make_graph  # noqa: E402
from dualex.synth import SynthParams, synth_corpus  # noqa: E402


def bit_feature(*bits: int) -> np.ndarray:
    f = np.zeros(FEATURE_BITS, dtype=np.uint8)
    f[list(bits)] = 1
    return f


def random_graph(rng: np.random.Generator, n: int, p: float, directed: bool = True,
                 palette: int = 2, label=None, gid: str = "g", embed: bool = True):
    """Random simple graph with features drawn from a small palette."""
    feats = [bit_feature(int(rng.integers(palette))) for _ in range(n)]
    edges = []
    for i in range(n):
        for j in range(n):
            if i == j or (not directed and j < i):
                continue
            if rng.random() < p:
                edges.append((i, j))
    emb = [rng.normal(size=EMBED_DIM) for _ in range(n)] if embed else None
    return make_graph(gid, feats, edges, directed=directed, label=label, embeddings=emb)


@st.composite
def graphs(draw, min_nodes=1, max_nodes=7, directed=None, weighted=False, embedded=True):
    n = draw(st.integers(min_nodes, max_nodes))
    d = draw(st.booleans()) if directed is None else directed
    pairs = [(i, j) for i in range(n) for j in range(n) if i != j and (d or i < j)]
    chosen = draw(st.lists(st.sampled_from(pairs), unique=True, max_size=len(pairs))) if pairs else []
    edges = []
    for i, j in chosen:
        if weighted:
            edges.append((i, j, draw(st.floats(0, 1, allow_nan=False))))
        else:
            edges.append((i, j))
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    feats = [bit_feature(*rng.choice(FEATURE_BITS, size=int(rng.integers(1, 5)), replace=False))
             for _ in range(n)]
    emb = [rng.normal(size=EMBED_DIM) for _ in range(n)] if embedded else None
    label = draw(st.sampled_from([None, "benign", "malicious"]))
    return make_graph(f"h{seed}", feats, edges, directed=d, label=label, embeddings=emb)


@pytest.fixture(scope="session")
def small_world():
    """A quickly trained autoencoder + classifier on a small planted-motif corpus."""
    raw, records = synth_corpus(11, 60, SynthParams(min_nodes=20, max_nodes=30))
    ae = train_autoencoder(corpus_features(raw), epochs=150, seed=0)
    graphs_ = embed_corpus(ae, raw)
    model = train(GnnModel.initialize("mean-aggregate", 0), graphs_, epochs=30, lr=1e-3, seed=0)
    return {"raw": raw, "graphs": graphs_, "records": records, "ae": ae, "model": model}


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in LINES:
            terminalreporter.write_line(line)
