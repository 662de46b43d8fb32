import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import bit_feature, random_graph
from oracles import brute_force_mappings
from dualex.graph import BENIGN, MALICIOUS, make_graph
from dualex.querybox import Prototype, QueryBox
from dualex.scoring import (MatchSettings, ScoringError, match_stats, risk_score, summarize,
                            target_stats)

# target: a path n0 -> n1 -> n2 -> n3 -> n4 with one distinct feature per node
TARGET = make_graph("t", [bit_feature(i) for i in range(5)], [(0, 1), (1, 2), (2, 3), (3, 4)])


def proto(name, partition, bits, edges):
    g = make_graph(name, [bit_feature(b) for b in bits], edges, label=partition)
    return Prototype(g, "src", "saliency", len(edges), 1.0)


def box_of(*protos):
    box = QueryBox("fp", "saliency", 1)
    for p in protos:
        box.add(p)
    return box


def edge_proto(name, partition, a):
    """Matches exactly the target edge n{a} -> n{a+1}."""
    return proto(name, partition, [a, a + 1], [(0, 1)])


def test_two_malicious_prototypes_give_plus_two():
    s = risk_score(TARGET, box_of(edge_proto("m1", MALICIOUS, 1), edge_proto("m2", MALICIOUS, 2)))
    assert s.score == {"n0": 0, "n1": 1, "n2": 2, "n3": 1, "n4": 0}


def test_benign_skipped_where_malicious_scored():
    s = risk_score(TARGET, box_of(edge_proto("m", MALICIOUS, 1),
                                  edge_proto("b1", BENIGN, 1), edge_proto("b2", BENIGN, 1),
                                  proto("b3", BENIGN, [2], [])))
    assert s.score["n2"] == 1
    assert s.score["n1"] == 1
    assert s.benign_hits["n2"] == 3


def test_benign_only_goes_negative():
    s = risk_score(TARGET, box_of(edge_proto("b1", BENIGN, 2), edge_proto("b2", BENIGN, 3)))
    assert s.score == {"n0": 0, "n1": 0, "n2": -1, "n3": -2, "n4": -1}


def test_no_matches_all_zero():
    s = risk_score(TARGET, box_of(proto("m", MALICIOUS, [9], []), proto("b", BENIGN, [8, 7], [(0, 1)])))
    assert set(s.score.values()) == {0}
    assert target_stats(s).avg_matched_query_nodes is None


def test_coverage_counts_once_per_prototype():
    # two mappings share n0
    t = make_graph("t", [bit_feature(0), bit_feature(1), bit_feature(1)], [(0, 1), (0, 2)])
    m = proto("m", MALICIOUS, [0, 1], [(0, 1)])
    s = risk_score(t, box_of(m))
    assert s.score == {"n0": 1, "n1": 1, "n2": 1}
    assert s.malicious_hits == {"n0": 2, "n1": 1, "n2": 1}


def test_empty_box_is_an_error():
    with pytest.raises(ScoringError):
        risk_score(TARGET, QueryBox("fp", "saliency", 1))


def test_csv_layout():
    s = risk_score(TARGET, box_of(edge_proto("m", MALICIOUS, 0)))
    lines = s.to_csv().splitlines()
    assert lines[0] == "node_id,score,malicious_hits,benign_hits"
    assert lines[1] == "n0,1,1,0"
    assert len(lines) == 6


def test_match_stats_averages():
    one = box_of(proto("m5", MALICIOUS, [0, 1, 2, 3, 4], [(0, 1), (1, 2), (2, 3), (3, 4)]))
    st_ = match_stats([TARGET], one)[0]
    assert (st_.matched_queries, st_.avg_matched_query_nodes) == (1, 5)
    two = box_of(proto("m3", MALICIOUS, [0, 1, 2], [(0, 1), (1, 2)]),
                 proto("b5", BENIGN, [0, 1, 2, 3, 4], [(0, 1), (1, 2), (2, 3), (3, 4)]))
    st_ = match_stats([TARGET], two)[0]
    assert (st_.matched_queries, st_.avg_matched_query_nodes) == (2, 4)
    none = match_stats([TARGET], box_of(proto("x", MALICIOUS, [9], [])))[0]
    assert none.matched_queries == 0 and none.avg_matched_query_nodes is None
    agg = summarize([none, st_])
    assert agg["matched_targets"] == 1 and agg["mean_avg_matched_query_nodes"] == 4


def random_box_and_target(seed):
    rng = np.random.default_rng(seed)
    directed = bool(rng.integers(2))
    target = random_graph(rng, int(rng.integers(3, 8)), 0.4, directed, palette=3, gid="t", embed=False)
    box = QueryBox("fp", "saliency", 2)
    for i in range(int(rng.integers(1, 7))):
        n = int(rng.integers(1, 4))
        g = random_graph(rng, n, 0.6, directed, palette=3, gid=f"p{i}", embed=False)
        g = g.with_label(MALICIOUS if rng.random() < 0.4 else BENIGN)
        box.add(Prototype(g, "src", "saliency", 2, 1.0))
    return target, box


def oracle_cover(q, t, mode):
    qi, ti = q.index, t.index
    maps = brute_force_mappings(
        [n.id for n in q.nodes], [(qi[e.src], qi[e.dst]) for e in q.edges],
        [n.id for n in t.nodes], [(ti[e.src], ti[e.dst]) for e in t.edges],
        q.directed, mode == "isomorphism",
        lambda i, j: bool((q.nodes[i].feature == t.nodes[j].feature).all()))
    return {tv for m in maps for _, tv in m}


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["monomorphism", "isomorphism"]))
def test_scoring_laws(seed, mode):
    target, box = random_box_and_target(seed)
    s = risk_score(target, box, MatchSettings(mode=mode))
    mal = [oracle_cover(p.graph, target, mode) for p in box.malicious]
    ben = [oracle_cover(p.graph, target, mode) for p in box.benign]
    for v in s.node_ids:
        m = sum(v in c for c in mal)
        b = sum(v in c for c in ben)
        if s.score[v] > 0:
            assert s.score[v] == m
        elif s.score[v] < 0:
            assert m == 0 and -s.score[v] <= b
        if m == 0 and b == 0:
            assert s.score[v] == 0
        # exact value under malicious-first ordering
        assert s.score[v] == (m if m else -b)
