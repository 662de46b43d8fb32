import json

import pytest

from dualex.corpus import dump_corpus
from dualex.gnn import predict
from dualex.graph import BENIGN, MALICIOUS
from dualex.querybox import (QueryBoxError, build_query_box, load_query_box, reverify,
                             save_query_box)


@pytest.fixture(scope="module")
def box(small_world):
    return build_query_box(small_world["model"], small_world["graphs"], "saliency", 4, "fp1")


def test_box_accounts_for_every_correct_graph(small_world, box):
    m = small_world["model"]
    correct = [g for g in small_world["graphs"] if predict(m, g).label == g.label]
    assert len(box) + len(box.rejected) == len(correct)
    assert {p.source for p in box.prototypes()} | set(box.rejected) == {g.id for g in correct}
    assert all(p.partition == next(g.label for g in correct if g.id == p.source)
               for p in box.prototypes())
    assert all(len(p.graph.edges) <= 4 for p in box.prototypes())


def test_misclassified_corpus_gives_empty_box(small_world):
    m = small_world["model"]
    flipped = [g.with_label(BENIGN if predict(m, g).label == MALICIOUS else MALICIOUS)
               for g in small_world["graphs"]]
    empty = build_query_box(m, flipped, "saliency", 4, "fp")
    assert len(empty) == 0 and empty.rejected == []


def test_rebuild_is_identical(small_world, box):
    again = build_query_box(small_world["model"], small_world["graphs"], "saliency", 4, "fp1")
    assert dump_corpus([p.graph for p in again.prototypes()]) == dump_corpus([p.graph for p in box.prototypes()])
    assert again.rejected == box.rejected


def test_prototypes_verify(small_world, box):
    assert reverify(small_world["model"], box) == []


def test_persisted_box_reverifies(small_world, box, tmp_path):
    path = save_query_box(box, tmp_path)
    assert path == tmp_path / "fp1"
    manifest = json.loads((path / "manifest.json").read_text())
    assert manifest["k"] == 4 and manifest["explainer"] == "saliency"
    assert manifest["counts"] == {"malicious": len(box.malicious), "benign": len(box.benign)}
    back = load_query_box(path)
    assert [p.graph for p in back.prototypes()] == [p.graph for p in box.prototypes()]
    assert reverify(small_world["model"], back) == []


def test_load_errors(tmp_path, box):
    with pytest.raises(QueryBoxError):
        load_query_box(tmp_path / "missing")
    path = save_query_box(box, tmp_path)
    (path / "prototypes.jsonl").write_text((path / "prototypes.jsonl").read_text().splitlines()[0] + "\n")
    with pytest.raises(QueryBoxError, match="lacks"):
        load_query_box(path)


def test_unfingerprinted_box_cannot_be_saved(small_world, tmp_path):
    b = build_query_box(small_world["model"], small_world["graphs"][:3], "saliency", 2)
    with pytest.raises(QueryBoxError):
        save_query_box(b, tmp_path)
