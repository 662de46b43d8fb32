"""Edge-attribution explainers and greedy edge-wise subgraph extraction."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .gnn import GnnModel, grad_wrt_mask, predict
from .graph import LABELS, Cfg, EdgeRecord, class_index

SALIENCY = "saliency"
INTEGRATED_GRADIENTS = "integrated-gradients"
EXPLAINERS = (SALIENCY, INTEGRATED_GRADIENTS)

DEFAULT_IG_STEPS = 32
DEFAULT_K = 8


class ExtractionError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class WeightedExplanation:
    graph: Cfg
    scores: np.ndarray
    kind: str
    target_class: int

    def annotated(self) -> Cfg:
        """The source graph with each edge's weight set to its score."""
        return self.graph.with_weights(self.scores)


def normalize_scores(raw: np.ndarray) -> np.ndarray:
    """Absolute values divided by their max; all-zero input stays all-zero."""
    a = np.abs(np.asarray(raw, dtype=np.float64))
    top = a.max() if a.size else 0.0
    return a / top if top > 0 else np.zeros_like(a)


def _target(m: GnnModel, g: Cfg, target_class: Union[int, str, None]) -> int:
    if target_class is None:
        return class_index(predict(m, g).label)
    if isinstance(target_class, str):
        return class_index(target_class)
    return int(target_class)


def explain_saliency(m: GnnModel, g: Cfg, target_class: Union[int, str, None] = None
                     ) -> WeightedExplanation:
    """|d logit / d mask| at the all-ones mask.  Defaults to the predicted class."""
    c = _target(m, g, target_class)
    grad = grad_wrt_mask(m, g, np.ones(len(g.edges)), c)
    return WeightedExplanation(g, normalize_scores(grad), SALIENCY, c)


def integrated_gradients_raw(m: GnnModel, g: Cfg, steps: int, target_class: int) -> np.ndarray:
    """Signed right-Riemann integral of the mask gradient from the zero mask to ones.

    The input-minus-baseline factor is 1 for every edge, so this is the plain
    average of gradients at masks ``t/steps`` for ``t = 1..steps``.
    """
    if steps < 1:
        raise ValueError("integrated gradients needs at least one step")
    total = np.zeros(len(g.edges))
    ones = np.ones(len(g.edges))
    for t in range(1, steps + 1):
        total += grad_wrt_mask(m, g, ones * (t / steps), target_class)
    return total / steps


def explain_integrated_gradients(m: GnnModel, g: Cfg, steps: int = DEFAULT_IG_STEPS,
                                 target_class: Union[int, str, None] = None) -> WeightedExplanation:
    c = _target(m, g, target_class)
    raw = integrated_gradients_raw(m, g, steps, c)
    return WeightedExplanation(g, normalize_scores(raw), INTEGRATED_GRADIENTS, c)


def explain(kind: str, m: GnnModel, g: Cfg, target_class: Union[int, str, None] = None,
            ig_steps: int = DEFAULT_IG_STEPS) -> WeightedExplanation:
    if kind == SALIENCY:
        return explain_saliency(m, g, target_class)
    if kind == INTEGRATED_GRADIENTS:
        return explain_integrated_gradients(m, g, ig_steps, target_class)
    raise ValueError(f"unknown explainer {kind!r}")


def gec_select(scores: np.ndarray, pairs: np.ndarray, k: int) -> list[int]:
    """Greedy edge-wise composition over edge endpoints ``pairs`` (node indices).

    Starts from the highest-scoring edge, then repeatedly takes the best
    unselected edge touching the selected node set, ignoring direction.  Ties
    go to the lower edge index.  Stops at ``k`` edges or when no edge touches
    the selection.  Returns edge indices in selection order.
    """
    if len(scores) == 0:
        raise ExtractionError("cannot extract from a graph without edges")
    if k < 1:
        raise ExtractionError("k must be at least 1")
    scores = np.asarray(scores, dtype=np.float64)
    first = int(np.argmax(scores))  # argmax returns the lowest index on ties
    chosen = [first]
    taken = np.zeros(len(scores), dtype=bool)
    taken[first] = True
    in_set = set(int(x) for x in pairs[first])
    while len(chosen) < k:
        best = -1
        for e in range(len(scores)):
            if taken[e]:
                continue
            s, d = pairs[e]
            if s not in in_set and d not in in_set:
                continue
            if best < 0 or scores[e] > scores[best]:
                best = e
        if best < 0:
            break
        chosen.append(best)
        taken[best] = True
        in_set.update(int(x) for x in pairs[best])
    return chosen


def gec_extract(w: WeightedExplanation, k: int = DEFAULT_K, graph_id: Optional[str] = None) -> Cfg:
    """Extract the greedy k-edge subgraph with the source nodes' features and embeddings.

    Nodes and edges keep the source graph's order; edge weights carry the
    explanation scores.  The result is unlabelled until verified.
    """
    g = w.graph
    chosen = sorted(gec_select(w.scores, g.edge_pairs, k))
    keep_nodes = set()
    for e in chosen:
        keep_nodes.update(g.edge_pairs[e].tolist())
    nodes = tuple(n for i, n in enumerate(g.nodes) if i in keep_nodes)
    edges = tuple(EdgeRecord(g.edges[e].src, g.edges[e].dst, float(w.scores[e])) for e in chosen)
    return Cfg(graph_id or f"{g.id}/gec", nodes, edges, g.directed, None)


def verify(m: GnnModel, sub: Cfg, expected: Union[str, int]) -> bool:
    """True iff the frozen model assigns ``sub`` the expected class."""
    label = LABELS[expected] if isinstance(expected, int) else expected
    return predict(m, sub).label == label
