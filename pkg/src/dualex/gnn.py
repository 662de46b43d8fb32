"""Three-layer message-passing classifier with hand-derived gradients.

Two update rules over 64-dim node states:

``mean-aggregate``  h' = relu(W_agg . mean_nbr(h) + W_self . h + b)
``sage-concat``     h' = relu(W . [h || mean_nbr(h)] + b)

Directed graphs aggregate over in-neighbours, undirected graphs over all
neighbours, and a node without neighbours aggregates the zero vector.  Node
states are mean-pooled into a 64 -> 2 linear readout; logit 0 is benign and
logit 1 malicious.

Every forward pass accepts an edge mask: each edge's message is multiplied by
its mask entry while the mean still divides by the structural degree, so an
all-zero mask is exactly the edgeless graph and an all-ones mask is exactly
the unmasked graph.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from . import checkpoint
from .graph import BENIGN, EMBED_DIM, LABELS, MALICIOUS, Cfg, GraphError, class_index
from .optim import Adam

MEAN_AGGREGATE = "mean-aggregate"
SAGE_CONCAT = "sage-concat"
KINDS = (MEAN_AGGREGATE, SAGE_CONCAT)

N_LAYERS = 3
HIDDEN = 64
N_CLASSES = 2
DROPOUT = 0.5
DEFAULT_EPOCHS = 250
DEFAULT_LR = 1e-4
DEFAULT_WEIGHT_DECAY = 5e-4


class GnnError(ValueError):
    pass


@dataclass
class GnnModel:
    kind: str
    params: dict[str, np.ndarray]
    seed: int = 0
    dropout: float = DROPOUT
    lr: float = DEFAULT_LR
    weight_decay: float = DEFAULT_WEIGHT_DECAY
    epochs: int = 0
    history: list[float] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise GnnError(f"unknown model kind {self.kind!r}")
        for name, shape in param_shapes(self.kind).items():
            if name not in self.params or self.params[name].shape != shape:
                raise GnnError(f"parameter {name} missing or not shaped {shape}")

    @classmethod
    def initialize(cls, kind: str, seed: int) -> "GnnModel":
        """Uniform fan-in init (He bound for ReLU layers), zero biases."""
        rng = np.random.default_rng(seed)
        params = {}
        for name, shape in param_shapes(kind).items():
            if name.startswith("b"):
                params[name] = np.zeros(shape)
            else:
                bound = np.sqrt((6.0 if name != "Wout" else 3.0) / shape[0])
                params[name] = rng.uniform(-bound, bound, size=shape)
        return cls(kind, params, seed=seed)

    def copy(self) -> "GnnModel":
        return GnnModel(self.kind, {k: v.copy() for k, v in self.params.items()}, self.seed,
                        self.dropout, self.lr, self.weight_decay, self.epochs, list(self.history))

    def layer(self, l: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(W_self, W_agg, b)`` for layer ``l`` regardless of kind."""
        p = self.params
        if self.kind == MEAN_AGGREGATE:
            return p[f"Wself{l}"], p[f"Wagg{l}"], p[f"b{l}"]
        w = p[f"W{l}"]
        return w[:HIDDEN], w[HIDDEN:], p[f"b{l}"]

    # persistence ----------------------------------------------------------

    def to_bytes(self) -> bytes:
        meta = {"kind": self.kind, "seed": self.seed, "dropout": self.dropout, "lr": self.lr,
                "weight_decay": self.weight_decay, "epochs": self.epochs,
                "layers": N_LAYERS, "hidden": HIDDEN, "classes": list(LABELS)}
        return checkpoint.dumps("gnn", meta, self.history, self.params)

    @classmethod
    def from_bytes(cls, data: bytes) -> "GnnModel":
        meta, history, params = checkpoint.loads(data, "gnn")
        return cls(meta["kind"], params, seed=meta["seed"], dropout=meta["dropout"], lr=meta["lr"],
                   weight_decay=meta["weight_decay"], epochs=meta["epochs"], history=history)

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: Union[str, Path]) -> "GnnModel":
        return cls.from_bytes(Path(path).read_bytes())


def param_shapes(kind: str) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    for l in range(N_LAYERS):
        d_in = EMBED_DIM if l == 0 else HIDDEN
        if kind == MEAN_AGGREGATE:
            shapes[f"Wself{l}"] = (d_in, HIDDEN)
            shapes[f"Wagg{l}"] = (d_in, HIDDEN)
        else:
            shapes[f"W{l}"] = (2 * d_in, HIDDEN)
        shapes[f"b{l}"] = (HIDDEN,)
    shapes["Wout"] = (HIDDEN, N_CLASSES)
    shapes["bout"] = (N_CLASSES,)
    return shapes


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max())
    return e / e.sum()


@dataclass
class ForwardCache:
    """Activations kept for the backward pass."""

    adjacency: np.ndarray
    inputs: list[np.ndarray]     # H^(l) fed into layer l
    aggregates: list[np.ndarray]
    preacts: list[np.ndarray]
    dropmasks: list[Optional[np.ndarray]]
    final: np.ndarray
    pooled: np.ndarray
    logits: np.ndarray
    probs: np.ndarray


def _adjacency(g: Cfg, mask: Optional[np.ndarray]) -> np.ndarray:
    """Row-normalised masked adjacency: ``A[d, s] = mask_e / indeg(d)``."""
    n = len(g.nodes)
    src, dst, eid = g.arcs
    a = np.zeros((n, n))
    if len(src) == 0:
        return a
    deg = np.bincount(dst, minlength=n).astype(np.float64)
    coef = (np.ones(len(src)) if mask is None else mask[eid]) / deg[dst]
    a[dst, src] = coef
    return a


def _check_mask(g: Cfg, mask: Optional[np.ndarray]) -> Optional[np.ndarray]:
    if mask is None:
        return None
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != (len(g.edges),):
        raise GnnError(f"mask has shape {mask.shape}, graph {g.id!r} has {len(g.edges)} edges")
    return mask


def forward(m: GnnModel, g: Cfg, mask: Optional[np.ndarray] = None, train_mode: bool = False,
            rng: Optional[np.random.Generator] = None) -> tuple[np.ndarray, ForwardCache]:
    """Class probabilities ``[p_benign, p_malicious]`` and the activation cache.

    Dropout is applied after each layer only when ``train_mode`` is set, drawing
    from ``rng`` (required in that case).
    """
    if not g.nodes:
        raise GnnError(f"graph {g.id!r} has no nodes")
    try:
        h = g.embedding_matrix
    except GraphError as exc:
        raise GnnError(str(exc)) from None
    mask = _check_mask(g, mask)
    if train_mode and rng is None:
        raise GnnError("train-mode forward needs a seeded generator")
    a = _adjacency(g, mask)
    inputs, aggs, pre, drops = [], [], [], []
    for l in range(N_LAYERS):
        w_self, w_agg, b = m.layer(l)
        agg = a @ h
        z = h @ w_self + agg @ w_agg + b
        out = np.maximum(z, 0.0)
        d = None
        if train_mode and m.dropout > 0:
            d = (rng.random(out.shape) >= m.dropout) / (1.0 - m.dropout)
            out = out * d
        inputs.append(h)
        aggs.append(agg)
        pre.append(z)
        drops.append(d)
        h = out
    pooled = h.mean(axis=0)
    logits = pooled @ m.params["Wout"] + m.params["bout"]
    probs = _softmax(logits)
    return probs, ForwardCache(a, inputs, aggs, pre, drops, h, pooled, logits, probs)


def backward(m: GnnModel, g: Cfg, cache: ForwardCache, dlogits: np.ndarray,
             want_params: bool = True, want_mask: bool = False
             ) -> tuple[dict[str, np.ndarray], Optional[np.ndarray]]:
    """Backpropagate ``dlogits`` to parameter gradients and/or mask gradients."""
    n = cache.final.shape[0]
    grads: dict[str, np.ndarray] = {}
    if want_params:
        grads["Wout"] = np.outer(cache.pooled, dlogits)
        grads["bout"] = dlogits.copy()
    dh = np.tile((m.params["Wout"] @ dlogits) / n, (n, 1))
    a = cache.adjacency
    d_adj = np.zeros_like(a) if want_mask else None
    for l in reversed(range(N_LAYERS)):
        w_self, w_agg, _ = m.layer(l)
        if cache.dropmasks[l] is not None:
            dh = dh * cache.dropmasks[l]
        dz = dh * (cache.preacts[l] > 0)
        if want_params:
            gs = cache.inputs[l].T @ dz
            ga = cache.aggregates[l].T @ dz
            if m.kind == MEAN_AGGREGATE:
                grads[f"Wself{l}"] = gs
                grads[f"Wagg{l}"] = ga
            else:
                grads[f"W{l}"] = np.vstack([gs, ga])
            grads[f"b{l}"] = dz.sum(axis=0)
        if l == 0 and not want_mask:
            break
        d_agg = dz @ w_agg.T
        if want_mask:
            d_adj += d_agg @ cache.inputs[l].T
        if l > 0:
            dh = dz @ w_self.T + a.T @ d_agg
    dmask = None
    if want_mask:
        src, dst, eid = g.arcs
        dmask = np.zeros(len(g.edges))
        if len(src):
            deg = np.bincount(dst, minlength=n).astype(np.float64)
            np.add.at(dmask, eid, d_adj[dst, src] / deg[dst])
    return grads, dmask


def logit(m: GnnModel, g: Cfg, mask: Optional[np.ndarray], target_class: int) -> float:
    _, cache = forward(m, g, mask)
    return float(cache.logits[target_class])


def grad_wrt_mask(m: GnnModel, g: Cfg, mask: Optional[np.ndarray] = None,
                  target_class: Union[int, str] = 1) -> np.ndarray:
    """Exact gradient of one class logit with respect to every edge mask entry (eval mode)."""
    if isinstance(target_class, str):
        target_class = class_index(target_class)
    if mask is None:
        mask = np.ones(len(g.edges))
    _, cache = forward(m, g, mask)
    if not len(g.edges):
        return np.zeros(0)
    dlogits = np.zeros(N_CLASSES)
    dlogits[target_class] = 1.0
    _, dmask = backward(m, g, cache, dlogits, want_params=False, want_mask=True)
    return dmask


@dataclass(frozen=True)
class Prediction:
    label: str
    probability: float
    probs: tuple[float, float]


def predict(m: GnnModel, g: Cfg) -> Prediction:
    """Eval-mode argmax; an exact tie goes to benign."""
    probs, _ = forward(m, g)
    idx = 1 if probs[1] > probs[0] else 0
    return Prediction(LABELS[idx], float(probs[idx]), (float(probs[0]), float(probs[1])))


def accuracy(m: GnnModel, graphs: Sequence[Cfg]) -> float:
    if not graphs:
        return float("nan")
    return sum(predict(m, g).label == g.label for g in graphs) / len(graphs)


def train(m0: GnnModel, corpus: Sequence[Cfg], epochs: int = DEFAULT_EPOCHS,
          lr: float = DEFAULT_LR, weight_decay: float = DEFAULT_WEIGHT_DECAY,
          seed: int = 0) -> GnnModel:
    """Per-graph Adam steps on cross-entropy, one pass over a seeded shuffle per epoch.

    Weight decay is L2 on weight matrices (not biases).  Dropout masks come from
    a generator keyed on ``(seed, epoch, step)`` so any step can be replayed.
    ``history[t]`` is eval-mode training accuracy after epoch ``t + 1``.
    """
    if not corpus:
        raise GnnError("cannot train on an empty corpus")
    for g in corpus:
        if g.label not in (BENIGN, MALICIOUS):
            raise GnnError(f"training graph {g.id!r} has no class label")
        if not g.has_embeddings:
            raise GnnError(f"training graph {g.id!r} is not embedded")
    m = m0.copy()
    m.lr, m.weight_decay = lr, weight_decay
    targets = [class_index(g.label) for g in corpus]
    opt = Adam(m.params, lr=lr, weight_decay=weight_decay,
               decay={k for k in m.params if k.startswith("W")})
    history = list(m.history)
    for epoch in range(epochs):
        order = np.random.default_rng([seed, epoch]).permutation(len(corpus))
        for step, i in enumerate(order):
            g = corpus[i]
            drop_rng = np.random.default_rng([seed, epoch, step])
            probs, cache = forward(m, g, train_mode=True, rng=drop_rng)
            dlogits = probs.copy()
            dlogits[targets[i]] -= 1.0
            grads, _ = backward(m, g, cache, dlogits)
            opt.step(grads)
        history.append(accuracy(m, corpus))
    m.epochs = m0.epochs + epochs
    m.seed = seed
    m.history = history
    return m
