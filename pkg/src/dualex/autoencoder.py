"""Dense autoencoder that compresses 438-bit node features to 64-dim embeddings.

Encoder 438 -> 256 -> 128 -> 64 with ReLU hidden layers and a linear
bottleneck; the decoder mirrors it (64 -> 128 -> 256 -> 438) and ends in a
sigmoid.  Trained full-batch with Adam on mean squared reconstruction error.
Gradients are written out by hand.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence, Union

import numpy as np

from . import checkpoint
from .graph import EMBED_DIM, FEATURE_BITS, Cfg
from .optim import Adam

ENCODER_SIZES = (FEATURE_BITS, 256, 128, EMBED_DIM)
DECODER_SIZES = (EMBED_DIM, 128, 256, FEATURE_BITS)
N_LAYERS = 6
DEFAULT_EPOCHS = 700
DEFAULT_LR = 0.01


def layer_shapes() -> list[tuple[int, int]]:
    sizes = ENCODER_SIZES + DECODER_SIZES[1:]
    return [(sizes[i], sizes[i + 1]) for i in range(N_LAYERS)]


@dataclass
class AutoencoderModel:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    seed: int = 0
    epochs: int = 0
    lr: float = DEFAULT_LR
    loss_history: list[float] = field(default_factory=list)

    def __post_init__(self) -> None:
        shapes = layer_shapes()
        if len(self.weights) != N_LAYERS or len(self.biases) != N_LAYERS:
            raise ValueError(f"autoencoder needs {N_LAYERS} layers")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != shapes[i] or b.shape != (shapes[i][1],):
                raise ValueError(f"layer {i} has shape {w.shape}/{b.shape}, expected {shapes[i]}")

    @classmethod
    def initialize(cls, seed: int, bit_rates: np.ndarray | None = None) -> "AutoencoderModel":
        """He-uniform weights from ``seed``, zero biases.

        With ``bit_rates`` the output bias starts at the logit of each bit's
        frequency; without it a fresh sigmoid decoder saturates toward zero in
        the first few full-batch Adam steps and the ReLU layers die.
        """
        rng = np.random.default_rng(seed)
        weights, biases = [], []
        for fan_in, fan_out in layer_shapes():
            bound = np.sqrt(6.0 / fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        if bit_rates is not None:
            p = np.clip(bit_rates, 1e-3, 1 - 1e-3)
            biases[-1] = np.log(p / (1 - p))
        return cls(weights, biases, seed=seed)

    @classmethod
    def zeros(cls) -> "AutoencoderModel":
        shapes = layer_shapes()
        return cls([np.zeros(s) for s in shapes], [np.zeros(s[1]) for s in shapes])

    def params(self) -> dict[str, np.ndarray]:
        out = {}
        for i in range(N_LAYERS):
            out[f"W{i}"] = self.weights[i]
            out[f"b{i}"] = self.biases[i]
        return out

    def copy(self) -> "AutoencoderModel":
        return AutoencoderModel([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                                self.seed, self.epochs, self.lr, list(self.loss_history))

    # forward/backward -----------------------------------------------------

    def _forward(self, x: np.ndarray) -> list[np.ndarray]:
        acts = [x]
        h = x
        for i in range(N_LAYERS):
            z = h @ self.weights[i] + self.biases[i]
            if i == N_LAYERS - 1:
                h = 0.5 * (1.0 + np.tanh(0.5 * z))
            elif i == 2:
                h = z  # linear bottleneck
            else:
                h = np.maximum(z, 0.0)
            acts.append(h)
        return acts

    def encode(self, x: np.ndarray) -> np.ndarray:
        h = np.asarray(x, dtype=np.float64)
        for i in range(3):
            z = h @ self.weights[i] + self.biases[i]
            h = z if i == 2 else np.maximum(z, 0.0)
        return h

    def reconstruct(self, x: np.ndarray) -> np.ndarray:
        return self._forward(np.asarray(x, dtype=np.float64))[-1]

    def loss(self, x: np.ndarray, weights: np.ndarray | None = None) -> float:
        x = np.asarray(x, dtype=np.float64)
        w = np.ones(len(x)) if weights is None else weights
        err = ((self.reconstruct(x) - x) ** 2).mean(axis=1)
        return float((w * err).sum() / w.sum())

    def _grads(self, x: np.ndarray, w: np.ndarray) -> tuple[float, dict[str, np.ndarray]]:
        acts = self._forward(x)
        out = acts[-1]
        norm = w.sum() * x.shape[1]
        diff = out - x
        loss = float((w[:, None] * diff * diff).sum() / norm)
        # d loss / d out, then through the sigmoid
        delta = (2.0 / norm) * w[:, None] * diff * out * (1.0 - out)
        grads: dict[str, np.ndarray] = {}
        for i in reversed(range(N_LAYERS)):
            grads[f"W{i}"] = acts[i].T @ delta
            grads[f"b{i}"] = delta.sum(axis=0)
            if i == 0:
                break
            delta = delta @ self.weights[i].T
            if i - 1 != 2:
                delta = delta * (acts[i] > 0)
        return loss, grads

    # persistence ----------------------------------------------------------

    def to_bytes(self) -> bytes:
        meta = {"seed": self.seed, "epochs": self.epochs, "lr": self.lr,
                "layers": [list(s) for s in layer_shapes()],
                "activations": ["relu", "relu", "linear", "relu", "relu", "sigmoid"]}
        return checkpoint.dumps("autoencoder", meta, self.loss_history, self.params())

    @classmethod
    def from_bytes(cls, data: bytes) -> "AutoencoderModel":
        meta, history, params = checkpoint.loads(data, "autoencoder")
        return cls([params[f"W{i}"] for i in range(N_LAYERS)],
                   [params[f"b{i}"] for i in range(N_LAYERS)],
                   seed=meta["seed"], epochs=meta["epochs"], lr=meta["lr"], loss_history=history)

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: Union[str, Path]) -> "AutoencoderModel":
        return cls.from_bytes(Path(path).read_bytes())


def _unique_rows(features: Sequence[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Distinct feature rows (first-seen order) with multiplicities."""
    index: dict[bytes, int] = {}
    rows: list[np.ndarray] = []
    counts: list[int] = []
    for f in features:
        key = np.asarray(f, dtype=np.uint8).tobytes()
        if key in index:
            counts[index[key]] += 1
        else:
            index[key] = len(rows)
            rows.append(np.asarray(f, dtype=np.float64))
            counts.append(1)
    return np.stack(rows), np.asarray(counts, dtype=np.float64)


def train_autoencoder(features: Sequence[np.ndarray], epochs: int = DEFAULT_EPOCHS,
                      lr: float = DEFAULT_LR, seed: int = 0,
                      init: AutoencoderModel | None = None) -> AutoencoderModel:
    """Full-batch Adam on mean squared reconstruction error.

    Repeated feature vectors are folded into one weighted row, which gives the
    same loss and gradients as the plain full batch.  ``loss_history[0]`` is the
    loss before training and ``loss_history[t]`` the loss after epoch ``t``.
    """
    if len(features) == 0:
        raise ValueError("autoencoder training needs at least one feature vector")
    x, w = _unique_rows(features)
    if init is not None:
        model = init.copy()
    else:
        model = AutoencoderModel.initialize(seed, bit_rates=(w[:, None] * x).sum(0) / w.sum())
    model.seed, model.lr = seed, lr
    params = model.params()
    opt = Adam(params, lr=lr)
    history = [model.loss(x, w)]
    for _ in range(epochs):
        _, grads = model._grads(x, w)
        opt.step(grads)
        loss = model.loss(x, w)
        if not np.isfinite(loss):
            raise FloatingPointError(f"autoencoder loss diverged at epoch {len(history)}")
        history.append(loss)
    model.epochs = epochs
    model.loss_history = history
    return model


def embed(model: AutoencoderModel, feature: np.ndarray) -> np.ndarray:
    """64-dim bottleneck embedding of a single 438-bit feature."""
    return model.encode(np.asarray(feature, dtype=np.float64)[None, :])[0]


def embed_graph(model: AutoencoderModel, g: Cfg) -> Cfg:
    if not g.nodes:
        return g
    x = np.stack([n.feature for n in g.nodes]).astype(np.float64)
    return g.with_embeddings(model.encode(x))


def embed_corpus(model: AutoencoderModel, graphs: Iterable[Cfg]) -> list[Cfg]:
    return [embed_graph(model, g) for g in graphs]


def corpus_features(graphs: Iterable[Cfg]) -> list[np.ndarray]:
    return [n.feature for g in graphs for n in g.nodes]
