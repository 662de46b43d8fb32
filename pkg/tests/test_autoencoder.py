import numpy as np
import pytest

from conftest import bit_feature
from oracles import central_difference, relative_error
from dualex.autoencoder import (AutoencoderModel, _unique_rows, embed, embed_graph, layer_shapes,
                                train_autoencoder)
from dualex.graph import make_graph


def features(n=30, seed=0):
    rng = np.random.default_rng(seed)
    return [(rng.random(438) < 0.05).astype(np.uint8) for _ in range(n)]


def test_layer_shapes():
    assert layer_shapes() == [(438, 256), (256, 128), (128, 64), (64, 128), (128, 256), (256, 438)]


def test_embedding_length_and_purity():
    m = AutoencoderModel.initialize(0)
    x = bit_feature(1, 77, 400)
    a, b = embed(m, x), embed(m, x)
    assert a.shape == (64,) and np.array_equal(a, b)


def test_zero_model_embeds_to_zero():
    assert not embed(AutoencoderModel.zeros(), bit_feature(3, 4)).any()


def test_loss_decreases_and_stays_finite():
    m = train_autoencoder(features(), epochs=60, seed=1)
    h = np.array(m.loss_history)
    assert len(h) == 61 and np.isfinite(h).all()
    assert h[-1] < h[0]


def test_zero_epochs_keeps_initialisation():
    f = features()
    m = train_autoencoder(f, epochs=0, seed=4)
    again = train_autoencoder(f, epochs=0, seed=4)
    assert m.to_bytes() == again.to_bytes()
    assert m.loss_history == again.loss_history and len(m.loss_history) == 1


def test_same_seed_same_weights():
    f = features()
    assert train_autoencoder(f, epochs=5, seed=2).to_bytes() == train_autoencoder(f, epochs=5, seed=2).to_bytes()
    assert train_autoencoder(f, epochs=5, seed=2).to_bytes() != train_autoencoder(f, epochs=5, seed=3).to_bytes()


def test_deduplicated_rows_match_full_batch_loss():
    f = features(10)
    dup = f + f[:4] + f[:1]
    x, w = _unique_rows(dup)
    assert len(x) == 10 and w.sum() == 15
    m = AutoencoderModel.initialize(0)
    full = np.stack(dup).astype(np.float64)
    assert abs(m.loss(x, w) - m.loss(full)) < 1e-12


def test_gradients_match_finite_differences():
    m = AutoencoderModel.initialize(3, bit_rates=np.full(438, 0.05))
    x, w = _unique_rows(features(6))
    _, grads = m._grads(x, w)
    rng = np.random.default_rng(0)
    for i in (0, 2, 5):
        name = f"W{i}"
        idx = [tuple(rng.integers(0, s) for s in m.weights[i].shape) for _ in range(5)]

        def f(vals, i=i, idx=idx):
            mm = m.copy()
            for v, j in zip(vals, idx):
                mm.weights[i][j] = v
            return mm.loss(x, w)

        x0 = np.array([m.weights[i][j] for j in idx])
        numeric = central_difference(f, x0, 1e-6)
        assert relative_error([grads[name][j] for j in idx], numeric) < 1e-5


def test_checkpoint_round_trip(tmp_path):
    m = train_autoencoder(features(), epochs=3, seed=0)
    m.save(tmp_path / "ae.json")
    back = AutoencoderModel.load(tmp_path / "ae.json")
    assert back.to_bytes() == m.to_bytes()
    assert back.loss_history == m.loss_history


def test_embed_graph_attaches_all_nodes():
    m = AutoencoderModel.initialize(0)
    g = make_graph("g", [bit_feature(0), bit_feature(5)], [(0, 1)])
    e = embed_graph(m, g)
    assert e.has_embeddings
    assert np.allclose(e.node("n1").embedding, embed(m, bit_feature(5)))


def test_empty_input_rejected():
    with pytest.raises(ValueError):
        train_autoencoder([])
