"""LSTM and bag-of-concepts baselines: contracts and training behaviour."""

import numpy as np
import pytest

from medseq import numerics as nm
from medseq.baselines import (BaselineError, BocLinear, LstmConfig, LstmLM,
                              boc_featurize, train_boc)
from medseq.timeline import (KIND_AGE, KIND_CONCEPT, KIND_PAD, PAD_VALUE,
                             Vocab, VocabEntry)
from medseq.training import TrainConfig


def small_vocab(n_concepts=6):
    entries = [VocabEntry(str(a), KIND_AGE, a, 0) for a in range(121)]
    entries.append(VocabEntry(PAD_VALUE, KIND_PAD, 121, 0))
    entries += [VocabEntry(f"C{i}", KIND_CONCEPT, 122 + i, 1)
                for i in range(n_concepts)]
    return Vocab(entries)


VOCAB = small_vocab()
V = len(VOCAB)


# ---------------------------------------------------------------------------
# LSTM
# ---------------------------------------------------------------------------

def tiny_lstm(**kw):
    base = dict(vocab_size=V, hidden_size=12, n_layers=1, embed_dim=12,
                max_seq=12)
    base.update(kw)
    return LstmConfig(**base)


def test_lstm_causality_exact():
    m = LstmLM(tiny_lstm(), seed=0)
    rng = np.random.default_rng(1)
    for _ in range(10):
        ids = rng.integers(0, V, size=(1, 7))
        base = m.forward(ids).logits.data.copy()
        j = int(rng.integers(1, 7))
        mutated = ids.copy()
        mutated[0, j] = (mutated[0, j] + 1) % V
        out = m.forward(mutated).logits.data
        assert np.array_equal(out[0, :j], base[0, :j])


def test_lstm_gradient_check_tiny():
    cfg = LstmConfig(vocab_size=9, hidden_size=5, n_layers=1, embed_dim=4,
                     tied_head=False)
    model = LstmLM(cfg, seed=2, dtype=np.float64)
    rng = np.random.default_rng(3)
    ids = rng.integers(0, 9, size=(1, 4))
    targets = rng.integers(0, 9, size=(1, 4))

    def loss():
        res = model.forward(ids)
        logp = nm.log_softmax(res.logits)
        return nm.neg(nm.tmean(nm.take_along_last(logp, targets)))

    err = nm.gradient_check(loss, list(model.params.values()))
    assert err < 1e-4


def test_lstm_zero_weights_constant_bias_logits():
    cfg = tiny_lstm(tied_head=False)
    model = LstmLM(cfg, seed=4)
    for name, t in model.params.items():
        if name != "head_bias":
            t.data[:] = 0.0
    model.params["head_bias"].data[:] = np.arange(V, dtype=np.float32)
    out = model.forward(np.array([[1, 2, 3]])).logits.data
    expect = np.broadcast_to(np.arange(V, dtype=np.float32), (1, 3, V))
    np.testing.assert_allclose(out, expect, atol=1e-7)


def test_lstm_two_layers_and_untied_projection_shapes():
    m2 = LstmLM(tiny_lstm(n_layers=2, hidden_size=10, embed_dim=8), seed=5)
    out = m2.forward(np.array([[0, 1, 2, 3]])).logits.data
    assert out.shape == (1, 4, V)


def test_lstm_distribution_surfaces():
    m = LstmLM(tiny_lstm(), seed=6, vocab=VOCAB)
    dist = m.next_disorder_distribution(np.array([40, 122, 41]),
                                        VOCAB.concept_mask())
    assert abs(dist.sum() - 1.0) < 1e-6
    rows = m.disorder_distributions([40, 122, 123])
    assert rows.shape == (3, V)
    np.testing.assert_allclose(rows.sum(axis=1), 1.0, atol=1e-6)


# ---------------------------------------------------------------------------
# bag-of-concepts features
# ---------------------------------------------------------------------------

def test_boc_feature_definition():
    ctx = [VOCAB.age_id(40), VOCAB.id_of(KIND_CONCEPT, "C1")]
    feat = boc_featurize(ctx, VOCAB)
    concepts = VOCAB.concept_entries()
    assert feat.shape == (len(concepts) + 1,)
    assert feat[:-1].sum() == 1.0
    assert feat[[e.value for e in concepts].index("C1")] == 1.0
    assert feat[-1] == pytest.approx(40 / 120)


def test_boc_feature_order_blind():
    a = [VOCAB.age_id(50), VOCAB.id_of(KIND_CONCEPT, "C1"),
         VOCAB.id_of(KIND_CONCEPT, "C3")]
    b = [VOCAB.age_id(50), VOCAB.id_of(KIND_CONCEPT, "C3"),
         VOCAB.id_of(KIND_CONCEPT, "C1")]
    np.testing.assert_array_equal(boc_featurize(a, VOCAB), boc_featurize(b, VOCAB))


def test_boc_feature_empty_concepts_allzero():
    feat = boc_featurize([VOCAB.age_id(60)], VOCAB)
    assert feat[:-1].sum() == 0.0
    with pytest.raises(BaselineError):
        boc_featurize([], VOCAB)


# ---------------------------------------------------------------------------
# bag-of-concepts training
# ---------------------------------------------------------------------------

def boc_train_config(**kw):
    base = dict(learning_rate=5e-2, weight_decay=1e-4, batch_size=32,
                warmup_steps=0, max_steps=300, seed=0, eval_every=100)
    base.update(kw)
    return TrainConfig(**base)


def test_boc_separable_toy_reaches_full_accuracy():
    rng = np.random.default_rng(7)
    n = 80
    x = np.zeros((n, 3), dtype=np.float32)
    y = rng.integers(0, 2, size=n)
    x[np.arange(n), y] = 1.0
    model = train_boc(x, y, boc_train_config(), class_vocab_ids=[122, 123])
    pred = model.scores(x).argmax(axis=1)
    assert (pred == y).mean() == 1.0


def test_boc_single_class_errors():
    x = np.ones((4, 2), dtype=np.float32)
    y = np.zeros(4, dtype=int)
    with pytest.raises(BaselineError):
        train_boc(x, y, boc_train_config(), class_vocab_ids=[122, 123])


def test_boc_deterministic_for_seed():
    rng = np.random.default_rng(8)
    x = rng.normal(size=(60, 4)).astype(np.float32)
    y = rng.integers(0, 3, size=60)
    a = train_boc(x, y, boc_train_config(max_steps=50), [122, 123, 124], seed=1)
    b = train_boc(x, y, boc_train_config(max_steps=50), [122, 123, 124], seed=1)
    assert np.array_equal(a.params["w"].data, b.params["w"].data)


def test_boc_vocab_scores_scatter():
    model = BocLinear.__new__(BocLinear)
    from medseq.baselines import BocConfig
    model.config = BocConfig(3, [122, 124])
    model.params = {"w": nm.tensor(np.eye(3, 2, dtype=np.float32)),
                    "b": nm.tensor(np.zeros(2, dtype=np.float32))}
    rows = model.vocab_scores(np.array([[1.0, 0.0, 0.5]], dtype=np.float32),
                              vocab_size=126)
    assert rows.shape == (1, 126)
    assert np.isfinite(rows[0, [122, 124]]).all()
    assert np.isneginf(rows[0, 0]) and np.isneginf(rows[0, 123])
