"""MCQ ranking and gradient saliency contracts."""

import json

import numpy as np
import pytest

from medseq import numerics as nm
from medseq import probe
from medseq.model import ModelConfig, TransformerLM
from medseq.timeline import (KIND_AGE, KIND_CONCEPT, KIND_PAD, PAD_VALUE,
                             Token, Vocab, VocabEntry)


def small_vocab(n_concepts=8):
    entries = [VocabEntry(str(a), KIND_AGE, a, 0) for a in range(121)]
    entries.append(VocabEntry(PAD_VALUE, KIND_PAD, 121, 0))
    entries += [VocabEntry(f"C{i}", KIND_CONCEPT, 122 + i, 1)
                for i in range(n_concepts)]
    return Vocab(entries)


VOCAB = small_vocab()
V = len(VOCAB)


def ctx(*specs):
    out = []
    for s in specs:
        if isinstance(s, int):
            out.append(Token(KIND_AGE, VOCAB.age_id(s)))
        else:
            out.append(Token(KIND_CONCEPT, VOCAB.id_of(KIND_CONCEPT, s)))
    return out


class FixedDistModel:
    """next_disorder_distribution returns a canned vector."""

    def __init__(self, dist):
        self.dist = np.asarray(dist, dtype=float)

    def next_disorder_distribution(self, ids, mask):
        return self.dist


def dist_with(**code_probs):
    d = np.zeros(V)
    for code, p in code_probs.items():
        d[VOCAB.id_of(KIND_CONCEPT, code)] = p
    return d


# ---------------------------------------------------------------------------
# mcq_rank
# ---------------------------------------------------------------------------

def test_mcq_normalisation_arithmetic():
    model = FixedDistModel(dist_with(C0=0.03, C1=0.01, C2=0.9))
    case = probe.McqCase(history=ctx(40, "C3"), options=["C0", "C1"])
    out = probe.mcq_rank(model, case, VOCAB)
    assert out == [("C0", pytest.approx(0.75)), ("C1", pytest.approx(0.25))]


def test_mcq_single_option_probability_one():
    model = FixedDistModel(dist_with(C0=0.2))
    case = probe.McqCase(history=ctx(40, "C1"), options=["C0"])
    assert probe.mcq_rank(model, case, VOCAB) == [("C0", 1.0)]


def test_mcq_option_validation():
    model = FixedDistModel(dist_with(C0=0.2))
    with pytest.raises(probe.ProbeError, match="not in vocab"):
        probe.mcq_rank(model, probe.McqCase(ctx(40, "C0"), ["NOPE", "C0"]), VOCAB)
    with pytest.raises(probe.ProbeError, match="distinct"):
        probe.mcq_rank(model, probe.McqCase(ctx(40, "C0"), ["C1", "C1"]), VOCAB)
    with pytest.raises(probe.ProbeError, match="history"):
        probe.mcq_rank(model, probe.McqCase([], ["C1", "C2"]), VOCAB)


def test_mcq_invariant_to_option_order_and_scale():
    base = dist_with(C0=0.06, C1=0.02, C2=0.12)
    case_a = probe.McqCase(ctx(40, "C3"), ["C0", "C1", "C2"])
    case_b = probe.McqCase(ctx(40, "C3"), ["C2", "C0", "C1"])
    out_a = dict(probe.mcq_rank(FixedDistModel(base), case_a, VOCAB))
    out_b = dict(probe.mcq_rank(FixedDistModel(base), case_b, VOCAB))
    assert out_a == pytest.approx(out_b)
    # masking unrelated vocabulary rescales raw probabilities uniformly:
    # normalised option ratios must not move
    rescaled = base * 7.3
    out_c = dict(probe.mcq_rank(FixedDistModel(rescaled), case_a, VOCAB))
    assert out_a == pytest.approx(out_c)
    assert sum(out_a.values()) == pytest.approx(1.0, abs=1e-6)


def test_mcq_ties_broken_by_token_id():
    model = FixedDistModel(dist_with(C4=0.1, C2=0.1, C7=0.1))
    out = probe.mcq_rank(model, probe.McqCase(ctx(40, "C0"), ["C7", "C2", "C4"]),
                         VOCAB)
    assert [c for c, _ in out] == ["C2", "C4", "C7"]


def test_mcq_on_real_model_sums_to_one():
    model = TransformerLM(ModelConfig(vocab_size=V, n_layers=1, n_heads=2,
                                      d_model=16, max_seq=10), seed=0,
                          vocab=VOCAB)
    out = probe.mcq_rank(model, probe.McqCase(ctx(40, "C0", 41), ["C1", "C2", "C3"]),
                         VOCAB)
    assert sum(p for _, p in out) == pytest.approx(1.0, abs=1e-6)
    probs = [p for _, p in out]
    assert probs == sorted(probs, reverse=True)


# ---------------------------------------------------------------------------
# saliency
# ---------------------------------------------------------------------------

def tiny_model(seed=1):
    return TransformerLM(ModelConfig(vocab_size=V, n_layers=2, n_heads=2,
                                     d_model=16, max_seq=12), seed=seed,
                         vocab=VOCAB)


def test_saliency_single_token_weight_one():
    out = probe.saliency(tiny_model(), ctx(40), VOCAB, target="C0")
    np.testing.assert_allclose(out.weights, [1.0])


def test_saliency_weights_contract():
    model = tiny_model()
    context = ctx(40, "C0", 41, "C1", "C2")
    out = probe.saliency(model, context, VOCAB)
    assert len(out.weights) == len(context)
    assert (out.weights >= 0).all()
    assert out.weights.sum() == pytest.approx(1.0, abs=1e-6)
    assert out.tokens == context
    assert VOCAB.entry(out.target).kind == KIND_CONCEPT


class LastTokenOnlyModel:
    """Logits depend only on the final position's embedding: earlier tokens
    must get exactly zero saliency."""

    def __init__(self, seed=0):
        rng = np.random.default_rng(seed)
        self.emb = nm.parameter(rng, (V, 8), std=0.5)
        self.w = nm.parameter(rng, (8, V), std=0.5)

    def forward(self, ids):
        emb = nm.gather_rows(self.emb, np.asarray(ids))
        logits = nm.matmul(emb, self.w)    # positionwise map, no mixing
        from dataclasses import dataclass

        @dataclass
        class R:
            logits: object
            token_embedding: object
        return R(logits=logits, token_embedding=emb)

    def next_disorder_distribution(self, ids, mask):
        with nm.no_grad():
            res = self.forward(np.asarray(ids).reshape(1, -1))
        z = res.logits.data[0, -1]
        z = np.where(mask, z, -np.inf)
        e = np.exp(z - z[mask].max())
        e[~mask] = 0.0
        return e / e.sum()


def test_saliency_zero_gradient_token_gets_zero_weight():
    model = LastTokenOnlyModel()
    context = ctx(40, "C0", "C1", "C2")
    out = probe.saliency(model, context, VOCAB, target="C3")
    np.testing.assert_allclose(out.weights[:-1], 0.0, atol=0)
    assert out.weights[-1] == pytest.approx(1.0)


def test_saliency_target_must_be_concept():
    with pytest.raises(probe.ProbeError, match="concept"):
        probe.saliency(tiny_model(), ctx(40, "C0"), VOCAB,
                       target=VOCAB.age_id(40))


def test_saliency_grad_x_input_variant():
    out = probe.saliency(tiny_model(), ctx(40, "C0", "C1"), VOCAB,
                         method="grad_x_input")
    assert out.weights.sum() == pytest.approx(1.0, abs=1e-6)
    with pytest.raises(probe.ProbeError):
        probe.saliency(tiny_model(), ctx(40, "C0"), VOCAB, method="nope")


def test_saliency_perturbation_cross_check():
    """Perturbing the heaviest token's embedding moves the target
    log-probability more than perturbing the lightest token's."""
    model = tiny_model(seed=3)
    context = ctx(40, "C0", 43, "C1", "C4", 44, "C2")
    out = probe.saliency(model, context, VOCAB)
    hi = int(np.argmax(out.weights))
    lo = int(np.argmin(out.weights))
    ids = np.array([t.id for t in context])
    base_logp = out.target_log_prob

    def mean_abs_shift(pos):
        emb = model.params["tok_emb"]
        shifts = []
        rng = np.random.default_rng(7)
        for _ in range(10):
            direction = rng.normal(size=emb.data.shape[1]).astype(np.float32)
            direction *= 1e-2 / np.linalg.norm(direction)
            keep = emb.data[ids[pos]].copy()
            emb.data[ids[pos]] += direction
            dist = model.next_disorder_distribution(ids, VOCAB.concept_mask())
            emb.data[ids[pos]] = keep
            shifts.append(abs(np.log(dist[out.target]) - base_logp))
        return np.mean(shifts)

    assert mean_abs_shift(hi) > mean_abs_shift(lo)


# ---------------------------------------------------------------------------
# files
# ---------------------------------------------------------------------------

def test_mcq_cases_file_roundtrip(tmp_path):
    path = tmp_path / "cases.jsonl"
    rows = [
        {"history": [{"kind": "AGE", "value": "40"},
                     {"kind": "CONCEPT", "value": "C0"}],
         "options": ["C1", "C2"], "label": "C1"},
        {"history": [{"kind": "AGE", "value": "50"}],
         "options": ["C3", "C4", "C5"]},
    ]
    path.write_text("\n".join(json.dumps(r) for r in rows) + "\n")
    cases = probe.load_mcq_cases(path, VOCAB)
    assert len(cases) == 2
    assert cases[0].label == "C1"
    assert cases[0].options == ["C1", "C2"]
    assert cases[1].label is None
    assert [t.kind for t in cases[0].history] == [KIND_AGE, KIND_CONCEPT]


def test_saliency_json_shape():
    out = probe.saliency(tiny_model(), ctx(40, "C0", "C1"), VOCAB)
    d = out.to_json(VOCAB)
    assert set(d) == {"tokens", "weights", "target", "target_log_prob"}
    assert len(d["tokens"]) == len(d["weights"]) == 3
