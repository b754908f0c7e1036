"""Evaluation points, P@N, H k+, report shape, brute-force agreement."""

import numpy as np
import pytest

from medseq import evalmetrics as em
from medseq import synthcohort as sc
from medseq import timeline as tl
from medseq.timeline import (KIND_AGE, KIND_CONCEPT, KIND_PAD, PAD_VALUE,
                             Timeline, Token, Vocab, VocabEntry)


def small_vocab(n_concepts=10):
    entries = [VocabEntry(str(a), KIND_AGE, a, 0) for a in range(121)]
    entries.append(VocabEntry(PAD_VALUE, KIND_PAD, 121, 0))
    entries += [VocabEntry(f"C{i}", KIND_CONCEPT, 122 + i, 1)
                for i in range(n_concepts)]
    return Vocab(entries)


VOCAB = small_vocab()
V = len(VOCAB)


def T(kind, value):
    if kind == KIND_AGE:
        return Token(KIND_AGE, VOCAB.age_id(value))
    return Token(KIND_CONCEPT, VOCAB.id_of(KIND_CONCEPT, value))


# ---------------------------------------------------------------------------
# enumeration
# ---------------------------------------------------------------------------

def test_enumeration_rule():
    timeline = Timeline("p", [T(KIND_AGE, 40), T(KIND_CONCEPT, "C1"),
                              T(KIND_CONCEPT, "C2"), T(KIND_AGE, 41),
                              T(KIND_CONCEPT, "C3")])
    points = em.enumerate_eval_points([timeline])
    assert [(p.position, VOCAB.entry(p.target).value) for p in points] == [
        (1, "C1"), (2, "C2"), (4, "C3")]
    assert [p.n_context_concepts for p in points] == [0, 1, 2]
    assert points[2].context == tuple(t.id for t in timeline.tokens[:4])


def test_enumeration_short_and_age_only():
    one = Timeline("a", [T(KIND_AGE, 40), T(KIND_CONCEPT, "C1")])
    ages = Timeline("b", [T(KIND_AGE, 40), T(KIND_AGE, 41)])
    assert len(em.enumerate_eval_points([one])) == 1
    assert em.enumerate_eval_points([ages]) == []


# ---------------------------------------------------------------------------
# rank arithmetic with a stub scorer
# ---------------------------------------------------------------------------

class StubScorer:
    """Deterministic pseudo-random rows derived from the sequence content."""

    def __init__(self, vocab_size, mask):
        self.vocab_size = vocab_size
        self.mask = mask

    def disorder_distributions_batch(self, sequences):
        # row t must depend only on tokens 0..t (causal, like real scorers)
        out = []
        for seq in sequences:
            rows = []
            for t in range(len(seq)):
                rng = np.random.default_rng([t] + list(seq[:t + 1]))
                row = np.where(self.mask, rng.random(self.vocab_size), 0.0)
                rows.append(row / row.sum())
            out.append(np.stack(rows))
        return out


def fixed_rank_scorer(rank_by_patient):
    """Target of patient p lands at exactly rank_by_patient[p]."""
    class Fixed:
        def disorder_distributions_batch(self, sequences):
            out = []
            for seq in sequences:
                rows = np.zeros((len(seq), V))
                rows[:, 122:] = np.linspace(0.5, 0.1, V - 122)  # desc by id
                out.append(rows)
            return out
    return Fixed()


def test_precision_forced_arithmetic():
    # two patients, one point each; ranks 1 and 4 by construction
    tls = [Timeline("a", [T(KIND_AGE, 40), T(KIND_CONCEPT, "C0")]),
           Timeline("b", [T(KIND_AGE, 41), T(KIND_CONCEPT, "C3")])]
    points = em.enumerate_eval_points(tls)
    scorer = fixed_rank_scorer(None)
    p = em.precision_at(scorer, points)
    assert p == {1: 0.5, 3: 0.5, 5: 1.0}


def test_rank_tie_broken_by_ascending_id():
    row = np.zeros(V)
    row[122:] = 0.25
    assert em.rank_of_target(row, 122) == 1
    assert em.rank_of_target(row, 125) == 4


def test_empty_eval_set_errors():
    with pytest.raises(em.EvalError):
        em.precision_at(StubScorer(V, VOCAB.concept_mask()), [])


def test_h_zero_equals_p1_and_bucket_rules():
    rng = np.random.default_rng(0)
    tls = []
    for i in range(30):
        toks = [T(KIND_AGE, 30 + i % 40)]
        for j in rng.integers(0, 10, size=rng.integers(4, 9)):
            toks.append(Token(KIND_CONCEPT, int(122 + j)))
        tls.append(Timeline(f"p{i}", toks))
    points = em.enumerate_eval_points(tls)
    scorer = StubScorer(V, VOCAB.concept_mask())
    ranks = em.target_ranks(scorer, points)
    p = em.precision_at(scorer, points, ranks=ranks)
    h = em.precision_by_position(scorer, points, ranks=ranks)
    assert h[0][0] == pytest.approx(p[1])
    assert h[0][1] == len(points)
    assert p[1] <= p[3] <= p[5]
    supports = [h[k][1] for k in (0, 10, 20, 30)]
    assert supports == sorted(supports, reverse=True)


def test_all_points_below_k_gives_empty_bucket():
    tls = [Timeline("a", [T(KIND_AGE, 40), T(KIND_CONCEPT, "C0"),
                          T(KIND_CONCEPT, "C1")])]
    points = em.enumerate_eval_points(tls)
    h = em.precision_by_position(StubScorer(V, VOCAB.concept_mask()), points)
    assert h[10] == (None, 0)


def test_hand_enumerated_bucket_fixture():
    """100 points with hand-assigned ranks and positions; bucket arithmetic."""
    rng = np.random.default_rng(1)
    positions = rng.integers(1, 40, size=100)
    ranks = rng.integers(1, 8, size=100)
    points = [EvalDummy(pos) for pos in positions]
    out = {}
    for k in (0, 10, 20, 30):
        sel = positions >= k
        out[k] = ((ranks[sel] <= 1).mean() if sel.any() else None, int(sel.sum()))
    got = em.precision_by_position(None, points, ranks=ranks)
    for k in out:
        if out[k][0] is None:
            assert got[k][0] is None
        else:
            assert got[k][0] == pytest.approx(out[k][0])
        assert got[k][1] == out[k][1]


class EvalDummy:
    def __init__(self, position):
        self.position = position


# ---------------------------------------------------------------------------
# brute-force re-implementation agreement
# ---------------------------------------------------------------------------

def brute_force_metrics(scorer, points, n_list=(1, 3, 5), k_list=(0, 10, 20, 30)):
    """Independent loop: re-rank the full distribution per point by sorting."""
    hits = {n: 0 for n in n_list}
    bucket_hits = {k: 0 for k in k_list}
    bucket_n = {k: 0 for k in k_list}
    for p in points:
        seq = list(p.context) + [p.target]
        rows = scorer.disorder_distributions_batch([seq])[0]
        row = rows[p.position - 1]
        order = sorted(range(len(row)), key=lambda i: (-row[i], i))
        for n in n_list:
            if p.target in order[:n]:
                hits[n] += 1
        top1 = order[0] == p.target
        for k in k_list:
            if p.position >= k:
                bucket_n[k] += 1
                bucket_hits[k] += int(top1)
    pn = {n: hits[n] / len(points) for n in n_list}
    hk = {k: ((bucket_hits[k] / bucket_n[k]) if bucket_n[k] else None,
              bucket_n[k]) for k in k_list}
    return pn, hk


def test_agrees_exactly_with_brute_force():
    rng = np.random.default_rng(2)
    tls = []
    for i in range(40):
        toks = [T(KIND_AGE, int(rng.integers(20, 80)))]
        for j in rng.integers(0, 10, size=rng.integers(3, 12)):
            toks.append(Token(KIND_CONCEPT, int(122 + j)))
            if rng.random() < 0.3:
                toks.append(Token(KIND_AGE, int(rng.integers(20, 80))))
        tls.append(Timeline(f"p{i}", toks))
    points = em.enumerate_eval_points(tls)
    scorer = StubScorer(V, VOCAB.concept_mask())
    ranks = em.target_ranks(scorer, points)
    pn = em.precision_at(scorer, points, ranks=ranks)
    hk = em.precision_by_position(scorer, points, ranks=ranks)
    bf_pn, bf_hk = brute_force_metrics(scorer, points)
    assert pn == bf_pn
    assert hk == bf_hk


def test_disjoint_band_supports_sum_to_total():
    rng = np.random.default_rng(3)
    tls = []
    for i in range(20):
        toks = [T(KIND_AGE, 50)]
        for j in rng.integers(0, 10, size=8):
            toks.append(Token(KIND_CONCEPT, int(122 + j)))
        tls.append(Timeline(f"p{i}", toks))
    points = em.enumerate_eval_points(tls)
    positions = np.array([p.position for p in points])
    bands = [(0, 10), (10, 20), (20, 30), (30, 10 ** 9)]
    total = sum(int(((positions >= lo) & (positions < hi)).sum())
                for lo, hi in bands)
    assert total == len(points)


# ---------------------------------------------------------------------------
# oracle-backed precision
# ---------------------------------------------------------------------------

def test_oracle_scorer_precision_matches_determinism():
    cfg = sc.GeneratorConfig(n_concepts=50, n_patients=400, seed=12, order=2,
                             determinism=0.8)
    records, model = sc.generate_cohort(cfg)
    filtered = [tl.filter_events(r) for r in records]
    vocab = tl.build_vocab(filtered, min_frequency=1)
    tls = [t for t in (tl.build_timeline(r, vocab) for r in filtered) if t]
    points = em.filter_points(em.enumerate_eval_points(tls), model.order)
    scorer = sc.OracleScorer(model, vocab)
    p = em.precision_at(scorer, points)
    assert p[1] == pytest.approx(0.8, abs=0.02)
    assert p[1] <= p[3] <= p[5]


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

def test_report_json_text_csv(tmp_path):
    tls = [Timeline("a", [T(KIND_AGE, 40), T(KIND_CONCEPT, "C0"),
                          T(KIND_CONCEPT, "C3")])]
    points = em.enumerate_eval_points(tls)
    report = em.EvalReport(seed=1, split_hash="s" * 8, vocab_hash="v" * 8)
    report.add_model("stub", StubScorer(V, VOCAB.concept_mask()), points)
    d = report.to_json()
    assert d["models"][0]["model"] == "stub"
    assert "P@1" in d["models"][0]["precision"]
    table = report.text_table()
    assert "P@1" in table and "H 0+" in table and "support" in table
    report.save_json(tmp_path / "r.json")
    report.save_csv(tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "model,metric,value,support"
    assert any(line.startswith("stub,P@1,") for line in lines)


def test_report_deterministic():
    rng = np.random.default_rng(4)
    tls = []
    for i in range(10):
        toks = [T(KIND_AGE, 44)]
        for j in rng.integers(0, 10, size=6):
            toks.append(Token(KIND_CONCEPT, int(122 + j)))
        tls.append(Timeline(f"p{i}", toks))
    points = em.enumerate_eval_points(tls)

    def run():
        r = em.EvalReport(seed=0, split_hash="x", vocab_hash="y")
        r.add_model("stub", StubScorer(V, VOCAB.concept_mask()), points)
        import json
        return json.dumps(r.to_json(), sort_keys=True)

    assert run() == run()
