"""Next-disorder evaluation: P@N and position-conditioned precision H k+.

An evaluation point is every CONCEPT token at index j >= 1 of a test
timeline: the context is tokens 0..j-1, the target is the concept at j.
AGE tokens are context only, never targets, but they do count toward the
position index (the same accounting the 50-token cap uses). Candidate
ranking is over CONCEPT-kind vocabulary entries with ties broken by
ascending token id. H k+ restricts to points with j >= k; H 0+ equals P@1
by construction.

Models plug in through one protocol: ``disorder_distributions_batch``
returning, per input sequence, a (T, V) array whose row t scores the
next-disorder candidates given tokens 0..t. Rows only need a ranking
order, not normalisation, so hinge scores qualify.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .baselines import BocLinear, boc_featurize
from .timeline import KIND_CONCEPT, Timeline, Vocab


class EvalError(ValueError):
    pass


@dataclass(frozen=True)
class EvalPoint:
    patient_id: str
    position: int                   # token index j of the target
    context: tuple[int, ...]        # token ids 0..j-1
    target: int                     # CONCEPT token id
    n_context_concepts: int = 0     # CONCEPT tokens inside the context


def enumerate_eval_points(test_timelines: list[Timeline]) -> list[EvalPoint]:
    """One point per CONCEPT token at index >= 1, in timeline order."""
    points = []
    for tl in test_timelines:
        concepts_seen = 0
        for j, tok in enumerate(tl.tokens):
            if tok.kind == KIND_CONCEPT and j >= 1:
                points.append(EvalPoint(
                    patient_id=tl.patient_id, position=j,
                    context=tuple(t.id for t in tl.tokens[:j]),
                    target=tok.id, n_context_concepts=concepts_seen))
            if tok.kind == KIND_CONCEPT:
                concepts_seen += 1
    return points


def filter_points(points: list[EvalPoint], min_context_concepts: int
                  ) -> list[EvalPoint]:
    """Keep points whose context already contains enough concepts (the
    synthetic oracle needs `order` of them to be defined)."""
    return [p for p in points if p.n_context_concepts >= min_context_concepts]


# ---------------------------------------------------------------------------
# scoring
# ---------------------------------------------------------------------------

class BocScorer:
    """Adapter giving the bag-of-concepts model the shared scorer protocol."""

    def __init__(self, model: BocLinear, vocab: Vocab):
        self.model = model
        self.vocab = vocab

    def disorder_distributions_batch(self, sequences) -> list[np.ndarray]:
        out = []
        for seq in sequences:
            feats = np.stack([boc_featurize(seq[:t + 1], self.vocab)
                              for t in range(len(seq))])
            out.append(self.model.vocab_scores(feats, len(self.vocab)))
        return out


def rank_of_target(row: np.ndarray, target: int) -> int:
    """1-based rank under (descending score, ascending token id)."""
    t = row[target]
    better = int(np.count_nonzero(row > t))
    tied_before = int(np.count_nonzero(row[:target] == t))
    return better + tied_before + 1


def target_ranks(scorer, points: list[EvalPoint],
                 batch_size: int = 64) -> np.ndarray:
    """Rank per point; each patient's sequence is scored once, batched."""
    if not points:
        raise EvalError("empty evaluation set")
    by_patient: dict[str, list[EvalPoint]] = {}
    for p in points:
        by_patient.setdefault(p.patient_id, []).append(p)
    sequences = []
    meta = []
    for pid, plist in by_patient.items():
        longest = max(plist, key=lambda p: p.position)
        sequences.append(list(longest.context) + [longest.target])
        meta.append(plist)
    ranks = np.empty(len(points), dtype=int)
    pos = {id(p): i for i, p in enumerate(points)}
    for lo in range(0, len(sequences), batch_size):
        rows_batch = scorer.disorder_distributions_batch(
            sequences[lo:lo + batch_size])
        for rows, plist in zip(rows_batch, meta[lo:lo + batch_size]):
            for p in plist:
                ranks[pos[id(p)]] = rank_of_target(rows[p.position - 1], p.target)
    return ranks


def precision_at(scorer, points: list[EvalPoint],
                 n_list: tuple[int, ...] = (1, 3, 5),
                 ranks: np.ndarray | None = None) -> dict[int, float]:
    """P@N: fraction of points whose target ranks in the top N."""
    if ranks is None:
        ranks = target_ranks(scorer, points)
    return {n: float((ranks <= n).mean()) for n in n_list}


def precision_by_position(scorer, points: list[EvalPoint],
                          k_list: tuple[int, ...] = (0, 10, 20, 30),
                          n: int = 1, ranks: np.ndarray | None = None
                          ) -> dict[int, tuple[float | None, int]]:
    """H k+: P@n over points with position >= k, with support counts."""
    if ranks is None:
        ranks = target_ranks(scorer, points)
    positions = np.array([p.position for p in points])
    out = {}
    for k in k_list:
        sel = positions >= k
        support = int(sel.sum())
        value = float((ranks[sel] <= n).mean()) if support else None
        out[k] = (value, support)
    return out


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

@dataclass
class ModelResult:
    model: str
    precision: dict[int, float]
    by_position: dict[int, tuple[float | None, int]]
    n_points: int


@dataclass
class EvalReport:
    rows: list[ModelResult] = field(default_factory=list)
    seed: int | None = None
    split_hash: str | None = None
    vocab_hash: str | None = None
    extras: dict = field(default_factory=dict)

    def add_model(self, name: str, scorer, points: list[EvalPoint],
                  n_list=(1, 3, 5), k_list=(0, 10, 20, 30)) -> ModelResult:
        ranks = target_ranks(scorer, points)
        row = ModelResult(model=name,
                          precision=precision_at(scorer, points, n_list, ranks),
                          by_position=precision_by_position(
                              scorer, points, k_list, 1, ranks),
                          n_points=len(points))
        self.rows.append(row)
        return row

    def to_json(self) -> dict:
        return {
            "seed": self.seed,
            "split_hash": self.split_hash,
            "vocab_hash": self.vocab_hash,
            "extras": self.extras,
            "models": [{
                "model": r.model,
                "precision": {f"P@{n}": v for n, v in r.precision.items()},
                "by_position": {f"H{k}+": {"value": v, "support": s}
                                for k, (v, s) in r.by_position.items()},
                "n_points": r.n_points,
            } for r in self.rows],
        }

    def save_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=1, sort_keys=True)
            fh.write("\n")

    def text_table(self) -> str:
        """Aligned plain-text table in the published results layout."""
        n_cols = sorted({n for r in self.rows for n in r.precision})
        k_cols = sorted({k for r in self.rows for k in r.by_position})
        header = (["model"] + [f"P@{n}" for n in n_cols]
                  + [f"H {k}+" for k in k_cols])
        lines = []
        supports = None
        for r in self.rows:
            cells = [r.model]
            cells += [f"{r.precision.get(n, float('nan')):.3f}" for n in n_cols]
            for k in k_cols:
                v, s = r.by_position.get(k, (None, 0))
                cells.append("-" if v is None else f"{v:.3f}")
            lines.append(cells)
            supports = ["support"] + [""] * len(n_cols) + [
                str(r.by_position.get(k, (None, 0))[1]) for k in k_cols]
        if supports:
            lines.append(supports)
        widths = [max(len(row[i]) for row in [header] + lines)
                  for i in range(len(header))]
        fmt = "  ".join(f"{{:<{w}}}" for w in widths)
        out = [fmt.format(*header)]
        out += [fmt.format(*row) for row in lines]
        return "\n".join(out)

    def csv_rows(self) -> list[str]:
        """One row per (model, metric): model,metric,value,support."""
        rows = ["model,metric,value,support"]
        for r in self.rows:
            for n, v in sorted(r.precision.items()):
                rows.append(f"{r.model},P@{n},{v:.6f},{r.n_points}")
            for k, (v, s) in sorted(r.by_position.items()):
                val = "" if v is None else f"{v:.6f}"
                rows.append(f"{r.model},H{k}+,{val},{s}")
        return rows

    def save_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(self.csv_rows()) + "\n")
