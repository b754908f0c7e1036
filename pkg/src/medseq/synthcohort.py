"""Synthetic patient cohorts from a known disease-progression process.

The generator walks a Markov chain (order 1 or 2) over concept codes whose
transition rows put `determinism` mass on a designated successor, with the
remainder decaying geometrically over the following slots. Because real
timelines keep only the first occurrence of each concept, the walk is
restricted to *unvisited* concepts (row renormalised over them), which
keeps the Bayes oracle exactly computable from a deduplicated timeline.

Designated successors are structured so that following them (almost) never
revisits a concept: concepts are assigned slots by a seeded permutation,
order 1 steps one slot forward, and order 2 continues the slot
progression, s(a, b) = slot(b) + (slot(b) - slot(a)). The order-2 rule is
order-sensitive (s(a,b) != s(b,a) whenever a != b), which is what lets
sequence models provably beat any bag-of-concepts predictor.

Every concept is emitted twice in the raw record so the two-mention
confirmation filter passes by construction, and ages rise monotonically.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np

from .timeline import (KIND_CONCEPT, ConceptEvent, PatientRecord, Timeline,
                       Vocab)


class CohortError(ValueError):
    pass


@dataclass
class GeneratorConfig:
    n_concepts: int = 50
    n_patients: int = 1000
    seed: int = 0
    order: int = 2
    determinism: float = 0.9
    age_start_range: tuple[int, int] = (30, 60)
    age_step_range: tuple[int, int] = (0, 2)
    concepts_per_patient: tuple[int, int] = (6, 12)

    def __post_init__(self):
        if self.n_concepts < 5:
            raise CohortError("n_concepts must be >= 5")
        if self.order not in (1, 2):
            raise CohortError("order must be 1 or 2")
        if not (0.0 < self.determinism <= 1.0):
            raise CohortError("determinism must be in (0, 1]")
        if self.determinism <= 1.0 / self.n_concepts:
            raise CohortError("determinism must exceed 1/n_concepts")


class GeneratorModel:
    """Transition structure: slots, designated successors, table rows."""

    def __init__(self, order: int, determinism: float, concepts: list[str],
                 slots: list[int], seed: int = 0):
        self.order = order
        self.determinism = determinism
        self.concepts = list(concepts)
        self.slots = list(slots)                      # concept index -> slot
        self.seed = seed
        self.n = len(concepts)
        self._by_slot = [0] * self.n                  # slot -> concept index
        for idx, s in enumerate(slots):
            self._by_slot[s] = idx
        self.index = {c: i for i, c in enumerate(self.concepts)}

    def designated(self, context: tuple[int, ...]) -> int:
        """Concept index of the designated successor for a context window."""
        if len(context) != self.order:
            raise CohortError(f"context must have length {self.order}")
        if self.order == 1:
            return self._by_slot[(self.slots[context[0]] + 1) % self.n]
        a, b = context
        sa, sb = self.slots[a], self.slots[b]
        return self._by_slot[(2 * sb - sa) % self.n]

    def row(self, context: tuple[int, ...]) -> np.ndarray:
        """Unrestricted transition row: a geometric cascade along the slot cycle.

        The designated successor (cascade head) carries exactly
        `determinism`; each following slot carries d*(1-d)^j with the exact
        remainder on the last one, so rows sum to 1.0 identically. The
        cascade shape makes the restricted conditional self-similar: even
        when the head is already visited, the best next guess still holds
        close to `determinism` mass after renormalisation.

        The cascade marches in the direction of the context's slot gap, so
        swapping an order-2 pair mirrors the whole row: the mass a row
        gives the *other* ordering's head is identical both ways, and an
        orderless mixture of the two rows ties exactly at both heads.
        """
        d = self.determinism
        j = np.arange(self.n)
        masses = d * (1.0 - d) ** j
        masses[-1] = (1.0 - d) ** (self.n - 1)
        head_slot = self.slots[self.designated(context)]
        if self.order == 2:
            gap = (self.slots[context[1]] - self.slots[context[0]]) % self.n
            step = 1 if gap <= self.n // 2 else -1
        else:
            step = 1
        p = np.empty(self.n)
        order = (head_slot + step * j) % self.n     # cascade in slot space
        p[[self._by_slot[s] for s in order]] = masses
        return p

    def restricted_row(self, context: tuple[int, ...], visited) -> np.ndarray:
        """Row restricted to unvisited concepts and renormalised.

        When the whole surviving mass is zero (determinism 1.0 with the
        designated successor already visited) falls back to uniform over
        the unvisited set. This is the process's true conditional.
        """
        p = self.row(context)
        mask = np.ones(self.n, dtype=bool)
        mask[list(visited)] = False
        if not mask.any():
            raise CohortError("no unvisited concepts left")
        p = p * mask
        total = p.sum()
        if total <= 0.0:
            p = mask / mask.sum()
        else:
            p = p / total
        return p

    def transition_table(self) -> dict[tuple[str, ...], np.ndarray]:
        """Full (unrestricted) table keyed by concept-code context."""
        contexts = (itertools.product(range(self.n), repeat=self.order))
        return {tuple(self.concepts[i] for i in ctx): self.row(ctx)
                for ctx in contexts}

    # --- serialization ---

    def to_json(self) -> dict:
        return {"order": self.order, "determinism": self.determinism,
                "concepts": self.concepts, "slots": self.slots, "seed": self.seed}

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "GeneratorModel":
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
        return cls(order=d["order"], determinism=d["determinism"],
                   concepts=d["concepts"], slots=d["slots"], seed=d.get("seed", 0))


def _concept_codes(n: int) -> list[str]:
    return [f"C{i:03d}" for i in range(n)]


def build_generator(config: GeneratorConfig) -> GeneratorModel:
    rng = np.random.default_rng(config.seed)
    slots = rng.permutation(config.n_concepts).tolist()
    return GeneratorModel(order=config.order, determinism=config.determinism,
                          concepts=_concept_codes(config.n_concepts),
                          slots=slots, seed=config.seed)


_INIT_SLOT_GAP = 4   # initial pairs start close together in slot space


def _walk(model: GeneratorModel, length: int, rng: np.random.Generator) -> list[int]:
    """One patient's concept-index chain (no revisits by construction).

    The initial order-2 pair is drawn with a small slot gap so the slot
    progression stays slow: visited concepts then always sit in the far
    tail of later cascade rows, keeping the oracle's empirical P@1 pinned
    to `determinism` instead of drifting up with the renormalisation.
    """
    n = model.n
    length = min(length, n - 1)     # must leave at least one unvisited concept
    first = int(rng.integers(n))
    chain = [first]
    if model.order == 2:
        gap = int(rng.integers(1, _INIT_SLOT_GAP + 1))
        chain.append(model._by_slot[(model.slots[first] + gap) % n])
    while len(chain) < length:
        ctx = tuple(chain[-model.order:])
        p = model.restricted_row(ctx, chain)
        chain.append(int(rng.choice(n, p=p)))
    return chain[:length]


def generate_cohort(config: GeneratorConfig) -> tuple[list[PatientRecord], GeneratorModel]:
    """Deterministic cohort: per-patient streams derive from (seed, index)."""
    model = build_generator(config)
    lo, hi = config.concepts_per_patient
    records = []
    for i in range(config.n_patients):
        rng = np.random.default_rng((config.seed, i))
        length = int(rng.integers(lo, hi + 1))
        chain = _walk(model, length, rng)
        age = int(rng.integers(config.age_start_range[0],
                               config.age_start_range[1] + 1))
        events = []
        for idx in chain:
            code = model.concepts[idx]
            events.append(ConceptEvent(code, age))
            events.append(ConceptEvent(code, age))    # confirmation by construction
            age = min(120, age + int(rng.integers(config.age_step_range[0],
                                                  config.age_step_range[1] + 1)))
        records.append(PatientRecord(f"synth-{i:05d}", events))
    return records, model


# ---------------------------------------------------------------------------
# oracle
# ---------------------------------------------------------------------------

def oracle_next_distribution(model: GeneratorModel,
                             concept_history: list[str]) -> np.ndarray:
    """Exact next-concept conditional given a deduplicated concept history.

    Indexed over model.concepts; requires at least `order` history entries.
    """
    if len(concept_history) < model.order:
        raise CohortError(
            f"history has {len(concept_history)} concepts, need >= {model.order}")
    idxs = [model.index[c] for c in concept_history]
    ctx = tuple(idxs[-model.order:])
    return model.restricted_row(ctx, idxs)


def oracle_distribution(model: GeneratorModel, history: Timeline,
                        vocab: Vocab) -> np.ndarray:
    """Timeline-facing oracle: distribution over the full vocab id space.

    Generator concepts missing from the vocab (possible under frequency
    filtering) lose their mass; the rest is renormalised so the result is
    a proper distribution over the emitted vocabulary.
    """
    codes = [vocab.entry(t.id).value for t in history.tokens
             if t.kind == KIND_CONCEPT]
    over_concepts = oracle_next_distribution(model, codes)
    out = np.zeros(len(vocab))
    for i, code in enumerate(model.concepts):
        entry = vocab.get(KIND_CONCEPT, code)
        if entry is not None:
            out[entry.id] = over_concepts[i]
    total = out.sum()
    if total <= 0.0:
        raise CohortError("no generator concept is present in the vocab")
    return out / total


class OracleScorer:
    """Per-position oracle distributions for a timeline (evaluation adapter).

    Positions with fewer than `order` preceding concepts get a zero row
    (callers must restrict evaluation points to well-defined positions).
    """

    def __init__(self, model: GeneratorModel, vocab: Vocab):
        self.model = model
        self.vocab = vocab
        in_vocab = [vocab.get(KIND_CONCEPT, c) is not None for c in model.concepts]
        self._known = np.array(in_vocab)
        self._vocab_ids = np.array(
            [vocab.id_of(KIND_CONCEPT, c) if ok else 0
             for c, ok in zip(model.concepts, in_vocab)])

    def disorder_distributions_batch(self, sequences) -> list[np.ndarray]:
        return [self.disorder_distributions(seq) for seq in sequences]

    def disorder_distributions(self, token_ids: list[int]) -> np.ndarray:
        V = len(self.vocab)
        out = np.zeros((len(token_ids), V))
        seen: list[int] = []
        for t, tid in enumerate(token_ids):
            entry = self.vocab.entry(tid)
            if entry.kind == KIND_CONCEPT:
                seen.append(self.model.index[entry.value])
            # row t conditions on tokens 0..t (it scores the token at t+1)
            if len(seen) >= self.model.order and len(seen) < self.model.n:
                ctx = tuple(seen[-self.model.order:])
                row = self.model.restricted_row(ctx, seen)
                out[t, self._vocab_ids[self._known]] = row[self._known]
        return out


# ---------------------------------------------------------------------------
# bag-of-concepts ceiling
# ---------------------------------------------------------------------------

def _dedup_chain(record: PatientRecord, model: GeneratorModel) -> list[int]:
    seen: list[int] = []
    for e in record.events:
        idx = model.index[e.concept]
        if idx not in seen:
            seen.append(idx)
    return seen


def boc_ceiling(model: GeneratorModel, test_records: list[PatientRecord]) -> float:
    """Expected P@1 of the best orderless predictor, by enumeration.

    An orderless predictor cannot know which ordering of the final
    `order`-window actually happened, so its belief is the table row
    averaged over every ordering of that window; it answers the argmax
    (exact ties broken by concept code). The expectation averages, over
    every prediction point in the records, the true process conditional's
    mass on that answer. With a fully deterministic order-2 generator the
    two orderings force an even coin flip, so the value tends to 0.5.
    """
    total = 0.0
    points = 0
    for rec in test_records:
        chain = _dedup_chain(rec, model)
        for t in range(model.order, len(chain)):
            visited = chain[:t]
            window = tuple(visited[-model.order:])
            perms = sorted(set(itertools.permutations(window)))
            mix = np.zeros(model.n)
            for p in perms:
                mix += model.row(p)
            mix /= len(perms)
            candidates = np.flatnonzero(mix == np.max(mix))
            guess = min(candidates, key=lambda i: model.concepts[i])
            truth = model.restricted_row(window, visited)
            total += truth[guess]
            points += 1
    if points == 0:
        raise CohortError("no prediction points in test records")
    return total / points
