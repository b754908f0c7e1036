"""Patient event streams -> model-ready token timelines.

The pipeline: keep only events that concern the patient and are not
negated, confirm each concept by requiring at least two mentions, keep the
first occurrence of each surviving concept, interleave age tokens whenever
the age changes, cap the sequence length, and drop patients with too few
tokens. The vocabulary assigns dense ids (ages 0..120 first, then a pad
slot, then concepts ordered by descending patient frequency); cohort
splits are seeded shuffles with fixed rounding.
"""

from __future__ import annotations

import hashlib
import json
import math
import random
from dataclasses import dataclass, field

AGE_MIN = 0
AGE_MAX = 120
PAD_VALUE = "<pad>"

KIND_AGE = "AGE"
KIND_CONCEPT = "CONCEPT"
KIND_PAD = "PAD"


class TimelineError(ValueError):
    pass


@dataclass(frozen=True)
class ConceptEvent:
    concept: str
    age: int
    negated: bool = False
    subject_is_patient: bool = True


@dataclass
class PatientRecord:
    patient_id: str
    events: list[ConceptEvent] = field(default_factory=list)


@dataclass(frozen=True)
class Token:
    kind: str   # KIND_AGE | KIND_CONCEPT | KIND_PAD
    id: int


@dataclass
class Timeline:
    patient_id: str
    tokens: list[Token]

    def token_ids(self) -> list[int]:
        return [t.id for t in self.tokens]


@dataclass(frozen=True)
class VocabEntry:
    value: str
    kind: str
    id: int
    frequency: int


class Vocab:
    """Dense bidirectional (kind, value) <-> id map with frequencies."""

    def __init__(self, entries: list[VocabEntry]):
        ids = [e.id for e in entries]
        if sorted(ids) != list(range(len(entries))):
            raise TimelineError("vocab ids must be dense 0..V-1 without repeats")
        self.entries = sorted(entries, key=lambda e: e.id)
        self._by_key = {(e.kind, e.value): e for e in self.entries}
        if len(self._by_key) != len(self.entries):
            raise TimelineError("duplicate (kind, value) in vocab")

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def size(self) -> int:
        return len(self.entries)

    def entry(self, token_id: int) -> VocabEntry:
        return self.entries[token_id]

    def get(self, kind: str, value: str) -> VocabEntry | None:
        return self._by_key.get((kind, value))

    def id_of(self, kind: str, value: str) -> int:
        e = self._by_key.get((kind, value))
        if e is None:
            raise TimelineError(f"unknown vocab entry {kind}:{value!r}")
        return e.id

    def age_id(self, age: int) -> int:
        if not (AGE_MIN <= age <= AGE_MAX):
            raise TimelineError(f"age {age} outside [{AGE_MIN}, {AGE_MAX}]")
        return self.id_of(KIND_AGE, str(age))

    @property
    def pad_id(self) -> int:
        return self.id_of(KIND_PAD, PAD_VALUE)

    def has_concept(self, code: str) -> bool:
        return (KIND_CONCEPT, code) in self._by_key

    def concept_entries(self) -> list[VocabEntry]:
        return [e for e in self.entries if e.kind == KIND_CONCEPT]

    def concept_mask(self):
        import numpy as np
        mask = np.zeros(len(self.entries), dtype=bool)
        for e in self.entries:
            if e.kind == KIND_CONCEPT:
                mask[e.id] = True
        return mask

    # --- serialization: tab-separated value, kind, id, frequency ---

    def to_tsv(self) -> str:
        lines = [f"{e.value}\t{e.kind}\t{e.id}\t{e.frequency}" for e in self.entries]
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_tsv())

    @classmethod
    def load(cls, path) -> "Vocab":
        entries = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.rstrip("\n")
                if not line:
                    continue
                value, kind, tid, freq = line.split("\t")
                entries.append(VocabEntry(value, kind, int(tid), int(freq)))
        return cls(entries)

    def content_hash(self) -> str:
        return hashlib.sha256(self.to_tsv().encode("utf-8")).hexdigest()


@dataclass
class CohortSplit:
    seed: int
    train: list[str]
    validation: list[str]
    test: list[str]

    def to_json(self) -> str:
        return json.dumps({"seed": self.seed, "train": self.train,
                           "validation": self.validation, "test": self.test},
                          indent=2)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json() + "\n")

    @classmethod
    def load(cls, path) -> "CohortSplit":
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
        return cls(seed=d["seed"], train=d["train"],
                   validation=d["validation"], test=d["test"])

    def content_hash(self) -> str:
        return hashlib.sha256(self.to_json().encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# event filtering and timeline construction
# ---------------------------------------------------------------------------

def filter_events(record: PatientRecord) -> PatientRecord:
    """Keep exactly the events about the patient that are not negated."""
    kept = [e for e in record.events if e.subject_is_patient and not e.negated]
    return PatientRecord(record.patient_id, kept)


def _confirmed_concepts(events: list[ConceptEvent], min_confirmations: int) -> set[str]:
    counts: dict[str, int] = {}
    for e in events:
        counts[e.concept] = counts.get(e.concept, 0) + 1
    return {c for c, n in counts.items() if n >= min_confirmations}


def build_timeline(record: PatientRecord, vocab: Vocab,
                   min_confirmations: int = 2, max_tokens: int = 50,
                   min_tokens: int = 5) -> Timeline | None:
    """Token timeline for one (already filtered) record, or None to skip.

    Confirmation counts run over the full record (every mention counts);
    surviving concepts are placed at their first occurrence; an AGE token
    precedes a concept iff the age differs from the last emitted one (and
    always precedes the first concept); the first `max_tokens` tokens are
    kept; fewer than `min_tokens` tokens after truncation means skip.
    """
    for e in record.events:
        if not (AGE_MIN <= e.age <= AGE_MAX):
            raise TimelineError(
                f"patient {record.patient_id}: event {e.concept!r} has age "
                f"{e.age} outside [{AGE_MIN}, {AGE_MAX}]")
    confirmed = _confirmed_concepts(record.events, min_confirmations)
    tokens: list[Token] = []
    last_age: int | None = None
    seen: set[str] = set()
    for e in record.events:
        if e.concept in seen or e.concept not in confirmed:
            continue
        if not vocab.has_concept(e.concept):
            continue
        seen.add(e.concept)
        if last_age is None or e.age != last_age:
            tokens.append(Token(KIND_AGE, vocab.age_id(e.age)))
            last_age = e.age
        tokens.append(Token(KIND_CONCEPT, vocab.id_of(KIND_CONCEPT, e.concept)))
    tokens = tokens[:max_tokens]
    if len(tokens) < min_tokens:
        return None
    return Timeline(record.patient_id, tokens)


def build_vocab(records: list[PatientRecord], min_frequency: int,
                min_confirmations: int = 2) -> Vocab:
    """Vocabulary over (already filtered) records.

    A concept's frequency is the number of distinct patients whose
    confirmed concept set contains it; concepts under `min_frequency` are
    dropped. Ids: ages 0..120 get ids 0..120, the pad slot gets 121, and
    concepts follow ordered by (descending frequency, then code).
    """
    if not records:
        raise TimelineError("cannot build a vocabulary from an empty corpus")
    freq: dict[str, int] = {}
    for rec in records:
        for c in _confirmed_concepts(rec.events, min_confirmations):
            freq[c] = freq.get(c, 0) + 1
    entries = [VocabEntry(str(age), KIND_AGE, age, 0)
               for age in range(AGE_MIN, AGE_MAX + 1)]
    entries.append(VocabEntry(PAD_VALUE, KIND_PAD, AGE_MAX + 1, 0))
    kept = sorted((c for c, n in freq.items() if n >= min_frequency),
                  key=lambda c: (-freq[c], c))
    base = AGE_MAX + 2
    entries.extend(VocabEntry(c, KIND_CONCEPT, base + i, freq[c])
                   for i, c in enumerate(kept))
    return Vocab(entries)


def split_cohort(patient_ids: list[str], seed: int) -> CohortSplit:
    """Seeded shuffle, then 80/20 test split, then 90/10 validation split."""
    n = len(patient_ids)
    if n < 3:
        raise TimelineError(f"need at least 3 patients to split, got {n}")
    ids = list(patient_ids)
    random.Random(seed).shuffle(ids)
    n_test = math.floor(0.2 * n + 0.5)           # round half up
    n_val = math.floor(0.1 * (n - n_test) + 0.5)
    test = sorted(ids[:n_test])
    validation = sorted(ids[n_test:n_test + n_val])
    train = sorted(ids[n_test + n_val:])
    return CohortSplit(seed=seed, train=train, validation=validation, test=test)


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------

def record_to_json(record: PatientRecord) -> dict:
    return {"patient_id": record.patient_id,
            "events": [{"concept": e.concept, "age": e.age, "negated": e.negated,
                        "subject_is_patient": e.subject_is_patient}
                       for e in record.events]}


def record_from_json(d: dict) -> PatientRecord:
    events = [ConceptEvent(concept=e["concept"], age=int(e["age"]),
                           negated=bool(e["negated"]),
                           subject_is_patient=bool(e["subject_is_patient"]))
              for e in d["events"]]
    return PatientRecord(str(d["patient_id"]), events)


def save_records(records: list[PatientRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(record_to_json(rec), sort_keys=True) + "\n")


def load_records(path) -> list[PatientRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(record_from_json(json.loads(line)))
    return records


def timeline_to_json(tl: Timeline, vocab: Vocab) -> dict:
    return {"patient_id": tl.patient_id,
            "tokens": [{"kind": t.kind, "value": vocab.entry(t.id).value}
                       for t in tl.tokens]}


def timeline_from_json(d: dict, vocab: Vocab) -> Timeline:
    tokens = [Token(t["kind"], vocab.id_of(t["kind"], str(t["value"])))
              for t in d["tokens"]]
    return Timeline(str(d["patient_id"]), tokens)


def save_timelines(timelines: list[Timeline], vocab: Vocab, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for tl in timelines:
            fh.write(json.dumps(timeline_to_json(tl, vocab), sort_keys=True) + "\n")


def load_timelines(path, vocab: Vocab) -> list[Timeline]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(timeline_from_json(json.loads(line), vocab))
    return out
