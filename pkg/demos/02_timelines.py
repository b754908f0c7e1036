"""From annotated event streams to model-ready token timelines.

Shows each preparation rule acting on a small hand-written patient record:
meta-annotation filtering, two-mention confirmation, first-occurrence
placement, age-change tokens, and the cohort split.
"""

from medseq import timeline as tl

record = tl.PatientRecord("patient-007", [
    tl.ConceptEvent("C_hypertension", 52),
    tl.ConceptEvent("C_hypertension", 52),            # confirmed (2 mentions)
    tl.ConceptEvent("C_fracture", 52, subject_is_patient=False),  # family, drop
    tl.ConceptEvent("C_diabetes", 53, negated=True),  # negated mention: ignored
    tl.ConceptEvent("C_diabetes", 53),
    tl.ConceptEvent("C_diabetes", 54),                # confirmed at age 53
    tl.ConceptEvent("C_migraine", 54),                # single mention: dropped
    tl.ConceptEvent("C_ckd", 55),
    tl.ConceptEvent("C_ckd", 55),
])

print("raw events:")
for e in record.events:
    flags = []
    if e.negated:
        flags.append("negated")
    if not e.subject_is_patient:
        flags.append("not the patient")
    print(f"  age {e.age}  {e.concept:<16} {'(' + ', '.join(flags) + ')' if flags else ''}")

filtered = tl.filter_events(record)
print(f"\nafter meta-annotation filter: {len(filtered.events)} events remain")

# a corpus of identical twins so every concept clears the frequency filter
corpus = [filtered] + [tl.PatientRecord(f"p{i}", filtered.events) for i in range(4)]
vocab = tl.build_vocab(corpus, min_frequency=2)
print(f"vocab: {len(vocab)} entries "
      f"({sum(e.kind == tl.KIND_CONCEPT for e in vocab.entries)} concepts, "
      f"121 ages, 1 pad)")

timeline = tl.build_timeline(filtered, vocab, min_tokens=2)
print("\ntimeline (age tokens appear only when the age changes):")
print("  " + " -> ".join(
    f"[{vocab.entry(t.id).value}]" if t.kind == tl.KIND_AGE
    else vocab.entry(t.id).value for t in timeline.tokens))

split = tl.split_cohort([f"patient-{i:03d}" for i in range(10)], seed=42)
print(f"\n10-patient split at seed 42: train={len(split.train)} "
      f"validation={len(split.validation)} test={len(split.test)}")
