"""Qualitative probing: multiple-choice differentials and gradient saliency.

``mcq_rank`` renormalises the model's next-disorder probabilities over a
fixed option set, the workflow a clinician uses to pose a differential.
``saliency`` attributes a forecast to the input tokens: the gradient of
the predicted (or requested) disorder's log-probability is taken with
respect to each input token's embedding vector, and per-token L2 norms are
normalised to weights summing to 1. A gradient-times-input variant is
available behind the `method` flag. Age tokens participate like any other
input token.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nm
from .timeline import KIND_CONCEPT, Timeline, Token, Vocab


class ProbeError(ValueError):
    pass


@dataclass
class McqCase:
    history: list[Token]
    options: list[str]                 # concept codes, 2..10 distinct
    label: str | None = None

    def validate(self, vocab: Vocab, max_options: int = 10) -> None:
        if not self.history:
            raise ProbeError("empty history")
        if not (1 <= len(self.options) <= max_options):
            raise ProbeError(f"need 1..{max_options} options")
        if len(set(self.options)) != len(self.options):
            raise ProbeError("options must be distinct")
        for code in self.options:
            if not vocab.has_concept(code):
                raise ProbeError(f"option {code!r} not in vocab")


@dataclass
class SaliencyResult:
    tokens: list[Token]
    weights: np.ndarray                # >= 0, sums to 1, len == context length
    raw_norms: np.ndarray
    target: int                        # CONCEPT token id that was explained
    target_log_prob: float

    def to_json(self, vocab: Vocab) -> dict:
        return {
            "tokens": [{"kind": t.kind, "value": vocab.entry(t.id).value}
                       for t in self.tokens],
            "weights": [float(w) for w in self.weights],
            "target": vocab.entry(self.target).value,
            "target_log_prob": self.target_log_prob,
        }


def mcq_rank(model, case: McqCase, vocab: Vocab) -> list[tuple[str, float]]:
    """Options with probabilities renormalised over the option set.

    Ordered by descending probability, ties broken by ascending token id.
    Only ratios of the raw next-disorder probabilities matter.
    """
    case.validate(vocab)
    ids = np.array([t.id for t in case.history])
    dist = model.next_disorder_distribution(ids, vocab.concept_mask())
    option_ids = [vocab.id_of(KIND_CONCEPT, code) for code in case.options]
    raw = np.array([dist[i] for i in option_ids])
    total = raw.sum()
    if total <= 0.0:
        raise ProbeError("model assigns zero probability to every option")
    normalised = raw / total
    order = sorted(range(len(case.options)),
                   key=lambda i: (-normalised[i], option_ids[i]))
    return [(case.options[i], float(normalised[i])) for i in order]


def saliency(model, context: list[Token], vocab: Vocab,
             target: str | int = "argmax",
             method: str = "grad_l2") -> SaliencyResult:
    """Per-input-token importance for a next-disorder forecast.

    The score is the L2 norm (or |gradient . input| with
    method="grad_x_input") of d log P(target) / d embedding(token), where
    P is the disorder-masked distribution at the final context position.
    """
    if not context:
        raise ProbeError("empty context")
    if method not in ("grad_l2", "grad_x_input"):
        raise ProbeError(f"unknown saliency method {method!r}")
    concept_mask = vocab.concept_mask()
    ids = np.array([t.id for t in context])

    if target == "argmax":
        dist = model.next_disorder_distribution(ids, concept_mask)
        target_id = int(np.argmax(dist))
    elif isinstance(target, str):
        target_id = vocab.id_of(KIND_CONCEPT, target)
    else:
        target_id = int(target)
    if vocab.entry(target_id).kind != KIND_CONCEPT:
        raise ProbeError(
            f"saliency target must be a concept, got {vocab.entry(target_id).kind}")

    res = model.forward(ids.reshape(1, -1))
    final = nm.slice_axis(res.logits, 1, len(ids) - 1, len(ids))
    logp = nm.log_softmax(nm.add(final,
                                 nm.constant(np.where(concept_mask, 0.0, -1e30)
                                             .astype(res.logits.data.dtype))))
    picked = nm.take_along_last(logp, np.array([[target_id]]))
    loss = nm.reshape(picked, ())
    loss.backward()

    grad = res.token_embedding.grad            # (1, T, D)
    if grad is None:
        raise ProbeError("no gradient reached the token embeddings")
    grad = grad[0]
    if method == "grad_l2":
        raw = np.linalg.norm(grad, axis=-1)
    else:
        raw = np.abs((grad * res.token_embedding.data[0]).sum(axis=-1))
    total = raw.sum()
    weights = raw / total if total > 0 else np.full(len(ids), 1.0 / len(ids))
    return SaliencyResult(tokens=list(context), weights=weights,
                          raw_norms=raw, target=target_id,
                          target_log_prob=float(loss.data))


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------

def tokens_from_json(raw: list[dict], vocab: Vocab) -> list[Token]:
    return [Token(t["kind"], vocab.id_of(t["kind"], str(t["value"])))
            for t in raw]


def load_mcq_cases(path, vocab: Vocab) -> list[McqCase]:
    """JSON-lines: {"history": [{kind, value}...], "options": [codes],
    "label": optional}."""
    cases = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            d = json.loads(line)
            cases.append(McqCase(history=tokens_from_json(d["history"], vocab),
                                 options=[str(o) for o in d["options"]],
                                 label=d.get("label")))
    return cases
