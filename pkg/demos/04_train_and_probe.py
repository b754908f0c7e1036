"""Train a small transformer to memorize a toy cohort, then probe it.

Uses deliberately tiny settings so the whole loop (train, evaluate, rank a
differential, attribute a forecast) finishes in about a minute on a laptop
CPU. The CLI drives the same code paths from the shell.
"""

import numpy as np

from medseq import evalmetrics as em
from medseq import probe
from medseq import synthcohort as sc
from medseq import timeline as tl
from medseq import training as tr
from medseq.model import ModelConfig, TransformerLM, variant_config

config = sc.GeneratorConfig(n_concepts=20, n_patients=48, seed=5, order=2,
                            determinism=0.95)
records, generator = sc.generate_cohort(config)
filtered = [tl.filter_events(r) for r in records]
vocab = tl.build_vocab(filtered, min_frequency=1)
timelines = [t for t in (tl.build_timeline(r, vocab) for r in filtered) if t]
print(f"{len(timelines)} timelines, vocab of {len(vocab)}")

model_config = variant_config("glu+rotary", ModelConfig(
    vocab_size=len(vocab), n_layers=2, n_heads=2, d_model=64, max_seq=50))
model = TransformerLM(model_config, seed=1, vocab=vocab)
train_config = tr.TrainConfig(learning_rate=3e-4, weight_decay=0.0,
                              batch_size=48, warmup_steps=20, max_steps=1200,
                              seed=0, eval_every=300)
print("training (memorization regime)...")
result = tr.train(model, timelines, [], train_config, vocab)
for h in result.history:
    print(f"  step {h['step']:>5}  loss {h['train_loss']:.3f}")

best = tr.model_from_checkpoint(result.checkpoint, vocab=vocab)
points = em.enumerate_eval_points(timelines)
print(f"training-set P@1 = {em.precision_at(best, points)[1]:.3f}")

# pose a differential on a patient's history prefix
timeline = timelines[0]
prefix = timeline.tokens[:-1]
truth = vocab.entry(timeline.tokens[-1].id).value
some_codes = [e.value for e in vocab.concept_entries()[:4]]
options = list(dict.fromkeys([truth] + some_codes))[:4]
case = probe.McqCase(history=prefix, options=options)
print(f"\nmultiple-choice probe (true continuation: {truth}):")
for code, p in probe.mcq_rank(best, case, vocab):
    print(f"  {code:<8} {p:.3f}" + ("   <- correct" if code == truth else ""))

print("\nsaliency for the model's own forecast:")
sal = probe.saliency(best, prefix, vocab)
for tok, w in zip(sal.tokens, sal.weights):
    value = vocab.entry(tok.id).value
    print(f"  {'[' + value + ']' if tok.kind == tl.KIND_AGE else value:<8} "
          f"{'#' * int(round(40 * w))} {w:.3f}")
print(f"  forecast: {vocab.entry(sal.target).value} "
      f"(log-probability {sal.target_log_prob:.3f})")
