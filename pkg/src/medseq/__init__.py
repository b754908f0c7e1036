"""Next-disorder forecasting over patient concept timelines.

A small, numpy-backed toolkit: build token timelines from annotated event
streams, train a causal decoder-only transformer (with a set of
architecture switches) or baseline models on them, score next-disorder
precision, and probe trained models with multiple-choice ranking and
gradient saliency. A synthetic cohort generator with an exact oracle makes
the whole pipeline verifiable without access to any real clinical corpus.
"""

__version__ = "0.1.0"
