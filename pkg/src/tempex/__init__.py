"""Temporal information extraction for clinical-style text.

Two families of extractors over a shared document model:

* recurrent-network sequence taggers for tokenization, part-of-speech, and
  time/event span labeling (``rnn``, ``embeddings``),
* factor-graph models (logistic regression, linear-chain CRF, skip-chain CRF)
  with exact and sampling-based inference (``features``, ``factorgraph``),

plus date canonicalization and distant-supervision rules for classifying how
entities relate to their document's creation time (``dates``, ``docreltime``),
span/label scoring (``metrics``), a synthetic corpus generator (``synth``),
and a command-line front end (``cli``).
"""

__version__ = "0.1.0"
