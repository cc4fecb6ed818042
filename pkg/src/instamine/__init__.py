"""Weakly supervised text mining of fashion posts.

Attribute extraction with an ontology and word embeddings, per-class
generative label models over noisy labeling functions, and a text CNN
trained on the resulting probabilistic labels.
"""

__version__ = "0.1.0"
