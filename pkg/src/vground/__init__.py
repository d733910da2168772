"""Visually grounded word embeddings.

Trains a reversible linear mapping from a pre-trained textual embedding
space into a grounded space via three image-caption tasks, then applies
the mapping zero-shot to arbitrary vocabularies and evaluates the result
on word-similarity and sentence-similarity benchmarks.
"""

__version__ = "0.1.0"
