"""Toolkit for hyper-relational knowledge graphs: lossless transformation
to triple KGs, embedding training with a GNN encoder and multilinear
decoder, and filtered link-prediction evaluation at every entity
position."""

__version__ = "0.1.0"

from .core import HkgDataset, HyperFact, Vocab, canonical_fact, dataset_stats
from .transform import TransformedKg, recover, transform, verify_stats

__all__ = [
    "HkgDataset", "HyperFact", "Vocab", "canonical_fact", "dataset_stats",
    "TransformedKg", "recover", "transform", "verify_stats",
    "__version__",
]
