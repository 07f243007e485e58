"""weaklab: an iterative, prompt-driven weak-supervision pipeline.

A language model (or a deterministic mock oracle) proposes keyword and
regex label functions for selected query instances; candidates pass a
validity/accuracy/redundancy gate, a label model aggregates the surviving
weak labels, and a text classifier is trained on the result.
"""

from .corpus import Dataset, Instance, load_dataset, tokenize, extract_ngrams
from .labelfns import ABSTAIN, LabelFunction, compile_lf, apply_lf, build_matrix
from .aggregate import majority_vote, weighted_vote, dawid_skene_em, resolve_training_labels
from .pipeline import RunConfig, RunReport, run, multi_seed, generate_synthetic

__version__ = "0.1.0"

__all__ = [
    "ABSTAIN",
    "Dataset",
    "Instance",
    "LabelFunction",
    "RunConfig",
    "RunReport",
    "apply_lf",
    "build_matrix",
    "compile_lf",
    "dawid_skene_em",
    "extract_ngrams",
    "generate_synthetic",
    "load_dataset",
    "majority_vote",
    "multi_seed",
    "resolve_training_labels",
    "run",
    "tokenize",
    "weighted_vote",
]
