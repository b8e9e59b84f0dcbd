"""Attention gated transformation (AGT) networks for sentence classification."""

from .analysis import (
    AttentionRecord,
    PhraseSpan,
    attention_spikiness,
    gate_activity_summary,
    median_relaxed_select,
    normalize_attention,
    phrase_length_distribution,
    render_heatmap,
    select_and_compose,
)
from .corpus import (
    LabeledTree,
    TrainingUnit,
    Vocabulary,
    extract_training_units,
    generate_synthetic_corpus,
    load_embeddings,
    parse_treebank_line,
)
from .estimator import AGTClassifier
from .model import AgtNetwork, NetworkConfig, load_checkpoint, network_forward, save_checkpoint
from .training import TrainConfig, adadelta_step, evaluate, fit, train_epoch

__version__ = "0.1.0"

__all__ = [
    "AGTClassifier",
    "AgtNetwork",
    "AttentionRecord",
    "LabeledTree",
    "NetworkConfig",
    "PhraseSpan",
    "TrainConfig",
    "TrainingUnit",
    "Vocabulary",
    "adadelta_step",
    "attention_spikiness",
    "evaluate",
    "extract_training_units",
    "fit",
    "gate_activity_summary",
    "generate_synthetic_corpus",
    "load_checkpoint",
    "load_embeddings",
    "median_relaxed_select",
    "network_forward",
    "normalize_attention",
    "parse_treebank_line",
    "phrase_length_distribution",
    "render_heatmap",
    "save_checkpoint",
    "select_and_compose",
    "train_epoch",
]
