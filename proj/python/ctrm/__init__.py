"""Causal-temporal video captioning: synthetic data, training, decoding and caption metrics."""

import json

from . import _core
from ._core import (
    CapacityError,
    Checkpoint,
    ConfigError,
    ParseError,
    SchemaError,
    ShapeError,
    TrainingError,
    contrastive_loss,
    read_dataset,
    rouge_l_pair,
    temporal_consistency_loss,
    vocabulary,
    write_dataset,
)

__all__ = [
    "CapacityError",
    "Checkpoint",
    "ConfigError",
    "ParseError",
    "SchemaError",
    "ShapeError",
    "TrainingError",
    "contrastive_loss",
    "evaluate_corpus",
    "generate_dataset",
    "grad_check",
    "read_dataset",
    "resolve_config",
    "rouge_l_pair",
    "run_pipeline",
    "temporal_consistency_loss",
    "vocabulary",
    "write_dataset",
]


def resolve_config(config=None, overrides=()):
    """Defaults, then `config` (a dict), then "key=value" overrides."""
    return json.loads(_core.resolve_config(json.dumps(config or {}), list(overrides)))


def generate_dataset(config=None, overrides=()):
    """Samples as dicts with frames (ndarray), caption (words), causal_edges and event_ids."""
    return _core.generate_dataset(json.dumps(config or {}), list(overrides))


def evaluate_corpus(corpus, per_sample=False):
    """Scores [{"id", "hypothesis", "references"}] with BLEU-4, ROUGE-L and CIDEr-D."""
    return json.loads(_core.evaluate_corpus(list(corpus), per_sample))


def run_pipeline(config=None, overrides=(), train=None, eval=None, checkpoint_dir=None, out=None):
    """Runs the configured stages and returns the report. Without `train` the data
    comes from the config's generator, split by data.holdout."""
    report = _core.run_pipeline(json.dumps(config or {}), list(overrides), train, eval, checkpoint_dir, out)
    return json.loads(report)


def grad_check(seeds=2, only=()):
    return _core.grad_check(seeds, list(only))
