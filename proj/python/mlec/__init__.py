"""Python access to the mlec pipeline (metrics, tokenizer, tuner, CLI)."""

import json

from ._core import (
    DatasetError,
    MetricError,
    bce_with_logits,
    clean_code,
    generate_synthetic,
    label_names,
    minimize,
    run_cli,
    sample_params,
    tokenize,
)
from . import _core

__all__ = [
    "DatasetError",
    "MetricError",
    "bce_with_logits",
    "clean_code",
    "generate_synthetic",
    "label_names",
    "metrics_report",
    "minimize",
    "run_cli",
    "sample_params",
    "tokenize",
]


def metrics_report(y_true, y_pred, scores, labels=None):
    """Every multi-label metric for one prediction set, as a dict."""
    return json.loads(_core._report_json(y_true, y_pred, scores, list(labels or [])))
