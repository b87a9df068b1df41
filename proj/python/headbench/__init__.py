"""Classification heads, gated ensembles and label audits over frozen embeddings."""

import json as _json

from ._core import (
    HeadbenchError,
    IoError,
    NotFoundError,
    NumericError,
    RuleViolation,
    ValidationError,
    average_logits,
    class_names,
    confusion,
    discover_pairs,
    effective_number_weights,
    focal_alpha,
    focal_loss,
    gated_override,
    load_features,
    predict_checkpoint,
    run_cli,
    smooth_targets,
    tail_names,
    weighted_cross_entropy,
)

__all__ = [
    "HeadbenchError",
    "IoError",
    "NotFoundError",
    "NumericError",
    "RuleViolation",
    "ValidationError",
    "average_logits",
    "class_names",
    "confusion",
    "discover_pairs",
    "effective_number_weights",
    "evaluate",
    "focal_alpha",
    "focal_loss",
    "gated_override",
    "load_features",
    "predict_checkpoint",
    "run_cli",
    "smooth_targets",
    "tail_names",
    "weighted_cross_entropy",
]


def evaluate(y_true, y_pred, class_names=None, tail=None):
    """Metric report (per-class scores, MacroF1, tail metrics) as a dict."""
    from ._core import class_names as _default_names
    from ._core import evaluate_json

    names = list(class_names) if class_names is not None else _default_names()
    return _json.loads(evaluate_json(list(y_true), list(y_pred), names, tail))
