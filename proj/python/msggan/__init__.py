"""Python access to the msggan C++ core.

Configuration dictionaries take the same keys as the CLI ``--config`` files.
Values may be strings, numbers, booleans or sequences (joined with commas).
"""

import json as _json

from . import _msggan
from ._msggan import (
    ConfigError,
    NonFiniteError,
    audit_shapes,
    compute_metrics,
    confusion,
    generate,
    gradcheck,
    minibatch_stddev,
    report_markdown,
    split,
    wgan_losses,
)

__all__ = [
    "ConfigError",
    "NonFiniteError",
    "audit_shapes",
    "compute_metrics",
    "confusion",
    "evaluate",
    "experiment_matrix",
    "generate",
    "gradcheck",
    "minibatch_stddev",
    "reference_report",
    "report_markdown",
    "split",
    "train_classifier",
    "train_gan",
    "wgan_losses",
]


def _config(cfg):
    out = {}
    for key, value in (cfg or {}).items():
        if isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, (list, tuple)):
            value = ",".join(str(v) for v in value)
        out[str(key)] = str(value)
    return out


def train_gan(data, out, label, config=None, split=None, resume=True):
    """Train one per-class generator; returns (first_step, last_step, checkpoint)."""
    return _msggan.train_gan(data, out, label, _config(config), split, resume)


def train_classifier(data, out, config=None):
    return _msggan.train_classifier(data, out, _config(config))


def evaluate(model, data, out):
    return _msggan.evaluate(model, data, out)


def experiment_matrix(real, synthetic, out, config=None, seeds=()):
    """Run the four train/test scenarios and return the report as a dict."""
    text = _msggan.experiment_matrix(real, synthetic, out, _config(config), list(seeds))
    return _json.loads(text)


def reference_report():
    return _json.loads(_msggan.reference_report_json())
