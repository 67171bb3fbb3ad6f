"""Self-supervised spatio-temporal representations: generation, pretraining, encoding, ridge evaluation."""

import json as _json

from ._core import (
    Model,
    Series,
    StrepError,
    apply_mask,
    default_lambda_grid,
    loglog_slope,
    ridge_fit,
)
from . import _core

__all__ = [
    "Model",
    "Series",
    "StrepError",
    "apply_mask",
    "config_schema",
    "default_lambda_grid",
    "evaluate",
    "generate",
    "loglog_slope",
    "parameter_count",
    "pretrain",
    "ridge_fit",
    "run_cli",
]


def _dump(cfg):
    return "" if cfg is None else _json.dumps(cfg)


def generate(**data):
    """Synthetic road-network series; keyword arguments are keys of the "data" config section."""
    return _core._generate(_dump(data))


def pretrain(series, config=None):
    """Train on a Series; `config` is a dict with optional "model", "train" and "seed" entries."""
    return _core._pretrain(series, _dump(config))


def evaluate(model, series, config=None):
    """Downstream ridge protocol; returns the report as a dict with an "entries" list."""
    return _json.loads(model.evaluate(series, _dump(config)))


def parameter_count(nodes, model=None, steps_per_day=288):
    return _core.parameter_count(_dump(model), nodes, steps_per_day)


def config_schema():
    return _json.loads(_core.config_schema())


def run_cli(*args):
    """Runs the strep command line in-process; returns (exit_code, stdout, stderr)."""
    return _core.run_cli([str(a) for a in args])
