# SPDX-License-Identifier: Apache-2.0
"""Beam alignment simulation, beam classifier and DkNN credibility toolkit."""

import json as _json

from . import _core
from ._core import (
    ConfigError,
    Engine as _Engine,
    FormatError,
    TrainingFailure,
    array_response,
    best_quantized_beam,
    dft_codebook,
    odft_codebook,
    optimal_beam,
    p_value,
    sensing_codebook,
    sensing_indices,
    spectral_efficiency,
    sweep_overhead,
    topk_accuracy,
)

__all__ = [
    "ConfigError",
    "Engine",
    "FormatError",
    "TrainingFailure",
    "array_response",
    "best_quantized_beam",
    "build_dataset",
    "default_config",
    "dft_codebook",
    "generate_channels",
    "odft_codebook",
    "optimal_beam",
    "p_value",
    "read_dataset",
    "reliability_diagram",
    "resolve_config",
    "run",
    "sensing_codebook",
    "sensing_indices",
    "spectral_efficiency",
    "sweep_overhead",
    "topk_accuracy",
]


def _dataset(raw):
    raw = dict(raw)
    raw["meta"] = _json.loads(raw["meta"])
    return raw


def default_config():
    """Default run configuration as a dict."""
    return _json.loads(_core._default_config())


def resolve_config(config=None, workspace="", overrides=()):
    """Full run configuration after applying `config` and "a.b=value" overrides."""
    return _json.loads(_core._resolve_config(_json.dumps(config or {}), str(workspace), list(overrides)))


def generate_channels(scenario=None):
    """Channel matrix with one row per UE."""
    return _core._generate_channels(_json.dumps(scenario or {}))


def build_dataset(config=None):
    """Labelled RSSI dataset; each split maps to features, labels, ue_ids and snr_db."""
    return _dataset(_core._build_dataset(_json.dumps(config or {})))


def read_dataset(path):
    return _dataset(_core.read_dataset(str(path)))


def reliability_diagram(scores, correct, n_bins=10):
    """List of bins with low, high, count, correct and accuracy (None when empty)."""
    return _json.loads(_core._reliability_diagram(list(scores), [bool(c) for c in correct], n_bins))


def run(stage, config=None, workspace="", overrides=(), **options):
    """Runs one pipeline stage (generate, train, calibrate, attack, eval).

    Returns (result, log): the recall report for calibrate with backend="both",
    the written files for attack, the metrics report for eval, otherwise None.
    """
    result, log = _core._run_stage(stage, _json.dumps(config or {}), str(workspace), list(overrides),
                                   _json.dumps(options))
    return _json.loads(result), log


class Engine(_Engine):
    """Trained classifier with its calibrated DkNN engine, loaded from files."""

    def predict(self, x):
        """DkNN verdict for one feature vector as a dict."""
        return _json.loads(self._predict([float(v) for v in x]))
