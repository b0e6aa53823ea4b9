# Copyright 2026 The glasu Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#      http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""Vertical federated GNN training with lazy aggregation and stale updates."""

import json as _json

from ._core import (
    ConfigError,
    DataError,
    Dataset,
    GlasuError,
    ProtocolError,
    c0,
    count_sync_messages,
    grad_norm_bound,
    load_dataset,
    make_sbm_fixture,
    max_step_size,
    min_rounds_for_suggested_step,
    sigma_var,
    suggested_rate,
    suggested_step,
)
from . import _core

__all__ = [
    "ConfigError",
    "DataError",
    "Dataset",
    "GlasuError",
    "ProtocolError",
    "c0",
    "count_sync_messages",
    "expected_counts",
    "grad_norm_bound",
    "load_dataset",
    "make_sbm_fixture",
    "max_step_size",
    "min_rounds_for_suggested_step",
    "run_experiment",
    "sigma_var",
    "suggested_rate",
    "suggested_step",
]


def run_experiment(config, dataset=None):
    """Train and evaluate one experiment.

    ``config`` uses the keys of the JSON config file (``M``, ``layers``,
    ``agg_layers``, ``T``, ``Q``, ``seed``, ``preset``, ...). When
    ``dataset`` is omitted, ``config["dataset_path"]`` is loaded. Returns the
    report as a dict.
    """
    return _json.loads(_core._run_experiment(_json.dumps(config), dataset))


def expected_counts(layers, agg_layers, M, T, Q, label_mode="all"):
    """Messages per kind and direction predicted for a training run."""
    return _json.loads(_core._expected_counts(layers, list(agg_layers), M, T, Q, label_mode))
