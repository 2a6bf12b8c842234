"""Posterior-contraction laboratory: HMC and MAP inference for small Bayesian
neural networks, data-dependent priors, and covariate-shift diagnostics."""

import json as _json
from pathlib import Path as _Path

from ._core import *  # noqa: F401,F403
from ._core import (
    __version__,
    list_experiments,
    run_experiment_file,
    run_experiment_json,
)


def run_experiment(config, output_dir=None, seed=None, threads=None):
    """Run an experiment from a config dict, JSON string, or file path.

    Returns the report summary as a dict; all artifacts (report.json,
    metrics.csv, projections.csv, chain sidecars) land in the output
    directory.
    """
    if isinstance(config, (str, _Path)) and _Path(config).exists():
        summary = run_experiment_file(str(config), output_dir, seed, threads)
    elif isinstance(config, dict):
        summary = run_experiment_json(_json.dumps(config), output_dir, seed, threads)
    else:
        summary = run_experiment_json(str(config), output_dir, seed, threads)
    return _json.loads(summary)
