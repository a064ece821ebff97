"""Python access to the metaxl core: configs, studies, analysis and metrics.

Configs cross the boundary as JSON; the helpers here accept dicts too.
"""

import json

from . import _core
from ._core import (
    ContractError,
    IoError,
    NumericError,
    ParseError,
    ShapeError,
    binary_f1,
    cosine_distance,
    extract_spans,
    hausdorff,
    macro_f1,
    pca2,
    pearson,
    preset_names,
    scalar_meta_gradient,
    span_f1,
)

__all__ = [
    "ContractError",
    "IoError",
    "NumericError",
    "ParseError",
    "ShapeError",
    "analyze_run",
    "binary_f1",
    "config_hash",
    "cosine_distance",
    "evaluate_checkpoint",
    "export_pair",
    "extract_spans",
    "generate_pair",
    "hausdorff",
    "macro_f1",
    "pca2",
    "pearson",
    "preset",
    "preset_names",
    "run_study",
    "scalar_meta_gradient",
    "span_f1",
]


def _as_json(value):
    if value is None:
        return ""
    return value if isinstance(value, str) else json.dumps(value)


def preset(name):
    """Named experiment config as a dict."""
    return json.loads(_core.preset(name))


def config_hash(config):
    return _core.config_hash(_as_json(config))


def run_study(config, jobs=1):
    """Runs every cell of `config` (dict or JSON string); returns the report."""
    return _core.run_study(_as_json(config), jobs)


def analyze_run(run_dir, modified=False):
    return _core.analyze_run(str(run_dir), modified)


def evaluate_checkpoint(checkpoint, data_path):
    return _core.evaluate_checkpoint(str(checkpoint), str(data_path))


def generate_pair(spec=None):
    return _core.generate_pair(_as_json(spec))


def export_pair(out_dir, spec=None):
    _core.export_pair(_as_json(spec), str(out_dir))
