"""Python bindings for the rulelab C++ core."""

from ._core import (
    ConfigError,
    DivergenceError,
    Error,
    element_names,
    evaluate,
    gaussian_fid,
    generate,
    nearest_neighbors,
    nt_xent,
    ols,
    run_cli,
    stationary_linear,
    target_ratio,
    train_rule_error,
)

__all__ = [
    "ConfigError",
    "DivergenceError",
    "Error",
    "element_names",
    "evaluate",
    "gaussian_fid",
    "generate",
    "nearest_neighbors",
    "nt_xent",
    "ols",
    "run_cli",
    "stationary_linear",
    "target_ratio",
    "train_rule_error",
]
