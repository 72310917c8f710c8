"""Identity-conditioned semantic image synthesis on toy faces."""

import sys

import torch  # noqa: F401  loads the libtorch shared libraries the extension links against

from ._idsis import (
    IdsisError,
    calibrate_threshold,
    class_names,
    config_keys,
    frechet_distance,
    one_hot,
    run,
    total_objective,
    toy_record,
)

__all__ = [
    "IdsisError",
    "calibrate_threshold",
    "class_names",
    "config_keys",
    "frechet_distance",
    "main",
    "one_hot",
    "run",
    "total_objective",
    "toy_record",
]


def main() -> None:
    sys.exit(run(sys.argv[1:]))
