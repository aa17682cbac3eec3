# SPDX-License-Identifier: Apache-2.0
"""Python bindings for the gde detector core."""

from ._core import (
    ModelConfig,
    count_flops,
    count_tokens,
    generalized_iou,
    hungarian_match,
    init_weights,
    load_weights,
    predict,
    run_cli,
    save_weights,
    token_id,
)

__all__ = [
    "ModelConfig",
    "count_flops",
    "count_tokens",
    "generalized_iou",
    "hungarian_match",
    "init_weights",
    "load_weights",
    "predict",
    "run_cli",
    "save_weights",
    "token_id",
]
