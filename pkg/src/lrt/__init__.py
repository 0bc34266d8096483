"""Adaptive-depth reasoning transformer with a generated-Sudoku harness.

A single learned reasoning token is appended to the embedded puzzle and
iteratively rewritten; a discard gate rejects unreliable updates, a
consistency score grades the implied predictions against Sudoku constraints,
and a stop gate decides when to halt and decode. See the README for the CLI.
"""

from .sudoku import (
    DatasetError,
    Grid,
    PuzzlePair,
    count_completions,
    decode_grid,
    encode_grid,
    generate_puzzle,
    read_dataset,
    solve_brute_force,
    solver_backend,
    units,
    violation_count,
    write_dataset,
)
from .autodiff import ParamRegistry, ShapeError, Tensor
from .model import (
    ModelConfig,
    ModelParams,
    ReasoningStep,
    ReasoningTrace,
    consistency_from_probs,
    consistency_score,
    decode_final,
    discard_gate,
    embed_sequence,
    encoder_forward,
    format_trace,
    init_params,
    predict,
    propose_update,
    reasoning_loop,
    stop_gate,
)
from .training import (
    Adam,
    ConfigError,
    EvalMetrics,
    LossWeights,
    TrainConfig,
    TrainingAbort,
    evaluate,
    recompute_metrics,
    step_regularization,
    task_loss,
    thinking_loss,
    total_loss,
    train,
    train_infer_divergence,
)
from .checkpoint import CheckpointError, inspect_checkpoint, load_checkpoint, save_checkpoint

SOLVER_BACKEND = solver_backend()

__version__ = "0.1.0"

__all__ = [
    "SOLVER_BACKEND",
    "Adam",
    "CheckpointError",
    "ConfigError",
    "DatasetError",
    "EvalMetrics",
    "Grid",
    "LossWeights",
    "ModelConfig",
    "ModelParams",
    "ParamRegistry",
    "PuzzlePair",
    "ReasoningStep",
    "ReasoningTrace",
    "ShapeError",
    "Tensor",
    "TrainConfig",
    "TrainingAbort",
    "consistency_from_probs",
    "consistency_score",
    "count_completions",
    "decode_final",
    "decode_grid",
    "discard_gate",
    "embed_sequence",
    "encode_grid",
    "encoder_forward",
    "evaluate",
    "format_trace",
    "generate_puzzle",
    "init_params",
    "inspect_checkpoint",
    "load_checkpoint",
    "predict",
    "propose_update",
    "read_dataset",
    "reasoning_loop",
    "recompute_metrics",
    "save_checkpoint",
    "solve_brute_force",
    "solver_backend",
    "step_regularization",
    "stop_gate",
    "task_loss",
    "thinking_loss",
    "total_loss",
    "train",
    "train_infer_divergence",
    "units",
    "violation_count",
    "write_dataset",
]
