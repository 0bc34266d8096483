"""Objective, optimizer loop, and evaluation for the reasoning model.

The objective is a weighted sum of three parts: task cross-entropy over all
cells, a thinking loss (consistency penalty plus a gate-decisiveness term),
and a step regularizer rewarding high stop-gate values. Training unrolls the
reasoning loop for the full t_max on every example; evaluation runs the
variable-depth inference path puzzle by puzzle.
"""

from __future__ import annotations

import dataclasses
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from . import model as M
from .model import ModelConfig, ModelParams, _mean, _f
from .sudoku import Grid, encode_grid


class TrainingAbort(RuntimeError):
    """Training hit a non-finite loss and stopped."""


class ConfigError(ValueError):
    """Malformed training config file; message carries the line number."""


@dataclass(frozen=True)
class LossWeights:
    lambda_task: float = 1.0
    lambda_think: float = 0.1
    lambda_step: float = 0.01
    lambda_margin: float = 0.1

    def __post_init__(self):
        if self.lambda_task <= 0:
            raise ValueError("lambda_task must be positive")
        for name in ("lambda_think", "lambda_step", "lambda_margin"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 32
    learning_rate: float = 3e-4
    warmup_steps: int = 200
    seed: int = 0
    precision: str = "float32"
    weights: LossWeights = dataclasses.field(default_factory=LossWeights)
    model: ModelConfig | None = None
    val_fraction: float = 0.1
    per_step_loss: bool = False
    # weight of the pull that teaches tau_d to track the observed gate values
    lambda_tau_margin: float = 0.05
    # train-time relaxation of the discard branch: "blend" or "hard"
    # (straight-through)
    discard_estimator: str = "blend"

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.warmup_steps < 0:
            raise ValueError("warmup_steps must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie strictly between 0 and 1")
        if self.precision not in ("float32", "float64"):
            raise ValueError(f"unknown precision {self.precision!r}")
        if self.discard_estimator not in ("blend", "hard"):
            raise ValueError(
                f"unknown discard_estimator {self.discard_estimator!r}"
            )


@dataclass(frozen=True)
class EvalMetrics:
    digit_accuracy: float
    puzzle_accuracy: float
    mean_thinking_steps: float
    mean_discard_events: float
    mean_discarded_tokens: float
    mean_stop_gate_loss: float
    mean_answer_gate_penalty: float
    validation_loss: float

    FIELDS = ("digit_accuracy", "puzzle_accuracy", "mean_thinking_steps",
              "mean_discard_events", "mean_discarded_tokens",
              "mean_stop_gate_loss", "mean_answer_gate_penalty",
              "validation_loss")

    def __post_init__(self):
        if self.puzzle_accuracy > self.digit_accuracy + 1e-12:
            raise ValueError("puzzle_accuracy cannot exceed digit_accuracy")

    def as_lines(self):
        return [f"{name} = {_f(getattr(self, name))}" for name in self.FIELDS]


def parse_metrics_lines(lines) -> EvalMetrics:
    values = {}
    for line in lines:
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, raw = line.partition("=")
        values[key.strip()] = float(raw.strip())
    return EvalMetrics(**{name: values[name] for name in EvalMetrics.FIELDS})


# ---------------------------------------------------------------------------
# loss components (per-puzzle contract; the batched path mirrors them)


def _solution_targets(solution: Grid) -> np.ndarray:
    if not solution.is_complete():
        raise ValueError("solution grid contains empty cells")
    return np.asarray(solution.cells, dtype=np.int64) - 1


def task_loss(logits: Tensor, solution: Grid) -> Tensor:
    """Mean cross-entropy over every cell, digits 1..n^2 as classes 0..n^2-1."""
    return ad.cross_entropy(logits, _solution_targets(solution))


def _require_train_trace(trace):
    if trace.c_tensors is None:
        raise ValueError("loss terms need a train-mode trace (fixed unroll)")


def thinking_loss(trace, weights: LossWeights | None = None) -> Tensor:
    """Mean consistency penalty plus gate-decisiveness term.

    mean_t c_t + lambda_margin * mean_t d_t (1 - d_t): the first part pushes
    every intermediate state's decoded distributions toward valid boards, the
    second pushes discard gates away from the indecisive middle.
    """
    _require_train_trace(trace)
    weights = weights or LossWeights()
    t = len(trace.c_tensors)
    cons = trace.c_tensors[0]
    for c in trace.c_tensors[1:]:
        cons = cons + c
    d0 = trace.d_tensors[0]
    inst = d0 * (1.0 - d0)
    for d in trace.d_tensors[1:]:
        inst = inst + d * (1.0 - d)
    return (cons * (1.0 / t) + weights.lambda_margin * inst * (1.0 / t)).reshape(1)


def thinking_loss_parts(trace) -> tuple:
    """(consistency term, instability term) as floats, for logging."""
    _require_train_trace(trace)
    cons = _mean([float(c.data.reshape(-1)[0]) for c in trace.c_tensors])
    inst = _mean([float(d.data.reshape(-1)[0]) * (1.0 - float(d.data.reshape(-1)[0]))
                  for d in trace.d_tensors])
    return cons, inst


def step_regularization(trace) -> Tensor:
    """mean_t (1 - s_t): low stop probabilities cost, pressuring earlier halts."""
    _require_train_trace(trace)
    t = len(trace.s_tensors)
    acc = 1.0 - trace.s_tensors[0]
    for s in trace.s_tensors[1:]:
        acc = acc + (1.0 - s)
    return (acc * (1.0 / t)).reshape(1)


def total_loss(logits: Tensor, solution: Grid, trace,
               weights: LossWeights | None = None) -> Tensor:
    weights = weights or LossWeights()
    loss = weights.lambda_task * task_loss(logits, solution)
    if weights.lambda_think:
        loss = loss + weights.lambda_think * thinking_loss(trace, weights)
    if weights.lambda_step:
        loss = loss + weights.lambda_step * step_regularization(trace)
    return loss


# ---------------------------------------------------------------------------
# batched objective


def _batch_loss(params: ModelParams, onehot_b: np.ndarray, targets_b: np.ndarray,
                weights: LossWeights, config: TrainConfig):
    """Loss over a batch via the fixed-length unroll; returns (loss, parts)."""
    _, btrace = M.unroll_batch(onehot_b, params,
                               estimator=config.discard_estimator)
    t_max = len(btrace.c_scores)

    if config.per_step_loss:
        task = ad.cross_entropy(btrace.step_logits[0], targets_b)
        for lg in btrace.step_logits[1:]:
            task = task + ad.cross_entropy(lg, targets_b)
        task = task * (1.0 / t_max)
    else:
        task = ad.cross_entropy(btrace.final_logits, targets_b)

    cons = btrace.c_scores[0].mean()
    for c in btrace.c_scores[1:]:
        cons = cons + c.mean()
    cons = cons * (1.0 / t_max)
    inst = (btrace.d_gates[0] * (1.0 - btrace.d_gates[0])).mean()
    for d in btrace.d_gates[1:]:
        inst = inst + (d * (1.0 - d)).mean()
    inst = inst * (1.0 / t_max)
    think = cons + weights.lambda_margin * inst

    step = (1.0 - btrace.s_gates[0]).mean()
    for s in btrace.s_gates[1:]:
        step = step + (1.0 - s).mean()
    step = step * (1.0 / t_max)

    loss = weights.lambda_task * task + weights.lambda_think * think \
        + weights.lambda_step * step

    if config.lambda_tau_margin:
        tau = ad.sigmoid(params["discard.tau_logit"])
        pull = (btrace.d_gates[0].detach() - tau).abs().mean()
        for d in btrace.d_gates[1:]:
            pull = pull + (d.detach() - tau).abs().mean()
        loss = loss + config.lambda_tau_margin * pull * (1.0 / t_max)

    parts = {
        "task": float(task.data.reshape(-1)[0]),
        "think": float(think.data.reshape(-1)[0]),
        "step_reg": float(step.data.reshape(-1)[0]),
    }
    return loss, parts


class Adam:
    """Adaptive-moment optimizer with linear learning-rate warmup."""

    def __init__(self, registry: ad.ParamRegistry, learning_rate: float,
                 warmup_steps: int = 0, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.registry = registry
        self.lr = learning_rate
        self.warmup = warmup_steps
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {name: np.zeros_like(t.data) for name, t in registry}
        self.v = {name: np.zeros_like(t.data) for name, t in registry}

    def current_lr(self) -> float:
        if self.warmup > 0 and self.t < self.warmup:
            return self.lr * (self.t / self.warmup)
        return self.lr

    def step(self):
        self.t += 1
        lr = self.current_lr()
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.t
        bias2 = 1.0 - b2 ** self.t
        for name, tensor in self.registry:
            if tensor.grad is None:
                continue
            g = tensor.grad
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            update = (m / bias1) / (np.sqrt(v / bias2) + self.eps)
            tensor.data -= lr * update


# ---------------------------------------------------------------------------
# the loop


LOG_COLUMNS = ("epoch", "train_loss", "task", "think", "step_reg", "val_loss",
               "digit_acc", "puzzle_acc", "mean_steps", "mean_discards")


def _g(x: float) -> str:
    return format(float(x), ".10g")


def train(dataset, config: TrainConfig):
    """Optimize fresh parameters on the dataset; returns (params, log lines).

    Deterministic under the config seed: dataset split, shuffling, and
    initialization all derive from it. Each epoch logs one tab-separated
    line; the returned parameters are from the epoch with the lowest
    validation loss. Raises TrainingAbort if the loss goes non-finite.
    """
    pairs = list(dataset)
    if not pairs:
        raise ValueError("cannot train on an empty dataset")
    mcfg = config.model or ModelConfig.default_for(pairs[0].puzzle.box_size)
    if mcfg.precision != config.precision:
        mcfg = dataclasses.replace(mcfg, precision=config.precision)
    if mcfg.box_size != pairs[0].puzzle.box_size:
        raise ValueError(
            f"model box_size {mcfg.box_size} != dataset box_size "
            f"{pairs[0].puzzle.box_size}"
        )

    rng = np.random.default_rng(config.seed)
    order = rng.permutation(len(pairs))
    n_val = max(1, int(round(len(pairs) * config.val_fraction)))
    if n_val >= len(pairs):
        raise ValueError("dataset too small to carve out a validation split")
    val_idx = order[:n_val]
    train_idx = order[n_val:]
    val_pairs = [pairs[i] for i in val_idx]

    onehots = np.stack([encode_grid(p.puzzle) for p in pairs]).astype(mcfg.dtype)
    targets = np.stack([_solution_targets(p.solution) for p in pairs])

    params = M.init_params(mcfg, seed=config.seed)
    opt = Adam(params.registry, config.learning_rate, config.warmup_steps)

    log_lines = ["\t".join(LOG_COLUMNS)]
    best_loss = np.inf
    best_state = None
    for epoch in range(1, config.epochs + 1):
        perm = rng.permutation(train_idx)
        sums = {"train_loss": 0.0, "task": 0.0, "think": 0.0, "step_reg": 0.0}
        seen = 0
        for start in range(0, len(perm), config.batch_size):
            batch = perm[start:start + config.batch_size]
            params.registry.reset_grads()
            loss, parts = _batch_loss(
                params, onehots[batch], targets[batch], config.weights, config)
            loss_val = float(loss.data.reshape(-1)[0])
            if not np.isfinite(loss_val):
                raise TrainingAbort(
                    f"non-finite loss at epoch {epoch}, batch starting at "
                    f"example {start} (dataset indices {batch[:4].tolist()}...)"
                )
            loss.backward()
            opt.step()
            sums["train_loss"] += loss_val * len(batch)
            for k in ("task", "think", "step_reg"):
                sums[k] += parts[k] * len(batch)
            seen += len(batch)

        metrics = evaluate(params, val_pairs, mcfg)
        log_lines.append("\t".join([
            str(epoch),
            _g(sums["train_loss"] / seen),
            _g(sums["task"] / seen),
            _g(sums["think"] / seen),
            _g(sums["step_reg"] / seen),
            _g(metrics.validation_loss),
            _g(metrics.digit_accuracy),
            _g(metrics.puzzle_accuracy),
            _g(metrics.mean_thinking_steps),
            _g(metrics.mean_discard_events),
        ]))
        if metrics.validation_loss < best_loss:
            best_loss = metrics.validation_loss
            best_state = {name: t.data.copy() for name, t in params.registry}

    if best_state is not None:
        params.registry.load_arrays(best_state)
    return params, log_lines


# ---------------------------------------------------------------------------
# evaluation


def _stable_log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits.astype(np.float64, copy=False)
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _puzzle_task_loss(final_logits: np.ndarray, solution: Grid) -> float:
    log_p = _stable_log_softmax(final_logits)
    targets = _solution_targets(solution)
    picked = log_p[np.arange(len(targets)), targets]
    return float(-picked.mean())


def _answer_gate_penalty(final_logits: np.ndarray) -> float:
    """Mean (1 - max softmax probability) over cells: prediction hesitancy."""
    log_p = _stable_log_softmax(final_logits)
    return float((1.0 - np.exp(log_p.max(axis=-1))).mean())


@dataclass
class _PuzzleResult:
    puzzle: Grid
    solution: Grid
    prediction: Grid
    trace: M.ReasoningTrace
    task_loss: float
    answer_penalty: float


def _eval_one(pair, params) -> _PuzzleResult:
    pred, trace = M.predict(pair.puzzle, params)
    return _PuzzleResult(
        puzzle=pair.puzzle,
        solution=pair.solution,
        prediction=pred,
        trace=trace,
        task_loss=_puzzle_task_loss(trace.final_logits, pair.solution),
        answer_penalty=_answer_gate_penalty(trace.final_logits),
    )


def _metrics_from_rows(rows) -> EvalMetrics:
    """Shared aggregation so recomputation from exports is bit-identical.

    Each row: (correct_cells, n_cells, exact, steps_taken, discard_events,
    stop_penalty, answer_penalty, task_loss).
    """
    rows = list(rows)
    total_cells = sum(r[1] for r in rows)
    correct = sum(r[0] for r in rows)
    discards = _mean([float(r[4]) for r in rows])
    return EvalMetrics(
        digit_accuracy=correct / total_cells,
        puzzle_accuracy=sum(1 for r in rows if r[2]) / len(rows),
        mean_thinking_steps=_mean([float(r[3]) for r in rows]),
        mean_discard_events=discards,
        mean_discarded_tokens=discards,
        mean_stop_gate_loss=_mean([r[5] for r in rows]),
        mean_answer_gate_penalty=_mean([r[6] for r in rows]),
        validation_loss=_mean([r[7] for r in rows]),
    )


def evaluate(params: ModelParams, dataset, config: ModelConfig | None = None,
             workers: int = 1, export_path=None) -> EvalMetrics:
    """Inference metrics over a dataset, puzzle by puzzle.

    With export_path, writes the full trace export; recompute_metrics on that
    file reproduces the returned metrics exactly. workers > 1 fans the
    forward passes over threads; result order stays input order.
    """
    pairs = list(dataset)
    if not pairs:
        raise ValueError("cannot evaluate on an empty dataset")
    if config is not None and config.box_size != pairs[0].puzzle.box_size:
        raise ValueError(
            f"model box_size {config.box_size} != dataset box_size "
            f"{pairs[0].puzzle.box_size}"
        )
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda p: _eval_one(p, params), pairs))
    else:
        results = [_eval_one(p, params) for p in pairs]

    rows = []
    for res in results:
        correct = sum(1 for a, b in zip(res.prediction.cells, res.solution.cells)
                      if a == b)
        rows.append((
            correct,
            res.prediction.n_cells,
            res.prediction.cells == res.solution.cells,
            res.trace.steps_taken,
            res.trace.discard_event_count,
            res.trace.mean_stop_penalty(),
            res.answer_penalty,
            res.task_loss,
        ))
    metrics = _metrics_from_rows(rows)
    if export_path is not None:
        _write_export(results, export_path)
    return metrics


EXPORT_MAGIC = "# lrt-eval-traces v1"


def _write_export(results, path):
    lines = [
        EXPORT_MAGIC,
        "# record: '=' puzzle, solution, prediction, task_loss, answer_penalty",
        "# steps:  t, d_gate, accepted, s_gate, c_score, halted",
    ]
    for res in results:
        lines.append("=\t" + "\t".join([
            res.puzzle.to_string(),
            res.solution.to_string(),
            res.prediction.to_string(),
            _f(res.task_loss),
            _f(res.answer_penalty),
        ]))
        for st in res.trace.steps:
            lines.append("\t".join([
                str(st.t), _f(st.d_gate), "1" if st.accepted else "0",
                _f(st.s_gate), _f(st.c_score), "1" if st.halted else "0",
            ]))
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def recompute_metrics(path) -> EvalMetrics:
    """Rebuild EvalMetrics from an exported trace file, independent of the model."""
    with open(path, "r", encoding="ascii") as fh:
        lines = fh.read().splitlines()
    records = []
    current = None
    for line in lines:
        if not line or line.startswith("#"):
            continue
        if line.startswith("="):
            parts = line.split("\t")
            if len(parts) != 6:
                raise ValueError(f"bad record line: {line!r}")
            current = {"puzzle": parts[1], "solution": parts[2],
                       "prediction": parts[3], "task_loss": float(parts[4]),
                       "answer_penalty": float(parts[5]), "steps": []}
            records.append(current)
        else:
            if current is None:
                raise ValueError("step line before any record line")
            cols = line.split("\t")
            if len(cols) != 6:
                raise ValueError(f"bad step line: {line!r}")
            current["steps"].append({
                "d_gate": float(cols[1]),
                "accepted": cols[2] == "1",
                "s_gate": float(cols[3]),
            })
    if not records:
        raise ValueError(f"no records found in {path}")
    rows = []
    for rec in records:
        sol = rec["solution"]
        pred = rec["prediction"]
        correct = sum(1 for a, b in zip(pred, sol) if a == b)
        rows.append((
            correct,
            len(sol),
            pred == sol,
            len(rec["steps"]),
            sum(1 for s in rec["steps"] if not s["accepted"]),
            _mean([1.0 - s["s_gate"] for s in rec["steps"]]),
            rec["answer_penalty"],
            rec["task_loss"],
        ))
    return _metrics_from_rows(rows)


def train_infer_divergence(params: ModelParams, dataset, limit: int = 32) -> float:
    """Mean relative gap between soft-blend and hard-branch final tokens.

    Reports how far the training-time relaxation sits from what inference
    actually computes; useful when judging the soft-gate approximation.
    """
    pairs = list(dataset)[:limit]
    gaps = []
    for pair in pairs:
        onehot = encode_grid(pair.puzzle)
        r_soft, _ = M.reasoning_loop(onehot, params, mode="train")
        r_hard, _ = M.reasoning_loop(onehot, params, mode="infer")
        soft = r_soft.data.astype(np.float64)
        hard = r_hard.data.astype(np.float64)
        denom = np.linalg.norm(hard) + 1e-12
        gaps.append(float(np.linalg.norm(soft - hard) / denom))
    return _mean(gaps)


# ---------------------------------------------------------------------------
# config files


_INT_KEYS = {"epochs", "batch_size", "warmup_steps", "seed", "box_size",
             "d_model", "n_layers", "n_heads", "ff_width", "t_max"}
_FLOAT_KEYS = {"learning_rate", "val_fraction", "tau_s", "lambda_task",
               "lambda_think", "lambda_step", "lambda_margin",
               "lambda_tau_margin"}
_BOOL_KEYS = {"per_step_loss"}
_STR_KEYS = {"precision", "discard_estimator"}
ALL_CONFIG_KEYS = _INT_KEYS | _FLOAT_KEYS | _BOOL_KEYS | _STR_KEYS


def parse_config_file(path) -> dict:
    """Flat `key = value` file -> typed dict; unknown keys are errors."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    values = {}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, eq, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if not eq or not key or not val:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        if key not in ALL_CONFIG_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            if key in _INT_KEYS:
                values[key] = int(val)
            elif key in _FLOAT_KEYS:
                values[key] = float(val)
            elif key in _BOOL_KEYS:
                low = val.lower()
                if low in ("true", "1", "yes", "on"):
                    values[key] = True
                elif low in ("false", "0", "no", "off"):
                    values[key] = False
                else:
                    raise ValueError(f"not a boolean: {val!r}")
            else:
                values[key] = val
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from exc
    return values


def build_train_config(values: dict, default_box_size: int | None = None) -> TrainConfig:
    """Assemble a TrainConfig from parsed key/values plus a fallback box size."""
    values = dict(values)
    box_size = values.pop("box_size", default_box_size)
    if box_size is None:
        raise ConfigError("box_size is required (in the config or from the dataset)")
    model_overrides = {}
    for key in ("d_model", "n_layers", "n_heads", "ff_width", "t_max", "tau_s"):
        if key in values:
            model_overrides[key] = values.pop(key)
    precision = values.get("precision", "float32")
    try:
        mcfg = ModelConfig.default_for(box_size, precision=precision,
                                       **model_overrides)
        weights = LossWeights(**{k: values.pop(k) for k in
                                 ("lambda_task", "lambda_think", "lambda_step",
                                  "lambda_margin") if k in values})
        return TrainConfig(model=mcfg, weights=weights, **values)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
