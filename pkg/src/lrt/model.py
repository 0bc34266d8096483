"""Adaptive-depth reasoning model over Sudoku grids.

One learned reasoning token is appended to the embedded puzzle and rewritten
across internal steps. Each step runs the encoder, proposes an update to the
token, gates the update for reliability (discard gate), scores how
Sudoku-consistent the implied predictions are, and decides whether to halt
(stop gate). Inference takes a variable number of steps; training unrolls a
fixed maximum so gradients reach every step.

Shapes, for box size n and width d:
  one-hot grid [n^4, n^2+1] -> embeddings [n^4, d]; sequence [n^4+1, d] with
  the reasoning token last; update u = gelu(W_u r~ + b_u); gates are scalar
  sigmoids; decoder projects the token into n^2 memory slots which the puzzle
  embeddings cross-attend, then a per-cell classifier over digits 1..n^2.

All forward math runs on autodiff Tensors so the same code path serves
training and inference; parameters are never mutated by a forward pass.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .sudoku import Grid, encode_grid, units


@dataclass(frozen=True)
class ModelConfig:
    box_size: int
    d_model: int
    n_layers: int
    n_heads: int
    ff_width: int
    t_max: int
    tau_s: float = 0.5
    precision: str = "float32"

    def __post_init__(self):
        if self.box_size < 2:
            raise ValueError("box_size must be >= 2")
        if self.d_model % self.n_heads != 0:
            raise ValueError(
                f"d_model {self.d_model} not divisible by n_heads {self.n_heads}"
            )
        if self.t_max < 1:
            raise ValueError("t_max must be >= 1")
        if not 0.0 < self.tau_s < 1.0:
            raise ValueError("tau_s must lie strictly between 0 and 1")
        if self.n_layers < 0:
            raise ValueError("n_layers must be >= 0")
        if self.precision not in ("float32", "float64"):
            raise ValueError(f"unknown precision {self.precision!r}")

    @classmethod
    def default_for(cls, box_size: int, **overrides) -> "ModelConfig":
        if box_size == 2:
            base = dict(d_model=64, n_layers=2, n_heads=4, ff_width=128, t_max=8)
        else:
            base = dict(d_model=128, n_layers=4, n_heads=8, ff_width=256, t_max=32)
        base.update(overrides)
        return cls(box_size=box_size, **base)

    @property
    def side(self) -> int:
        return self.box_size ** 2

    @property
    def n_cells(self) -> int:
        return self.box_size ** 4

    @property
    def seq_len(self) -> int:
        return self.n_cells + 1

    @property
    def head_width(self) -> int:
        return self.d_model // self.n_heads

    @property
    def n_classes(self) -> int:
        return self.side

    @property
    def vocab(self) -> int:
        # digit classes plus the empty marker
        return self.side + 1

    @property
    def dtype(self):
        return np.float64 if self.precision == "float64" else np.float32


class ModelParams:
    """All trainable tensors, in a registry whose order is the file order."""

    def __init__(self, config: ModelConfig, registry: ad.ParamRegistry):
        self.config = config
        self.registry = registry

    def __getitem__(self, name: str) -> Tensor:
        return self.registry[name]

    def tau_d(self) -> float:
        """Learned discard threshold, mapped from its logit into (0,1)."""
        return float(_sigmoid_np(self.registry["discard.tau_logit"].data[0]))

    def n_scalars(self) -> int:
        return self.registry.n_scalars()


def _sigmoid_np(x):
    return 1.0 / (1.0 + np.exp(-x)) if x >= 0 else np.exp(x) / (1.0 + np.exp(x))


def init_params(config: ModelConfig, seed: int = 0) -> ModelParams:
    """Fresh parameters: weights N(0, 0.02), biases zero, norm gains one.

    Gate biases break the symmetric start: the stop-gate bias starts at -2
    so an untrained model keeps thinking instead of halting at step 1, and
    the discard bias starts at -1 so proposals flow through by default
    (d ~ 0.27 < tau_d) instead of sitting in coin-flip territory at the
    threshold. The discard threshold logit starts at 0, i.e. tau_d = 0.5.
    """
    rng = np.random.default_rng(seed)
    dt = config.dtype
    d = config.d_model
    reg = ad.ParamRegistry()

    def w(name, *shape, std=0.02):
        return reg.add(name, rng.normal(0.0, std, shape).astype(dt))

    def zeros(name, *shape):
        return reg.add(name, np.zeros(shape, dtype=dt))

    def ones(name, *shape):
        return reg.add(name, np.ones(shape, dtype=dt))

    w("embed.token", config.vocab, d)
    # Positions carry most of the decodable signal at this scale (which cell
    # is which); a louder start keeps them from being drowned out early.
    w("embed.pos", config.seq_len, d, std=0.05)
    w("embed.reason_init", d)
    for i in range(config.n_layers):
        p = f"enc.{i}"
        ones(f"{p}.ln1.gain", d)
        zeros(f"{p}.ln1.bias", d)
        for proj in ("wq", "wk", "wv", "wo"):
            w(f"{p}.attn.{proj}", d, d)
        for b in ("bq", "bk", "bv", "bo"):
            zeros(f"{p}.attn.{b}", d)
        ones(f"{p}.ln2.gain", d)
        zeros(f"{p}.ln2.bias", d)
        w(f"{p}.ffn.w1", d, config.ff_width)
        zeros(f"{p}.ffn.b1", config.ff_width)
        w(f"{p}.ffn.w2", config.ff_width, d)
        zeros(f"{p}.ffn.b2", d)
    w("update.w", d, d)
    zeros("update.b", d)
    w("discard.w", 2 * d, 1)
    reg.add("discard.b", np.full((1,), -1.0, dtype=dt))
    zeros("discard.tau_logit", 1)
    w("stop.w", d, 1)
    reg.add("stop.b", np.full((1,), -2.0, dtype=dt))
    # The slot projection and the value/output maps of the readout attention
    # start 5x louder than the rest: at the default scale the
    # reasoning-token -> slots -> cells channel is ~100x quieter than the
    # residual bypass, and the optimizer deepens the bypass instead of
    # opening the channel.
    w("dec.mem.w", d, config.n_classes * d, std=0.1)
    zeros("dec.mem.b", config.n_classes * d)
    ones("dec.lnq.gain", d)
    zeros("dec.lnq.bias", d)
    ones("dec.lnkv.gain", d)
    zeros("dec.lnkv.bias", d)
    for proj in ("wq", "wk"):
        w(f"dec.attn.{proj}", d, d)
    for proj in ("wv", "wo"):
        w(f"dec.attn.{proj}", d, d, std=0.1)
    for b in ("bq", "bk", "bv", "bo"):
        zeros(f"dec.attn.{b}", d)
    ones("dec.ln.gain", d)
    zeros("dec.ln.bias", d)
    w("dec.cls.w", d, config.n_classes)
    zeros("dec.cls.b", config.n_classes)
    return ModelParams(config, reg)


# ---------------------------------------------------------------------------
# trace records


@dataclass
class ReasoningStep:
    t: int
    r_before: np.ndarray
    r_tilde: np.ndarray
    u: np.ndarray
    d_gate: float
    accepted: bool
    s_gate: float
    c_score: float
    halted: bool


@dataclass
class ReasoningTrace:
    steps: list
    steps_taken: int
    discard_event_count: int
    final_logits: np.ndarray
    # train-mode graph handles, None at inference
    d_tensors: list | None = None
    s_tensors: list | None = None
    c_tensors: list | None = None
    logit_tensors: list | None = None
    final_logits_tensor: Tensor | None = None
    clue_fraction: float = 0.0

    def mean_stop_penalty(self) -> float:
        return _mean([1.0 - s.s_gate for s in self.steps])


def _mean(values) -> float:
    values = list(values)
    return sum(values) / len(values) if values else 0.0


# ---------------------------------------------------------------------------
# forward pieces


def _check_onehot(onehot, config: ModelConfig) -> np.ndarray:
    arr = onehot.data if isinstance(onehot, Tensor) else np.asarray(onehot)
    if arr.shape != (config.n_cells, config.vocab):
        raise ValueError(
            f"one-hot grid shape {arr.shape} does not match "
            f"({config.n_cells}, {config.vocab}) for box_size {config.box_size}"
        )
    return arr.astype(config.dtype, copy=False)


def embed_puzzle_tokens(onehot, params: ModelParams) -> Tensor:
    """Token + positional embeddings for the n^4 puzzle cells.

    Constant across reasoning steps for a given puzzle; compute once and
    reuse. Accepts a single [n^4, vocab] table or a batch [B, n^4, vocab].
    """
    cfg = params.config
    arr = onehot.data if isinstance(onehot, Tensor) else np.asarray(onehot)
    arr = arr.astype(cfg.dtype, copy=False)
    x = Tensor(arr) @ params["embed.token"]
    pos = params["embed.pos"][: cfg.n_cells]
    return x + pos


def embed_sequence(onehot, params: ModelParams, r: Tensor | None = None) -> Tensor:
    """Full input sequence: embedded cells plus the reasoning slot.

    Cell i gets token[digit_i] + pos[i]; the final position gets the current
    reasoning token (r, defaulting to the learned initial token) + pos[n^4].
    """
    cfg = params.config
    _check_onehot(onehot, cfg)
    x = embed_puzzle_tokens(onehot, params)
    if r is None:
        r = params["embed.reason_init"]
    slot = (r + params["embed.pos"][cfg.n_cells]).reshape(1, cfg.d_model)
    return ad.concat([x, slot], axis=0)


def _heads_split(x: Tensor, n_heads: int) -> Tensor:
    b, s, d = x.shape
    return x.reshape(b, s, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def _heads_join(x: Tensor) -> Tensor:
    b, h, s, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, s, h * dh)


def _attention(q_in: Tensor, kv_in: Tensor, params: ModelParams, prefix: str,
               collect: list | None = None) -> Tensor:
    """Multi-head attention of q_in over kv_in, both [B, S, d]."""
    cfg = params.config
    q = _heads_split(q_in @ params[f"{prefix}.wq"] + params[f"{prefix}.bq"], cfg.n_heads)
    k = _heads_split(kv_in @ params[f"{prefix}.wk"] + params[f"{prefix}.bk"], cfg.n_heads)
    v = _heads_split(kv_in @ params[f"{prefix}.wv"] + params[f"{prefix}.bv"], cfg.n_heads)
    scale = 1.0 / np.sqrt(cfg.head_width)
    scores = (q @ k.transpose(0, 1, 3, 2)) * scale
    weights = ad.softmax(scores, axis=-1)
    if collect is not None:
        collect.append(weights.data.copy())
    out = _heads_join(weights @ v)
    return out @ params[f"{prefix}.wo"] + params[f"{prefix}.bo"]


def _ln(x: Tensor, params: ModelParams, name: str) -> Tensor:
    return ad.layer_norm(x, params[f"{name}.gain"], params[f"{name}.bias"])


def encoder_forward(seq: Tensor, params: ModelParams, collect_attn: bool = False):
    """Pre-norm transformer stack; returns hidden states and the proposal.

    The proposal r_tilde is the final sequence position of the output. With
    zero layers the stack is the identity, so r_tilde is exactly the embedded
    reasoning token. Accepts [S, d] or [B, S, d].

    With collect_attn, also returns per-layer attention weights
    [B, heads, S, S]; each row sums to 1.
    """
    single = seq.ndim == 2
    h = seq.reshape(1, *seq.shape) if single else seq
    attn_maps = [] if collect_attn else None
    for i in range(params.config.n_layers):
        p = f"enc.{i}"
        normed = _ln(h, params, f"{p}.ln1")
        h = h + _attention(normed, normed, params, f"{p}.attn", collect=attn_maps)
        ff_in = _ln(h, params, f"{p}.ln2")
        ff = ad.gelu(ff_in @ params[f"{p}.ffn.w1"] + params[f"{p}.ffn.b1"])
        h = h + (ff @ params[f"{p}.ffn.w2"] + params[f"{p}.ffn.b2"])
    r_tilde = h[:, -1, :]
    if single:
        h = h.reshape(*seq.shape)
        r_tilde = r_tilde.reshape(params.config.d_model)
    if collect_attn:
        return h, r_tilde, attn_maps
    return h, r_tilde


def propose_update(r_tilde: Tensor, params: ModelParams) -> Tensor:
    """Candidate replacement for the reasoning token: gelu(W_u r~ + b_u)."""
    d = params.config.d_model
    single = r_tilde.ndim == 1
    x = r_tilde.reshape(1, d) if single else r_tilde
    u = ad.gelu(x @ params["update.w"] + params["update.b"])
    return u.reshape(d) if single else u


def discard_gate(r_prev: Tensor, u: Tensor, params: ModelParams,
                 mode: str = "infer", forced: float | None = None,
                 estimator: str = "blend"):
    """Reliability gate on a proposed update.

    Returns (d_gate, r_next, accepted). The gate value is
    sigmoid(w . [r_prev; u] + b); above the learned threshold tau_d the
    proposal is rejected. Inference keeps r_prev or u exactly (no blending).
    Training has two relaxations, picked by `estimator`:

      "blend"  r_next = d*r_prev + (1-d)*u, so gradients reach both branches
               through a state that differs from the deployed one;
      "hard"   straight-through: the forward value is exactly the inference
               branch, the backward pass pretends it was the blend. Training
               then optimizes the very dynamics inference executes.

    `accepted` always reports the hard comparison. `forced` substitutes a
    fixed gate value for the computed one (gate-semantics testing).
    """
    if mode not in ("infer", "train"):
        raise ValueError(f"mode must be 'infer' or 'train', got {mode!r}")
    if estimator not in ("blend", "hard"):
        raise ValueError(f"estimator must be 'blend' or 'hard', got {estimator!r}")
    d_model = params.config.d_model
    if forced is None:
        both = ad.concat([r_prev.reshape(1, d_model), u.reshape(1, d_model)], axis=1)
        d_gate = ad.sigmoid(both @ params["discard.w"] + params["discard.b"]).reshape(1)
    else:
        d_gate = Tensor(np.full((1,), forced, dtype=params.config.dtype))
    d_val = float(d_gate.data[0])
    tau_d = params.tau_d()
    accepted = d_val <= tau_d
    if mode == "infer":
        r_next = u if accepted else r_prev
    else:
        soft = d_gate * r_prev + (1.0 - d_gate) * u
        if estimator == "hard":
            # Value is bit-exact the inference branch (soft - soft.detach()
            # is exactly zero elementwise); gradient is exactly the blend's.
            branch = Tensor(np.array((u if accepted else r_prev).data, copy=True))
            r_next = branch + (soft - soft.detach())
        else:
            r_next = soft
    return d_gate, r_next, accepted


def stop_gate(r: Tensor, params: ModelParams, forced: float | None = None) -> Tensor:
    """Halting confidence sigmoid(w . r + b), scalar in (0,1)."""
    if forced is not None:
        return Tensor(np.full((1,), forced, dtype=params.config.dtype))
    d = params.config.d_model
    return ad.sigmoid(r.reshape(1, d) @ params["stop.w"] + params["stop.b"]).reshape(1)


# ---------------------------------------------------------------------------
# decoding and consistency


def _unit_matrix(box_size: int, dtype) -> np.ndarray:
    m = np.zeros((3 * box_size ** 2, box_size ** 4), dtype=dtype)
    for ui, unit in enumerate(units(box_size)):
        m[ui, list(unit)] = 1.0
    return m


_UNIT_CACHE: dict = {}


def _units_for(box_size: int, dtype) -> np.ndarray:
    key = (box_size, np.dtype(dtype).name)
    if key not in _UNIT_CACHE:
        _UNIT_CACHE[key] = _unit_matrix(box_size, dtype)
    return _UNIT_CACHE[key]


def _decode(r3: Tensor, x3: Tensor, params: ModelParams) -> Tensor:
    """Batched decoder core: r [B, d] + puzzle embeddings [B, n^4, d] -> logits."""
    cfg = params.config
    b = r3.shape[0]
    mem = r3 @ params["dec.mem.w"] + params["dec.mem.b"]
    slots = mem.reshape(b, cfg.n_classes, cfg.d_model)
    # Pre-norm the cross-attention inputs. Raw embeddings and slot
    # projections start near zero, which would freeze the cell->slot routing
    # at uniform and starve the reasoning token of gradient.
    q_in = _ln(x3, params, "dec.lnq")
    kv_in = _ln(slots, params, "dec.lnkv")
    h = x3 + _attention(q_in, kv_in, params, "dec.attn")
    h = _ln(h, params, "dec.ln")
    return h @ params["dec.cls.w"] + params["dec.cls.b"]


def decode_final(r: Tensor, puzzle, params: ModelParams) -> Tensor:
    """Per-cell digit logits [n^4, n^2] decoded from a reasoning token.

    The token is projected into n^2 memory slots; each puzzle token embedding
    cross-attends the slots and a shared linear classifier scores digits
    1..n^2 (empty is never a predicted class). `puzzle` is a one-hot grid, or
    the precomputed embedding Tensor when the caller already has it.
    """
    cfg = params.config
    if isinstance(puzzle, Tensor) and puzzle.shape[-1] == cfg.d_model:
        x = puzzle
    else:
        _check_onehot(puzzle, cfg)
        x = embed_puzzle_tokens(puzzle, params)
    single = r.ndim == 1
    r3 = r.reshape(1, cfg.d_model) if single else r
    x3 = x.reshape(1, *x.shape) if x.ndim == 2 else x
    logits = _decode(r3, x3, params)
    return logits.reshape(cfg.n_cells, cfg.n_classes) if single else logits


def consistency_from_probs(probs, box_size: int):
    """Soft Sudoku-validity penalty of per-cell digit distributions.

    probs holds one distribution over digits 1..n^2 per cell, [..., n^4, n^2].
    For every row/column/box and every digit, the digit's total mass in the
    unit should be 1; the score is the mean squared deviation. Zero on any
    exact solution's one-hot table. Note the blind spot: the all-uniform
    table also scores zero, since every unit-digit mass is n^2 * 1/n^2 = 1.
    """
    t = probs if isinstance(probs, Tensor) else Tensor(np.asarray(probs, dtype=np.float64))
    u = Tensor(_units_for(box_size, t.dtype))
    mass = u @ t
    dev = mass - 1.0
    return (dev * dev).mean(axis=-1).mean(axis=-1)


def _consistency_from_logits(logits: Tensor, onehot_arr: np.ndarray,
                             params: ModelParams) -> Tensor:
    """Consistency of decoded logits, with clue cells pinned to their digits.

    Empty cells contribute softmax(logits); clue cells contribute their
    ground-truth one-hot, taken as constants.
    """
    cfg = params.config
    probs = ad.softmax(logits, axis=-1)
    empty = onehot_arr[..., :1]
    clue = onehot_arr[..., 1:]
    p_eff = probs * empty + clue
    return consistency_from_probs(p_eff, cfg.box_size)


def consistency_score(r: Tensor, puzzle, params: ModelParams) -> Tensor:
    """Consistency of the predictions implied by reasoning token r.

    Shares the decoder weights rather than owning a separate head, so the
    score measures the actual prediction space.
    """
    cfg = params.config
    onehot_arr = _check_onehot(puzzle, cfg)
    logits = decode_final(r, puzzle, params)
    return _consistency_from_logits(logits, onehot_arr, params)


# ---------------------------------------------------------------------------
# the loop


def reasoning_loop(puzzle, params: ModelParams, config: ModelConfig | None = None,
                   mode: str = "infer", forced_d=None, forced_s=None,
                   estimator: str = "blend"):
    """Run the iterative refinement loop on one puzzle.

    Returns (r_final, ReasoningTrace). Inference halts at the first step
    whose stop gate exceeds tau_s, or at t_max; training unrolls all t_max
    steps and records where halting would have occurred. forced_d / forced_s
    are per-step sequences substituting fixed gate values (the branch and
    halting logic still runs on them). `estimator` picks the train-mode
    discard relaxation (see discard_gate).
    """
    if config is None:
        config = params.config
    if mode not in ("infer", "train"):
        raise ValueError(f"mode must be 'infer' or 'train', got {mode!r}")
    onehot_arr = _check_onehot(puzzle, config)
    x = embed_puzzle_tokens(onehot_arr, params)
    pos_slot = params["embed.pos"][config.n_cells]
    train = mode == "train"

    r = params["embed.reason_init"]
    steps = []
    d_tensors, s_tensors, c_tensors, logit_tensors = [], [], [], []
    logits = None
    for t in range(1, config.t_max + 1):
        seq = ad.concat([x, (r + pos_slot).reshape(1, config.d_model)], axis=0)
        _, r_tilde = encoder_forward(seq, params)
        u = propose_update(r_tilde, params)
        fd = None if forced_d is None else float(forced_d[t - 1])
        d_gate, r_next, accepted = discard_gate(r, u, params, mode=mode,
                                                forced=fd, estimator=estimator)
        logits = decode_final(r_next, x, params)
        c = _consistency_from_logits(logits, onehot_arr, params)
        fs = None if forced_s is None else float(forced_s[t - 1])
        s = stop_gate(r_next, params, forced=fs)
        s_val = float(s.data.reshape(-1)[0])
        halted = (s_val > config.tau_s) or (t == config.t_max)
        steps.append(ReasoningStep(
            t=t,
            r_before=np.array(r.data, copy=True),
            r_tilde=np.array(r_tilde.data, copy=True),
            u=np.array(u.data, copy=True),
            d_gate=float(d_gate.data.reshape(-1)[0]),
            accepted=accepted,
            s_gate=s_val,
            c_score=float(c.data.reshape(-1)[0]),
            halted=halted,
        ))
        if train:
            d_tensors.append(d_gate)
            s_tensors.append(s)
            c_tensors.append(c)
            logit_tensors.append(logits)
        r = r_next
        if not train and halted:
            break

    n_cells = config.n_cells
    clue_fraction = float(1.0 - onehot_arr[:, 0].sum() / n_cells)
    trace = ReasoningTrace(
        steps=steps,
        steps_taken=len(steps),
        discard_event_count=sum(1 for st in steps if not st.accepted),
        final_logits=np.array(logits.data, copy=True),
        d_tensors=d_tensors if train else None,
        s_tensors=s_tensors if train else None,
        c_tensors=c_tensors if train else None,
        logit_tensors=logit_tensors if train else None,
        final_logits_tensor=logits if train else None,
        clue_fraction=clue_fraction,
    )
    return r, trace


def predict(puzzle, params: ModelParams, config: ModelConfig | None = None):
    """Inference on one puzzle: (predicted Grid, ReasoningTrace).

    Every cell is predicted, clues included; argmax ties break toward the
    smaller digit. Deterministic for fixed (puzzle, params, config).
    """
    if config is None:
        config = params.config
    if isinstance(puzzle, Grid):
        onehot = encode_grid(puzzle)
    else:
        onehot = np.asarray(puzzle)
    _, trace = reasoning_loop(onehot, params, config, mode="infer")
    digits = np.argmax(trace.final_logits, axis=-1) + 1
    return Grid(config.box_size, tuple(int(v) for v in digits)), trace


# ---------------------------------------------------------------------------
# batched training unroll

@dataclass
class BatchTrace:
    """Graph handles from a batched fixed-length unroll.

    Per-step lists over t = 1..t_max; gates are [B, 1] tensors, consistency
    is [B], logits are [B, n^4, n^2]. Bookkeeping arrays mirror what single
    traces record: hard-comparison acceptance and halting positions.
    """
    d_gates: list = field(default_factory=list)
    s_gates: list = field(default_factory=list)
    c_scores: list = field(default_factory=list)
    step_logits: list = field(default_factory=list)
    final_logits: Tensor | None = None
    accepted: np.ndarray | None = None      # [T, B] bool
    would_halt: np.ndarray | None = None    # [T, B] bool


def unroll_batch(onehot_batch: np.ndarray, params: ModelParams,
                 config: ModelConfig | None = None, estimator: str = "blend"):
    """Train-mode unroll over a batch: full t_max steps, gates relaxed.

    onehot_batch is [B, n^4, n^2+1]. Returns (r_final [B, d], BatchTrace).
    Semantically matches running reasoning_loop in train mode per puzzle
    with the same `estimator`; the parity is covered by tests.
    """
    if config is None:
        config = params.config
    cfg = config
    if estimator not in ("blend", "hard"):
        raise ValueError(f"estimator must be 'blend' or 'hard', got {estimator!r}")
    arr = np.asarray(onehot_batch).astype(cfg.dtype, copy=False)
    if arr.ndim != 3 or arr.shape[1:] != (cfg.n_cells, cfg.vocab):
        raise ValueError(
            f"batch shape {arr.shape} does not match (B, {cfg.n_cells}, {cfg.vocab})"
        )
    b = arr.shape[0]
    x = embed_puzzle_tokens(arr, params)                      # [B, n^4, d]
    pos_slot = params["embed.pos"][cfg.n_cells]
    tau_d = params.tau_d()
    trace = BatchTrace()
    accepted = np.zeros((cfg.t_max, b), dtype=bool)
    would_halt = np.zeros((cfg.t_max, b), dtype=bool)

    r = params["embed.reason_init"].reshape(1, cfg.d_model) * Tensor(
        np.ones((b, 1), dtype=cfg.dtype))                     # broadcast to [B, d]
    empty = arr[..., :1]
    clue = arr[..., 1:]
    u_mat = Tensor(_units_for(cfg.box_size, cfg.dtype))
    logits = None
    for t in range(1, cfg.t_max + 1):
        slot = (r + pos_slot).reshape(b, 1, cfg.d_model)
        seq = ad.concat([x, slot], axis=1)
        _, r_tilde = encoder_forward(seq, params)             # [B, d]
        u = propose_update(r_tilde, params)                   # [B, d]
        both = ad.concat([r, u], axis=1)
        d_gate = ad.sigmoid(both @ params["discard.w"] + params["discard.b"])  # [B,1]
        r_next = d_gate * r + (1.0 - d_gate) * u
        if estimator == "hard":
            # Straight-through: value is bit-exact the per-row inference
            # branch, gradient is exactly the blend's.
            mask = (d_gate.data <= tau_d)                     # [B, 1] bool
            branch = Tensor(np.where(mask, u.data, r.data))
            r_next = branch + (r_next - r_next.detach())
        logits = _decode(r_next, x, params)                   # [B, n^4, n^2]
        probs = ad.softmax(logits, axis=-1)
        p_eff = probs * empty + clue
        mass = u_mat @ p_eff
        dev = mass - 1.0
        c = (dev * dev).mean(axis=-1).mean(axis=-1)           # [B]
        s = ad.sigmoid(r_next @ params["stop.w"] + params["stop.b"])  # [B,1]

        accepted[t - 1] = d_gate.data[:, 0] <= tau_d
        would_halt[t - 1] = (s.data[:, 0] > cfg.tau_s) | (t == cfg.t_max)
        trace.d_gates.append(d_gate)
        trace.s_gates.append(s)
        trace.c_scores.append(c)
        trace.step_logits.append(logits)
        r = r_next

    trace.final_logits = logits
    trace.accepted = accepted
    trace.would_halt = would_halt
    return r, trace


# ---------------------------------------------------------------------------
# trace text format

TRACE_HEADER = "# t\td_gate\taccepted\ts_gate\tc_score\thalted"


def format_trace(trace: ReasoningTrace) -> str:
    """Tab-separated step lines, one per executed step, after a header.

    Columns: t, d_gate, accepted (0/1), s_gate, c_score, halted (0/1).
    Floats use repr-exact formatting so parsing recovers identical values.
    """
    lines = [TRACE_HEADER]
    for st in trace.steps:
        lines.append("\t".join([
            str(st.t),
            _f(st.d_gate),
            "1" if st.accepted else "0",
            _f(st.s_gate),
            _f(st.c_score),
            "1" if st.halted else "0",
        ]))
    return "\n".join(lines)


def parse_trace_lines(lines):
    """Rebuild step records from format_trace output (vectors not preserved)."""
    steps = []
    for line in lines:
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 6:
            raise ValueError(f"bad trace line: {line!r}")
        steps.append(ReasoningStep(
            t=int(parts[0]),
            r_before=np.empty(0),
            r_tilde=np.empty(0),
            u=np.empty(0),
            d_gate=float(parts[1]),
            accepted=parts[2] == "1",
            s_gate=float(parts[3]),
            c_score=float(parts[4]),
            halted=parts[5] == "1",
        ))
    if not steps:
        raise ValueError("no step lines found")
    return ReasoningTrace(
        steps=steps,
        steps_taken=len(steps),
        discard_event_count=sum(1 for s in steps if not s.accepted),
        final_logits=np.empty(0),
    )


def _f(x: float) -> str:
    return format(float(x), ".17g")
