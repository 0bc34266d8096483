"""Binary checkpoint format for model parameters.

Layout, all integers unsigned 32-bit little-endian:

    magic   8 bytes  b"LRTCKPT1"
    header  5 x u32  box_size, d_model, n_layers, n_heads, t_max
    then per parameter, in registry order:
        u32 name length, name bytes (ascii)
        u32 rank, u32 per dimension
        raw float32 little-endian values, row-major

Values are always stored as float32 regardless of the in-memory precision,
so save -> load -> save is byte-identical. ff_width is not in the header; it
is recovered from the first feed-forward weight's shape (models with zero
layers have no such weight and get the conventional 2*d_model, which touches
no stored parameter).
"""

from __future__ import annotations

import struct

import numpy as np

from .model import ModelConfig, ModelParams, init_params

MAGIC = b"LRTCKPT1"


class CheckpointError(ValueError):
    """Unreadable or corrupt checkpoint file."""


def save_checkpoint(params: ModelParams, path):
    cfg = params.config
    chunks = [MAGIC, struct.pack(
        "<5I", cfg.box_size, cfg.d_model, cfg.n_layers, cfg.n_heads, cfg.t_max
    )]
    for name, tensor in params.registry:
        raw = name.encode("ascii")
        arr = np.ascontiguousarray(tensor.data, dtype="<f4")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes(order="C"))
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.off = 0

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.blob):
            raise CheckpointError(
                f"truncated checkpoint: wanted {n} bytes at offset {self.off}, "
                f"file has {len(self.blob)}"
            )
        out = self.blob[self.off:self.off + n]
        self.off += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def done(self) -> bool:
        return self.off == len(self.blob)


def _read_entries(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    r = _Reader(blob)
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError(f"bad magic: {path} is not a checkpoint file")
    box_size, d_model, n_layers, n_heads, t_max = struct.unpack("<5I", r.take(20))
    entries = []
    while not r.done():
        name = r.take(r.u32()).decode("ascii")
        rank = r.u32()
        if rank > 8:
            raise CheckpointError(f"parameter {name!r}: implausible rank {rank}")
        shape = tuple(r.u32() for _ in range(rank))
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        arr = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(shape)
        entries.append((name, arr))
    header = dict(box_size=box_size, d_model=d_model, n_layers=n_layers,
                  n_heads=n_heads, t_max=t_max)
    return header, entries


def load_checkpoint(path, precision: str = "float32") -> ModelParams:
    """Rebuild ModelParams from a checkpoint file.

    tau_s is not serialized (fixed hyperparameter, default 0.5); callers
    needing another value can rebuild the config. Arrays are cast to the
    requested precision.
    """
    header, entries = _read_entries(path)
    arrays = dict(entries)
    if len(arrays) != len(entries):
        raise CheckpointError("duplicate parameter names in checkpoint")
    ffn_key = "enc.0.ffn.w1"
    if ffn_key in arrays:
        ff_width = arrays[ffn_key].shape[1]
    else:
        ff_width = 2 * header["d_model"]
    try:
        config = ModelConfig(
            box_size=header["box_size"],
            d_model=header["d_model"],
            n_layers=header["n_layers"],
            n_heads=header["n_heads"],
            ff_width=ff_width,
            t_max=header["t_max"],
            precision=precision,
        )
    except ValueError as exc:
        raise CheckpointError(f"invalid header: {exc}") from exc
    params = init_params(config, seed=0)
    try:
        params.registry.load_arrays(arrays)
    except ValueError as exc:
        raise CheckpointError(str(exc)) from exc
    return params


def inspect_checkpoint(path) -> dict:
    """Header and parameter inventory without building a model."""
    header, entries = _read_entries(path)
    inventory = [(name, arr.shape, int(arr.size)) for name, arr in entries]
    return {
        "magic": MAGIC.decode("ascii"),
        **header,
        "parameters": inventory,
        "total_scalars": sum(n for _, _, n in inventory),
    }
