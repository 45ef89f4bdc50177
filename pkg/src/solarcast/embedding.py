"""Time-of-day and node-identity embeddings concatenated onto raw inputs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autograd import Tensor, ShapeError, broadcast_to, concat, take

SECONDS_PER_DAY = 86400


def steps_per_day(sampling_period: int) -> int:
    if sampling_period <= 0 or SECONDS_PER_DAY % sampling_period:
        raise ValueError(f"sampling period {sampling_period}s does not divide a day")
    return SECONDS_PER_DAY // sampling_period


def time_of_day_index(timestamp: int, sampling_period: int) -> int:
    """Slot of a UTC epoch timestamp within its day, e.g. 01:00 at 600 s -> 6."""
    spd = steps_per_day(sampling_period)
    seconds = int(timestamp) % SECONDS_PER_DAY
    if seconds % sampling_period:
        raise ValueError(f"timestamp {timestamp} is not aligned to a {sampling_period}s grid")
    return (seconds // sampling_period) % spd


@dataclass
class EmbeddingTables:
    time: Tensor  # (steps_per_day, d1)
    node: Tensor  # (n, d2)

    @classmethod
    def init(cls, n_nodes: int, spd: int, d_time: int, d_node: int, rng: np.random.Generator):
        def table(rows, dim):
            w = rng.uniform(-0.5, 0.5, size=(rows, dim)) / np.sqrt(dim)
            return Tensor(w, requires_grad=True)

        return cls(table(spd, d_time), table(n_nodes, d_node))


def window_slots(start_slot, T: int, spd: int) -> np.ndarray:
    """Slot index of every step of each window, wrapping past midnight. Shape (B, T)."""
    start = np.atleast_1d(np.asarray(start_slot, dtype=np.int64))
    return (start[:, None] + np.arange(T)[None, :]) % spd


def embed_inputs(window, start_slot, tables: EmbeddingTables) -> Tensor:
    """Concatenate raw features with time and node embeddings.

    ``window`` is (B, n, T, d) with ``start_slot`` of shape (B,), or a single
    (n, T, d) window with an integer slot. Returns the matching
    (..., n, T, d + d1 + d2) tensor.
    """
    x = window if isinstance(window, Tensor) else Tensor(window)
    single = x.ndim == 3
    if single:
        x = x.reshape((1,) + x.shape)
    B, n, T, _ = x.shape
    if tables.node.shape[0] != n:
        raise ShapeError("embed_inputs", x.shape, tables.node.shape, detail="node count mismatch")
    spd, d1 = tables.time.shape
    d2 = tables.node.shape[1]
    slots = window_slots(start_slot, T, spd)
    if slots.shape[0] != B:
        slots = np.broadcast_to(slots, (B, T))
    e_time = take(tables.time, slots)  # (B, T, d1)
    e_time = broadcast_to(e_time.reshape((B, 1, T, d1)), (B, n, T, d1))
    e_node = broadcast_to(tables.node.reshape((1, n, 1, d2)), (B, n, T, d2))
    h1 = concat([x, e_time, e_node], axis=-1)
    if single:
        h1 = h1.reshape(h1.shape[1:])
    return h1
