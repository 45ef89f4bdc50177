"""Segment gated transformer.

A query patch from the target node's most recent steps attends to lagged
support patches from every node through Top-K sparse multi-head attention;
a gated linear unit filters the attention output before the residual.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autograd import (
    Tensor,
    ShapeError,
    layer_norm,
    matmul,
    sigmoid,
    softmax,
    take,
    topk_mask,
)
from .graph import glorot


@dataclass(frozen=True)
class SegmentConfig:
    q: int = 6
    l: int = 6
    m: int = 9
    r: int = 3
    k_top: int = 5
    heads: int = 4
    d_model: int = 32

    def min_length(self) -> int:
        return max(self.q, self.r + self.m - 1 + self.l)

    def validate(self, T: int, n_nodes: int) -> None:
        if min(self.q, self.l, self.m, self.k_top, self.heads, self.d_model) < 1 or self.r < 0:
            raise ValueError(f"segment sizes must be positive: {self}")
        if T < self.min_length():
            raise ValueError(
                f"window of {T} steps too short for the segment extractor; "
                f"need T >= {self.min_length()}"
            )
        if self.k_top > self.m * n_nodes:
            raise ValueError(f"k_top={self.k_top} exceeds the {self.m * n_nodes} support tokens")
        if self.d_model % self.heads:
            raise ValueError(f"d_model={self.d_model} not divisible by heads={self.heads}")


@dataclass
class SgtParams:
    query_proj: Tensor  # (q*d', d_model)
    query_bias: Tensor
    support_proj: Tensor  # (l*d', d_model)
    support_bias: Tensor
    time_table: Tensor  # (steps_per_day, d_model)
    node_table: Tensor  # (n, d_model)
    Wq: Tensor
    Wk: Tensor
    Wv: Tensor
    Wo: Tensor
    bo: Tensor
    Wa: Tensor
    ba: Tensor
    Wb: Tensor
    bb: Tensor
    ln_gain: Tensor
    ln_bias: Tensor

    @classmethod
    def init(cls, cfg: SegmentConfig, d_in: int, n_nodes: int, spd: int, rng):
        dm = cfg.d_model
        zeros = lambda: Tensor(np.zeros(dm), requires_grad=True)

        def table(rows):
            return Tensor(rng.uniform(-0.5, 0.5, size=(rows, dm)) / np.sqrt(dm), requires_grad=True)

        return cls(
            query_proj=glorot(rng, cfg.q * d_in, dm),
            query_bias=zeros(),
            support_proj=glorot(rng, cfg.l * d_in, dm),
            support_bias=zeros(),
            time_table=table(spd),
            node_table=table(n_nodes),
            Wq=glorot(rng, dm, dm),
            Wk=glorot(rng, dm, dm),
            Wv=glorot(rng, dm, dm),
            Wo=glorot(rng, dm, dm),
            bo=zeros(),
            Wa=glorot(rng, dm, dm),
            ba=zeros(),
            Wb=glorot(rng, dm, dm),
            bb=zeros(),
            ln_gain=Tensor(np.ones(dm), requires_grad=True),
            ln_bias=zeros(),
        )


@dataclass(frozen=True)
class SupportMeta:
    node: np.ndarray  # (M,) node index of each support
    end: np.ndarray  # (M,) exclusive end step within the window
    query_end: int


def support_layout(T: int, n_nodes: int, cfg: SegmentConfig) -> SupportMeta:
    """Support (i, p) covers steps [T-r-p-l, T-r-p); node-major, p ascending."""
    p = np.arange(cfg.m)
    ends = (T - cfg.r - p).astype(np.int64)
    node = np.repeat(np.arange(n_nodes), cfg.m)
    return SupportMeta(node=node, end=np.tile(ends, n_nodes), query_end=T)


def extract_segments(h1: Tensor, cfg: SegmentConfig):
    """Split (B, n, T, d') into the query patch and support patches.

    Returns ``(query (B, q*d'), supports (B, m*n, l*d'), meta)``.
    """
    B, n, T, d = h1.shape
    if T < cfg.min_length():
        raise ShapeError("extract_segments", h1.shape,
                         detail=f"need T >= {cfg.min_length()}")
    query = h1[:, 0, T - cfg.q :, :].reshape((B, cfg.q * d))
    meta = support_layout(T, n, cfg)
    ends = meta.end[: cfg.m]
    steps = ends[:, None] - cfg.l + np.arange(cfg.l)[None, :]  # (m, l)
    patches = take(h1, steps, axis=2)  # (B, n, m, l, d)
    supports = patches.reshape((B, n * cfg.m, cfg.l * d))
    return query, supports, meta


def tokenize(query: Tensor, supports: Tensor, meta: SupportMeta, start_slot,
             params: SgtParams):
    """Project patches to d_model and add the time and node embedding of each.

    A patch's time embedding is the slot of its final step.
    """
    spd = params.time_table.shape[0]
    start = np.atleast_1d(np.asarray(start_slot, dtype=np.int64))
    q_slot = (start + meta.query_end - 1) % spd  # (B,)
    s_slot = (start[:, None] + meta.end[None, :] - 1) % spd  # (B, M)
    q_tok = matmul(query, params.query_proj) + params.query_bias
    q_tok = q_tok + take(params.time_table, q_slot) + params.node_table[0]
    s_tok = matmul(supports, params.support_proj) + params.support_bias
    s_tok = s_tok + take(params.time_table, s_slot) + take(params.node_table, meta.node)
    return q_tok, s_tok


def topk_softmax(scores: Tensor, k_top: int) -> Tensor:
    """Softmax restricted to the k_top largest scores of each row."""
    return softmax(scores, mask=topk_mask(scores, k_top))


def topk_attention(q_tok: Tensor, s_tok: Tensor, params: SgtParams, cfg: SegmentConfig):
    """Multi-head attention of one query token over support tokens.

    Returns ``(context (B, d_model), weights (B, heads, M))``.
    """
    B, M, dm = s_tok.shape
    if cfg.k_top > M:
        raise ShapeError("topk_attention", s_tok.shape,
                         detail=f"k_top={cfg.k_top} exceeds {M} support tokens")
    H = cfg.heads
    dh = dm // H
    Q = matmul(q_tok, params.Wq).reshape((B, H, 1, dh))
    K = matmul(s_tok, params.Wk).reshape((B, M, H, dh)).transpose(0, 2, 3, 1)
    V = matmul(s_tok, params.Wv).reshape((B, M, H, dh)).transpose(0, 2, 1, 3)
    scores = matmul(Q, K).reshape((B, H, M)) * (1.0 / np.sqrt(dh))
    weights = topk_softmax(scores, cfg.k_top)
    ctx = matmul(weights.reshape((B, H, 1, M)), V).reshape((B, dm))
    return matmul(ctx, params.Wo) + params.bo, weights


def gated_residual(q_tok: Tensor, context: Tensor, params: SgtParams) -> Tensor:
    gated = (matmul(context, params.Wa) + params.ba) * sigmoid(matmul(context, params.Wb) + params.bb)
    return layer_norm(q_tok + gated, params.ln_gain, params.ln_bias, eps=1e-5)


def sgt_forward(h1: Tensor, start_slot, params: SgtParams, cfg: SegmentConfig,
                return_weights: bool = False, segments=None):
    """Transformer pathway: (B, n, T, d') -> (B, d_model)."""
    query, supports, meta = segments if segments is not None else extract_segments(h1, cfg)
    q_tok, s_tok = tokenize(query, supports, meta, start_slot, params)
    ctx, weights = topk_attention(q_tok, s_tok, params, cfg)
    out = gated_residual(q_tok, ctx, params)
    return (out, weights) if return_weights else out
