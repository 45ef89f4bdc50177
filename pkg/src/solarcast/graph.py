"""Spatio-temporal graph learner.

Learned directed adjacency, gated causal temporal convolution, multi-hop
message passing along both edge directions, per-layer linear aggregation
and layer normalization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autograd import (
    Tensor,
    ShapeError,
    conv1d_causal,
    layer_norm,
    matmul,
    sigmoid,
    tanh,
)


def glorot(rng: np.random.Generator, *shape: int) -> Tensor:
    fan_in, fan_out = (shape[-2], shape[-1]) if len(shape) >= 2 else (shape[0], shape[0])
    if len(shape) == 3:
        fan_in *= shape[0]
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=shape), requires_grad=True)


@dataclass
class AdjacencyFactors:
    E1: Tensor  # (n, e)
    E2: Tensor  # (n, e)
    W1: Tensor  # (e, e)
    W2: Tensor  # (e, e)

    @classmethod
    def init(cls, n_nodes: int, dim: int, rng: np.random.Generator):
        def emb():
            w = rng.uniform(-0.5, 0.5, size=(n_nodes, dim)) / np.sqrt(dim)
            return Tensor(w, requires_grad=True)

        return cls(emb(), emb(), glorot(rng, dim, dim), glorot(rng, dim, dim))


@dataclass
class StglParams:
    Wf: Tensor  # (k, d', c)
    Wg: Tensor  # (k, d', c)
    layer_weights: list[Tensor]  # K+1 matrices (c, c_out)
    ln_gain: Tensor
    ln_bias: Tensor
    beta: float = 0.05

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must lie in [0, 1], got {self.beta}")

    @classmethod
    def init(cls, d_in, channels, c_out, depth, kernel, beta, rng):
        return cls(
            Wf=glorot(rng, kernel, d_in, channels),
            Wg=glorot(rng, kernel, d_in, channels),
            layer_weights=[glorot(rng, channels, c_out) for _ in range(depth + 1)],
            ln_gain=Tensor(np.ones(c_out), requires_grad=True),
            ln_bias=Tensor(np.zeros(c_out), requires_grad=True),
            beta=beta,
        )


def learn_adjacency(f: AdjacencyFactors) -> Tensor:
    """A = sigmoid(M1 M2^T - M2 M1^T) with M_i = tanh(E_i W_i)."""
    m1 = tanh(matmul(f.E1, f.W1))
    m2 = tanh(matmul(f.E2, f.W2))
    return sigmoid(matmul(m1, m2.T) - matmul(m2, m1.T))


def normalize_adjacency(A: Tensor) -> Tensor:
    """Row-normalize A + I by its degree 1 + sum_j A_ij."""
    n = A.shape[0]
    degree = A.sum(axis=1, keepdims=True) + 1.0
    return (A + np.eye(n, dtype=A.dtype)) * degree ** -1.0


def tgcl(h1: Tensor, Wf: Tensor, Wg: Tensor) -> Tensor:
    """tanh(h1 * Wf) ⊙ sigmoid(h1 * Wg), causal convolution over time.

    h1 is (..., T, d'); the kernel is (k, d', c).
    """
    return tanh(conv1d_causal(h1, Wf)) * sigmoid(conv1d_causal(h1, Wg))


def smp_propagate(h2: Tensor, h_prev: Tensor, A_norm: Tensor, beta: float) -> Tensor:
    """beta * h2 + (1 - beta) * A_norm applied over the node axis.

    Inputs are (B, n, ...) with nodes on axis 1.
    """
    if h2.shape != h_prev.shape:
        raise ShapeError("smp_propagate", h2.shape, h_prev.shape)
    n = A_norm.shape[0]
    if h_prev.ndim < 2 or h_prev.shape[1] != n:
        raise ShapeError("smp_propagate", h_prev.shape, A_norm.shape, detail="node axis")
    shape = h_prev.shape
    flat = h_prev.reshape((shape[0], n, -1))
    mixed = matmul(A_norm, flat).reshape(shape)
    return h2 * beta + mixed * (1.0 - beta)


def stgl_forward(h1: Tensor, factors: AdjacencyFactors, params: StglParams) -> Tensor:
    """Graph pathway: (B, n, T, d') -> (B, n, c_out)."""
    A = learn_adjacency(factors)
    fwd = normalize_adjacency(A)
    bwd = normalize_adjacency(A.T)
    h2 = tgcl(h1, params.Wf, params.Wg)
    # propagation never mixes time steps, so only the final step is carried
    h2 = h2[:, :, -1, :]
    layers = [h2]
    hk = h2
    for _ in range(len(params.layer_weights) - 1):
        hk = smp_propagate(h2, hk, fwd, params.beta) + smp_propagate(h2, hk, bwd, params.beta)
        layers.append(hk)
    agg = matmul(layers[0], params.layer_weights[0])
    for hi, wi in zip(layers[1:], params.layer_weights[1:]):
        agg = agg + matmul(hi, wi)
    return layer_norm(agg, params.ln_gain, params.ln_bias, eps=1e-5)
