"""Full forecaster: embedding, the two pathways, and alpha-weighted fusion."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from typing import Iterable

import numpy as np

from .autograd import Tensor, matmul, precision, relu, sigmoid
from .embedding import EmbeddingTables, embed_inputs, steps_per_day
from .graph import AdjacencyFactors, StglParams, glorot, stgl_forward
from .transformer import SegmentConfig, SgtParams, extract_segments, sgt_forward

ABLATIONS = ("no_emb", "no_stgl", "no_sgt")


def parse_ablation(flags: Iterable[str] | str | None) -> frozenset[str]:
    if flags is None:
        return frozenset()
    if isinstance(flags, str):
        flags = [f for f in flags.replace(",", " ").split() if f]
    out = frozenset(flags)
    unknown = out - set(ABLATIONS)
    if unknown:
        raise ValueError(f"unknown ablation flag(s) {sorted(unknown)}; choose from {ABLATIONS}")
    if {"no_stgl", "no_sgt"} <= out:
        raise ValueError("no_stgl and no_sgt together leave no pathway")
    return out


@dataclass(frozen=True)
class ModelConfig:
    n_nodes: int = 8
    d_in: int = 1
    T: int = 24
    h: int = 12
    sampling_period: int = 600
    d_time: int = 10
    d_node: int = 10
    adj_dim: int = 16
    channels: int = 32
    c_out: int = 32
    kernel: int = 3
    depth: int = 3
    beta: float = 0.05
    q: int = 6
    l: int = 6
    m: int = 9
    r: int = 3
    k_top: int = 5
    heads: int = 4
    d_model: int = 32
    alpha_hidden: int = 16
    dtype: str = "float32"

    @property
    def steps_per_day(self) -> int:
        return steps_per_day(self.sampling_period)

    @property
    def segments(self) -> SegmentConfig:
        return SegmentConfig(self.q, self.l, self.m, self.r, self.k_top, self.heads, self.d_model)

    def feature_width(self, ablation=frozenset()) -> int:
        if "no_emb" in ablation:
            return self.d_in
        return self.d_in + self.d_time + self.d_node

    def validate(self) -> "ModelConfig":
        if self.T < self.kernel:
            raise ValueError(f"T={self.T} shorter than the conv kernel {self.kernel}")
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must lie in [0, 1], got {self.beta}")
        if self.h < 1:
            raise ValueError("horizon h must be >= 1")
        self.segments.validate(self.T, self.n_nodes)
        steps_per_day(self.sampling_period)
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


@dataclass
class FusionParams:
    W0: Tensor | None  # (q*d', hidden)
    W1_alpha: Tensor | None  # (hidden, 1)
    graph_proj: Tensor | None  # (c_out, d_model)
    readout: Tensor  # (d_model, 1)
    readout_bias: Tensor  # (1,)


@dataclass
class SolarCastParams:
    fusion: FusionParams
    emb: EmbeddingTables | None = None
    adj: AdjacencyFactors | None = None
    stgl: StglParams | None = None
    sgt: SgtParams | None = None
    ablation: frozenset = field(default_factory=frozenset)
    cfg: ModelConfig | None = None

    def named(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        if self.emb is not None:
            out["emb.time"] = self.emb.time
            out["emb.node"] = self.emb.node
        if self.adj is not None:
            for k in ("E1", "E2", "W1", "W2"):
                out[f"adj.{k}"] = getattr(self.adj, k)
        if self.stgl is not None:
            out["stgl.Wf"] = self.stgl.Wf
            out["stgl.Wg"] = self.stgl.Wg
            for i, w in enumerate(self.stgl.layer_weights):
                out[f"stgl.layer{i + 2}"] = w
            out["stgl.ln_gain"] = self.stgl.ln_gain
            out["stgl.ln_bias"] = self.stgl.ln_bias
        if self.sgt is not None:
            for f in fields(self.sgt):
                out[f"sgt.{f.name}"] = getattr(self.sgt, f.name)
        for f in fields(self.fusion):
            t = getattr(self.fusion, f.name)
            if t is not None:
                out[f"fusion.{f.name}"] = t
        return out

    def count(self) -> int:
        return sum(t.size for t in self.named().values())

    def zero_grad(self) -> None:
        for t in self.named().values():
            t.grad = None

    def copy(self) -> "SolarCastParams":
        clone = init_params(self.cfg, self.ablation, seed=0)
        clone.load_arrays({k: v.data for k, v in self.named().items()})
        return clone

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.named().items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        own = self.named()
        if set(own) != set(arrays):
            missing = sorted(set(own) - set(arrays))
            extra = sorted(set(arrays) - set(own))
            raise ValueError(f"parameter names differ: missing {missing}, unexpected {extra}")
        for k, t in own.items():
            if t.shape != arrays[k].shape:
                raise ValueError(f"{k}: shape {arrays[k].shape} does not match {t.shape}")
            t.data[...] = arrays[k]


def init_params(cfg: ModelConfig, ablation=frozenset(), seed: int = 0) -> SolarCastParams:
    """Fresh parameters for ``cfg``; ablated components are not allocated."""
    ablation = parse_ablation(ablation)
    cfg.validate()
    rng = np.random.default_rng(seed)
    d = cfg.feature_width(ablation)
    spd = cfg.steps_per_day
    with precision(cfg.dtype):
        emb = adj = stgl = sgt = None
        if "no_emb" not in ablation:
            emb = EmbeddingTables.init(cfg.n_nodes, spd, cfg.d_time, cfg.d_node, rng)
        if "no_stgl" not in ablation:
            adj = AdjacencyFactors.init(cfg.n_nodes, cfg.adj_dim, rng)
            stgl = StglParams.init(d, cfg.channels, cfg.c_out, cfg.depth, cfg.kernel, cfg.beta, rng)
        if "no_sgt" not in ablation:
            sgt = SgtParams.init(cfg.segments, d, cfg.n_nodes, spd, rng)
        both = not ablation & {"no_stgl", "no_sgt"}
        fusion = FusionParams(
            W0=glorot(rng, cfg.q * d, cfg.alpha_hidden) if both else None,
            W1_alpha=glorot(rng, cfg.alpha_hidden, 1) if both else None,
            graph_proj=glorot(rng, cfg.c_out, cfg.d_model) if stgl is not None else None,
            readout=glorot(rng, cfg.d_model, 1),
            readout_bias=Tensor(np.zeros(1), requires_grad=True),
        )
    return SolarCastParams(fusion, emb, adj, stgl, sgt, ablation, cfg)


def compute_alpha(query_patch: Tensor, fusion: FusionParams) -> Tensor:
    """Per-sample weight of the transformer pathway, shape (B, 1)."""
    return sigmoid(matmul(relu(matmul(query_patch, fusion.W0)), fusion.W1_alpha))


def readout(h_out: Tensor, fusion: FusionParams) -> Tensor:
    return (matmul(h_out, fusion.readout) + fusion.readout_bias).reshape((h_out.shape[0],))


def fuse_and_readout(h_tr: Tensor, h_gr: Tensor, alpha, fusion: FusionParams) -> Tensor:
    """y = readout(alpha * h_tr + (1 - alpha) * proj(h_gr[target])), one value per sample."""
    graph = matmul(h_gr[:, 0, :], fusion.graph_proj)
    h_out = h_tr * alpha + graph * (1.0 - alpha)
    return readout(h_out, fusion)


def model_forward(params: SolarCastParams, window, start_slot, cfg: ModelConfig,
                  ablation=None, alpha_override: float | None = None,
                  return_alpha: bool = False):
    """Forecast the normalized target value ``h`` steps after each window.

    ``window`` is (B, n, T, d) with ``start_slot`` (B,), or a single
    (n, T, d) window with an integer slot (returns a 0-d tensor).
    ``alpha_override`` pins the fusion weight, bypassing the alpha MLP.
    """
    ablation = params.ablation if ablation is None else parse_ablation(ablation)
    x = window if isinstance(window, Tensor) else Tensor(window, dtype=cfg.dtype)
    single = x.ndim == 3
    if single:
        x = x.reshape((1,) + x.shape)
        start_slot = np.atleast_1d(start_slot)
    if "no_emb" in ablation:
        h1 = x
    else:
        h1 = embed_inputs(x, start_slot, params.emb)
    seg = cfg.segments
    alpha = None
    if "no_stgl" in ablation:
        y = readout(sgt_forward(h1, start_slot, params.sgt, seg), params.fusion)
    elif "no_sgt" in ablation:
        h_gr = stgl_forward(h1, params.adj, params.stgl)
        y = readout(matmul(h_gr[:, 0, :], params.fusion.graph_proj), params.fusion)
    else:
        h_gr = stgl_forward(h1, params.adj, params.stgl)
        segments = extract_segments(h1, seg)
        h_tr = sgt_forward(h1, start_slot, params.sgt, seg, segments=segments)
        if alpha_override is None:
            alpha = compute_alpha(segments[0], params.fusion)
        else:
            alpha = float(alpha_override)
        y = fuse_and_readout(h_tr, h_gr, alpha, params.fusion)
    if single:
        y = y.reshape(())
    if return_alpha:
        return y, alpha
    return y
