"""MSE objective, AdamW, polynomial learning-rate decay and early stopping."""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .autograd import Tensor, backward, no_grad
from .data import NormStats, WindowedDataset
from .model import ModelConfig, SolarCastParams, model_forward

CHECKPOINT_VERSION = 1


class DivergenceError(FloatingPointError):
    """Loss or gradients became non-finite; carries the history so far."""

    def __init__(self, message: str, history: "TrainHistory | None" = None):
        super().__init__(message)
        self.history = history


@dataclass(frozen=True)
class TrainConfig:
    lr_start: float = 1e-3
    lr_end: float = 3e-4
    poly_power: float = 0.5
    max_epochs: int = 100
    patience: int = 20
    batch_size: int = 32
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    min_delta: float = 1e-6
    seed: int = 0

    def validate(self) -> "TrainConfig":
        if self.lr_end > self.lr_start:
            raise ValueError("lr_end must not exceed lr_start")
        if self.patience < 1 or self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("patience, batch_size and max_epochs must be >= 1")
        return self


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    lr: list[float] = field(default_factory=list)
    wall_time: list[float] = field(default_factory=list)
    best_epoch: int = 0
    stop_reason: str = ""

    @property
    def best_val(self) -> float:
        return min(self.val_loss)

    def comparable(self) -> dict:
        """Everything except wall time, which no re-run reproduces."""
        d = asdict(self)
        d.pop("wall_time")
        return d

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


def mse_loss(pred: Tensor, target) -> Tensor:
    target = np.asarray(target, dtype=pred.dtype)
    if pred.size == 0 or target.size == 0:
        raise ValueError("mse_loss: empty batch")
    if pred.shape != target.shape:
        raise ValueError(f"mse_loss: shapes {pred.shape} and {target.shape} differ")
    diff = pred - target
    return (diff * diff).mean()


def poly_lr(epoch: int, cfg: TrainConfig) -> float:
    """lr_end + (lr_start - lr_end) * (1 - epoch / max_epochs) ** power."""
    frac = min(max(epoch / cfg.max_epochs, 0.0), 1.0)
    return cfg.lr_end + (cfg.lr_start - cfg.lr_end) * (1.0 - frac) ** cfg.poly_power


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adamw_step(params: dict[str, Tensor], grads: dict[str, np.ndarray | None],
               state: AdamState, lr: float, cfg: TrainConfig) -> None:
    """Decoupled weight decay followed by a bias-corrected Adam update, in place."""
    for name, g in grads.items():
        if g is not None and not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient for {name}")
    state.step += 1
    t = state.step
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if cfg.weight_decay:
            p.data -= lr * cfg.weight_decay * p.data
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)


def predict(params: SolarCastParams, ds: WindowedDataset, cfg: ModelConfig,
            batch_size: int = 256, return_alpha: bool = False):
    """Normalized predictions (and alpha when both pathways are active)."""
    preds, alphas = [], []
    with no_grad():
        for a in range(0, len(ds), batch_size):
            b = a + batch_size
            y, alpha = model_forward(params, ds.X[a:b].astype(cfg.dtype), ds.start_slot[a:b],
                                     cfg, return_alpha=True)
            preds.append(y.data.astype(np.float64))
            if alpha is not None:
                alphas.append(alpha.data.reshape(-1).astype(np.float64))
    y = np.concatenate(preds) if preds else np.zeros(0)
    if return_alpha:
        return y, (np.concatenate(alphas) if alphas else None)
    return y


def dataset_loss(params, ds, cfg) -> float:
    pred = predict(params, ds, cfg)
    return float(np.mean((pred - ds.y) ** 2))


def train(params: SolarCastParams, train_ds: WindowedDataset, val_ds: WindowedDataset,
          model_cfg: ModelConfig, cfg: TrainConfig, log=None):
    """Fit ``params`` in place; returns ``(best_params, history)``."""
    cfg.validate()
    if len(train_ds) == 0 or len(val_ds) == 0:
        raise ValueError("training and validation sets must be non-empty")
    rng = np.random.default_rng(cfg.seed)
    named = params.named()
    state = AdamState()
    history = TrainHistory()
    best = params.arrays()
    best_val = float("inf")
    stale = 0
    X = train_ds.X.astype(model_cfg.dtype)
    for epoch in range(1, cfg.max_epochs + 1):
        t0 = time.perf_counter()
        lr = poly_lr(epoch - 1, cfg)
        order = rng.permutation(len(train_ds))
        total = 0.0
        for a in range(0, len(order), cfg.batch_size):
            idx = order[a : a + cfg.batch_size]
            params.zero_grad()
            pred = model_forward(params, X[idx], train_ds.start_slot[idx], model_cfg)
            loss = mse_loss(pred, train_ds.y[idx])
            value = float(loss.data)
            if not np.isfinite(value):
                history.stop_reason = "diverged"
                raise DivergenceError(f"loss became {value} in epoch {epoch}", history)
            backward(loss)
            try:
                adamw_step(named, {k: t.grad for k, t in named.items()}, state, lr, cfg)
            except DivergenceError as exc:
                history.stop_reason = "diverged"
                exc.history = history
                raise
            total += value * len(idx)
        val = dataset_loss(params, val_ds, model_cfg)
        history.train_loss.append(total / len(order))
        history.val_loss.append(val)
        history.lr.append(lr)
        history.wall_time.append(time.perf_counter() - t0)
        if log is not None:
            log(f"epoch {epoch:3d} lr={lr:.2e} train={history.train_loss[-1]:.5f} val={val:.5f}")
        if not np.isfinite(val):
            history.stop_reason = "diverged"
            raise DivergenceError(f"validation loss became {val} in epoch {epoch}", history)
        if val < best_val - cfg.min_delta:
            best_val = val
            best = params.arrays()
            history.best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                history.stop_reason = "early_stop"
                break
    else:
        history.stop_reason = "max_epochs"
    params.load_arrays(best)
    return params, history


# ---------------------------------------------------------------- checkpoints


def save_checkpoint(path, params: SolarCastParams, model_cfg: ModelConfig,
                    stats: NormStats | None = None, extra: dict | None = None) -> None:
    arrays = {f"param/{k}": v for k, v in params.arrays().items()}
    meta = {
        "version": CHECKPOINT_VERSION,
        "config": model_cfg.to_dict(),
        "config_hash": model_cfg.hash(),
        "ablation": sorted(params.ablation),
        "shapes": {k: list(v.shape) for k, v in params.named().items()},
        "extra": extra or {},
    }
    if stats is not None:
        arrays["stats/mean"] = stats.mean
        arrays["stats/std"] = stats.std
    arrays["meta"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    with Path(path).open("wb") as fh:
        np.savez(fh, **arrays)


def read_checkpoint_meta(path) -> dict:
    try:
        with np.load(Path(path)) as z:
            return json.loads(bytes(z["meta"]).decode())
    except (OSError, KeyError, ValueError) as exc:
        raise ValueError(f"cannot read checkpoint {path}: {exc}") from None


def load_checkpoint(path, expected_hash: str | None = None):
    """Returns ``(params, model_cfg, stats, meta)``; verifies version, hash and shapes."""
    from .model import init_params

    with np.load(Path(path)) as z:
        meta = json.loads(bytes(z["meta"]).decode())
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
        model_cfg = ModelConfig(**meta["config"])
        if model_cfg.hash() != meta["config_hash"]:
            raise ValueError("checkpoint config does not match its recorded hash")
        if expected_hash is not None and expected_hash != meta["config_hash"]:
            raise ValueError(f"checkpoint config hash {meta['config_hash']} != expected {expected_hash}")
        arrays = {k[len("param/"):]: z[k] for k in z.files if k.startswith("param/")}
        stats = None
        if "stats/mean" in z.files:
            stats = NormStats(z["stats/mean"], z["stats/std"])
    params = init_params(model_cfg, meta["ablation"])
    for k, shape in meta["shapes"].items():
        if list(arrays[k].shape) != shape:
            raise ValueError(f"{k}: stored shape {arrays[k].shape} != recorded {shape}")
    params.load_arrays(arrays)
    return params, model_cfg, stats, meta
