"""RMSE, RSE and CORR, the persistence baseline, and evaluation reports."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .data import WindowedDataset


def _pair(y_hat, y):
    y_hat = np.asarray(y_hat, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if y.size == 0 or y_hat.size != y.size:
        raise ValueError(f"need equal non-empty vectors, got {y_hat.size} and {y.size}")
    return y_hat, y


def rmse(y_hat, y) -> float:
    y_hat, y = _pair(y_hat, y)
    return float(np.sqrt(np.mean((y_hat - y) ** 2)))


def rse(y_hat, y) -> float:
    """sqrt(sum (y_hat - y)^2) / sqrt(sum (y - mean y)^2)."""
    y_hat, y = _pair(y_hat, y)
    denom = np.sum((y - y.mean()) ** 2)
    if denom == 0:
        raise ValueError("constant target: RSE undefined")
    return float(np.sqrt(np.sum((y_hat - y) ** 2) / denom))


def corr(y_hat, y) -> float:
    y_hat, y = _pair(y_hat, y)
    a = y_hat - y_hat.mean()
    b = y - y.mean()
    na, nb = np.sqrt(np.sum(a * a)), np.sqrt(np.sum(b * b))
    if na == 0 or nb == 0:
        raise ValueError("constant input: correlation undefined")
    return float(np.clip(np.sum(a * b) / (na * nb), -1.0, 1.0))


def persistence_forecast(window, h: int | None = None):
    """Last observed target-node value, carried ``h`` steps ahead unchanged.

    Accepts one (n, T, d) window or a batch (B, n, T, d).
    """
    w = np.asarray(window)
    if w.size == 0:
        raise ValueError("empty window")
    if w.ndim == 3:
        return float(w[0, -1, 0])
    return w[:, 0, -1, 0]


@dataclass
class EvalReport:
    split: str
    count: int
    rmse: float
    rse: float
    corr: float
    baseline: dict[str, float] = field(default_factory=dict)
    ablation: str = "full"
    config_hash: str = ""

    def rows(self):
        yield "rmse", self.rmse, "model"
        yield "rse", self.rse, "model"
        yield "corr", self.corr, "model"
        for k, v in self.baseline.items():
            yield k, v, "persistence"

    def to_text(self) -> str:
        lines = [
            f"split={self.split}",
            f"ablation={self.ablation}",
            f"config_hash={self.config_hash}",
            f"count={self.count}",
            f"rmse={self.rmse!r}",
            f"rse={self.rse!r}",
            f"corr={self.corr!r}",
        ]
        lines += [f"baseline_{k}={v!r}" for k, v in self.baseline.items()]
        return "\n".join(lines) + "\n"


def write_report_csv(reports, path) -> None:
    """Table with columns metric,value,split,ablation,source."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "value", "split", "ablation", "source"])
        for rep in reports:
            for metric, value, source in rep.rows():
                w.writerow([metric, repr(value), rep.split, rep.ablation, source])


def evaluate(predict_fn: Callable[[WindowedDataset], np.ndarray] | str, ds: WindowedDataset,
             split: str = "test", baseline: bool = True, ablation: str = "full",
             config_hash: str = "", physical: bool = True) -> EvalReport:
    """Score normalized predictions against the dataset targets.

    ``predict_fn`` maps the dataset to normalized predictions, or is the
    string ``"persistence"``. Metrics are in W/m^2 unless ``physical`` is off.
    """
    if len(ds) == 0:
        raise ValueError(f"{split}: no examples to evaluate")
    if isinstance(predict_fn, str):
        if predict_fn != "persistence":
            raise ValueError(f"unknown baseline {predict_fn!r}")
        pred = persistence_forecast(ds.X, ds.h)
    else:
        pred = np.asarray(predict_fn(ds), dtype=np.float64)
    conv = ds.stats.denormalize_target if physical else (lambda v: np.asarray(v))
    y_hat, y = conv(pred), conv(ds.y)
    base = {}
    if baseline:
        p = conv(persistence_forecast(ds.X, ds.h))
        base = {"rmse": rmse(p, y), "rse": rse(p, y), "corr": corr(p, y)}
    return EvalReport(split, len(ds), rmse(y_hat, y), rse(y_hat, y), corr(y_hat, y), base,
                      ablation, config_hash)
