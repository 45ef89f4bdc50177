"""Panels of station GHI: synthetic generation, CSV I/O, splitting, windowing.

The synthetic generator realizes three confounder paths. A per-node
clear-sky curve driven by time of day is the observable one. A mean-one AR(1)
factor shared by all nodes stands in for regional weather. Cloud events
shade the auxiliary stations first and the target ``delta`` steps later.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .embedding import SECONDS_PER_DAY, steps_per_day


class DataError(ValueError):
    """Malformed or unusable input data."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass
class TimeSeriesPanel:
    node_ids: list[str]
    timestamps: np.ndarray  # (L,) int64 seconds since epoch, UTC
    values: np.ndarray  # (n, L) W/m^2
    sampling_period: int = 600
    missing: np.ndarray | None = None  # (n, L) True where no usable reading
    filled: np.ndarray | None = None  # (n, L) True where forward-filled

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=np.float64)
        n, L = self.values.shape
        if len(self.node_ids) != n or self.timestamps.shape != (L,):
            raise DataError(f"panel shape mismatch: {n} ids, values {self.values.shape}, "
                            f"{self.timestamps.shape[0]} timestamps")
        if L > 1 and np.any(np.diff(self.timestamps) != self.sampling_period):
            raise DataError("timestamps are not uniformly spaced at the sampling period")
        if self.missing is None:
            self.missing = np.zeros((n, L), dtype=bool)
        if self.filled is None:
            self.filled = np.zeros((n, L), dtype=bool)
        ok = ~self.missing
        if not np.all(np.isfinite(self.values[ok])) or np.any(self.values[ok] < 0):
            raise DataError("GHI values must be finite and non-negative")

    @property
    def n_nodes(self) -> int:
        return self.values.shape[0]

    def __len__(self) -> int:
        return self.values.shape[1]

    def slots(self) -> np.ndarray:
        spd = steps_per_day(self.sampling_period)
        return (self.timestamps % SECONDS_PER_DAY) // self.sampling_period % spd

    def slice(self, start: int, stop: int) -> "TimeSeriesPanel":
        return TimeSeriesPanel(
            list(self.node_ids), self.timestamps[start:stop], self.values[:, start:stop],
            self.sampling_period, self.missing[:, start:stop], self.filled[:, start:stop],
        )


# ---------------------------------------------------------------- synthetic


@dataclass(frozen=True)
class SyntheticConfig:
    n_nodes: int = 8
    days: int = 60
    sampling_period: int = 600
    start: int = 1704067200  # 2024-01-01T00:00:00Z
    amp_low: float = 750.0
    amp_high: float = 1000.0
    sunrise: str = "06:00"
    sunset: str = "18:00"
    latent_ar: float = 0.995
    latent_noise: float = 0.01
    clouds_per_day: float = 2.0
    cloud_depth: float = 0.8
    cloud_duration: int = 24
    delta: int = 3
    noise: float = 5.0
    seed: int = 0

    @property
    def length(self) -> int:
        return self.days * steps_per_day(self.sampling_period)

    def daylight_slots(self) -> tuple[int, int]:
        """Half-open slot range where the clear-sky curve is positive."""
        rise = _clock_slot(self.sunrise, self.sampling_period)
        return rise + 1, _clock_slot(self.sunset, self.sampling_period)

    def validate(self) -> "SyntheticConfig":
        if self.delta < 1:
            raise ValueError(f"delta must be >= 1, got {self.delta}")
        if not 0.0 < self.cloud_depth <= 1.0:
            raise ValueError(f"cloud_depth must lie in (0, 1], got {self.cloud_depth}")
        if min(self.amp_low, self.latent_noise, self.noise, self.clouds_per_day) < 0:
            raise ValueError("scales must be non-negative")
        if self.amp_high < self.amp_low:
            raise ValueError("amp_high must be >= amp_low")
        if self.n_nodes < 2:
            raise ValueError("need a target and at least one auxiliary node")
        if self.cloud_duration < 1:
            raise ValueError("cloud_duration must be >= 1")
        if self.length < self.cloud_duration + self.delta + 1:
            raise ValueError(
                f"series of {self.length} steps too short for a {self.cloud_duration}-step "
                f"event lagged by {self.delta}"
            )
        rise, set_ = self.daylight_slots()
        if not rise < set_:
            raise ValueError("sunrise must precede sunset")
        return self


def _clock_slot(hhmm: str, sampling_period: int) -> int:
    h, m = (int(x) for x in hhmm.split(":"))
    seconds = h * 3600 + m * 60
    if seconds % sampling_period:
        raise ValueError(f"{hhmm} is not on the {sampling_period}s grid")
    return seconds // sampling_period


def clearsky(slots: np.ndarray, sunrise_slot: int, sunset_slot: int) -> np.ndarray:
    """Half-sine between sunrise and sunset, zero at night."""
    phase = (np.asarray(slots, dtype=np.float64) - sunrise_slot) / (sunset_slot - sunrise_slot)
    return np.where((phase > 0) & (phase < 1), np.sin(np.pi * np.clip(phase, 0, 1)), 0.0)


@dataclass
class GroundTruth:
    latent: np.ndarray  # (L,)
    cloud: np.ndarray  # (n, L) multiplicative shading factor
    events: np.ndarray  # (E,) onset step at the auxiliary nodes


def generate_synthetic(cfg: SyntheticConfig) -> tuple[TimeSeriesPanel, GroundTruth]:
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    n, L = cfg.n_nodes, cfg.length
    timestamps = cfg.start + cfg.sampling_period * np.arange(L, dtype=np.int64)
    rise = _clock_slot(cfg.sunrise, cfg.sampling_period)
    set_ = _clock_slot(cfg.sunset, cfg.sampling_period)
    slots = (timestamps % SECONDS_PER_DAY) // cfg.sampling_period
    sky = clearsky(slots, rise, set_)

    amp = rng.uniform(cfg.amp_low, cfg.amp_high, size=n)

    phi, sigma = cfg.latent_ar, cfg.latent_noise
    shocks = rng.normal(0.0, sigma, size=L)
    z = np.empty(L)
    z[0] = shocks[0] / math.sqrt(max(1.0 - phi * phi, 1e-12))
    for t in range(1, L):
        z[t] = phi * z[t - 1] + shocks[t]
    latent = np.maximum(1.0 + z, 0.0)

    n_events = int(round(cfg.clouds_per_day * cfg.days))
    last_onset = L - cfg.cloud_duration - cfg.delta
    onsets = np.sort(rng.integers(0, last_onset + 1, size=n_events))
    cloud = np.ones((n, L))
    for tau in onsets:
        cloud[1:, tau : tau + cfg.cloud_duration] *= 1.0 - cfg.cloud_depth
        cloud[0, tau + cfg.delta : tau + cfg.delta + cfg.cloud_duration] *= 1.0 - cfg.cloud_depth

    noise = rng.normal(0.0, cfg.noise, size=(n, L)) if cfg.noise > 0 else np.zeros((n, L))
    values = np.clip(amp[:, None] * sky[None, :] * latent[None, :] * cloud + noise, 0.0, None)

    ids = ["target"] + [f"aux{i:02d}" for i in range(1, n)]
    panel = TimeSeriesPanel(ids, timestamps, values, cfg.sampling_period)
    return panel, GroundTruth(latent, cloud, onsets)


# ---------------------------------------------------------------- CSV


CSV_COLUMNS = ["timestamp", "node_id", "ghi"]


def parse_timestamp(text: str, line: int | None = None) -> int:
    s = text.strip()
    if s.endswith("Z"):
        s = s[:-1] + "+00:00"
    try:
        dt = datetime.fromisoformat(s)
    except ValueError:
        raise DataError(f"unparseable timestamp {text!r}", line) from None
    if dt.tzinfo is None or dt.utcoffset().total_seconds() != 0:
        raise DataError(f"timestamp {text!r} is not UTC", line)
    return int(dt.timestamp())


def format_timestamp(ts: int) -> str:
    return datetime.fromtimestamp(int(ts), tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass
class IngestionReport:
    rows: int = 0
    filled: list[tuple[str, str]] = field(default_factory=list)
    missing_cells: int = 0


def load_csv(path, sampling_period: int | None = None, max_fill: int = 3,
             target: str | None = None) -> TimeSeriesPanel:
    """Read long-format ``timestamp,node_id,ghi`` rows into a panel.

    Gaps of up to ``max_fill`` steps are forward-filled (recorded in
    ``panel.filled``); longer gaps are marked in ``panel.missing`` so the
    windows covering them are dropped later. The ingestion summary is
    attached as ``panel.report``.
    """
    path = Path(path)
    records: dict[tuple[int, str], float] = {}
    first_line: dict[tuple[int, str], int] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    header_at = None
    for i, raw in enumerate(lines, start=1):
        text = raw.strip()
        if not text:
            continue
        if text.startswith("#"):
            body = text[1:].strip()
            if body.startswith("target="):
                target = target or body.split("=", 1)[1].strip()
            continue
        header_at = i
        break
    if header_at is None:
        raise DataError(f"{path}: no header row")
    header = next(csv.reader([lines[header_at - 1]]))
    header = [h.strip() for h in header]
    if header != CSV_COLUMNS:
        unknown = [h for h in header if h not in CSV_COLUMNS]
        raise DataError(f"expected columns {CSV_COLUMNS}, got {header}"
                        + (f" (unknown: {unknown})" if unknown else ""), header_at)
    body = lines[header_at:]
    for offset, row in enumerate(csv.reader(body)):
        lineno = header_at + 1 + offset
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if row[0].lstrip().startswith("#"):
            continue
        if len(row) != 3:
            raise DataError(f"expected 3 fields, got {len(row)}", lineno)
        ts = parse_timestamp(row[0], lineno)
        node = row[1].strip()
        try:
            ghi = float(row[2])
        except ValueError:
            raise DataError(f"ghi {row[2]!r} is not a number", lineno) from None
        if not math.isfinite(ghi) or ghi < 0:
            raise DataError(f"ghi must be finite and non-negative, got {row[2]!r}", lineno)
        key = (ts, node)
        if key in records:
            raise DataError(f"duplicate reading for node {node!r} at {row[0].strip()} "
                            f"(first seen on line {first_line[key]})", lineno)
        records[key] = ghi
        first_line[key] = lineno
    if not records:
        raise DataError(f"{path}: no data rows")

    nodes = sorted({k[1] for k in records})
    if target is None:
        raise DataError(f"{path}: no '# target=<node_id>' directive")
    if target not in nodes:
        raise DataError(f"target node {target!r} has no readings")
    order = [target] + [x for x in nodes if x != target]
    stamps = np.array(sorted({k[0] for k in records}), dtype=np.int64)
    if sampling_period is None:
        if stamps.size < 2:
            raise DataError("cannot infer the sampling period from a single timestamp")
        sampling_period = int(np.diff(stamps).min())
    steps_per_day(sampling_period)
    bad = stamps[stamps % sampling_period != 0]
    if bad.size:
        ts = int(bad[0])
        raise DataError(f"timestamp {format_timestamp(ts)} not aligned to {sampling_period}s",
                        first_line[next(k for k in records if k[0] == ts)])
    grid = np.arange(stamps[0], stamps[-1] + 1, sampling_period, dtype=np.int64)
    col = {int(t): j for j, t in enumerate(grid)}
    row_of = {name: i for i, name in enumerate(order)}
    values = np.zeros((len(order), grid.size))
    present = np.zeros_like(values, dtype=bool)
    for (ts, node), ghi in records.items():
        values[row_of[node], col[ts]] = ghi
        present[row_of[node], col[ts]] = True

    report = IngestionReport(rows=len(records))
    filled = np.zeros_like(present)
    missing = ~present
    for i in range(len(order)):
        j = 0
        while j < grid.size:
            if present[i, j]:
                j += 1
                continue
            k = j
            while k < grid.size and not present[i, k]:
                k += 1
            if j > 0 and k - j <= max_fill:
                values[i, j:k] = values[i, j - 1]
                filled[i, j:k] = True
                missing[i, j:k] = False
                report.filled.extend((order[i], format_timestamp(t)) for t in grid[j:k])
            j = k
    report.missing_cells = int(missing.sum())
    panel = TimeSeriesPanel(order, grid, values, sampling_period, missing, filled)
    panel.report = report
    return panel


def write_csv(panel: TimeSeriesPanel, path) -> None:
    """Write the panel in the same long format ``load_csv`` reads."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        fh.write(f"# target={panel.node_ids[0]}\n")
        fh.write(",".join(CSV_COLUMNS) + "\n")
        for j, ts in enumerate(panel.timestamps):
            stamp = format_timestamp(ts)
            for i, node in enumerate(panel.node_ids):
                if panel.missing[i, j]:
                    continue
                fh.write(f"{stamp},{node},{panel.values[i, j]:.6f}\n")


def write_ground_truth(panel: TimeSeriesPanel, truth: GroundTruth, path) -> None:
    """Sidecar CSV: per-step latent factor and every node's cloud factor."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        fh.write("timestamp,latent," + ",".join(f"cloud_{x}" for x in panel.node_ids) + "\n")
        for j, ts in enumerate(panel.timestamps):
            clouds = ",".join(f"{c:.6f}" for c in truth.cloud[:, j])
            fh.write(f"{format_timestamp(ts)},{truth.latent[j]:.9f},{clouds}\n")


# ---------------------------------------------------------------- splitting


def chronological_split(panel: TimeSeriesPanel, ratios=(0.7, 0.2, 0.1),
                        min_length: int = 1) -> tuple[TimeSeriesPanel, ...]:
    """Contiguous train/val/test segments in time order."""
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) < 0:
        raise ValueError(f"ratios must be three non-negative numbers summing to 1, got {ratios}")
    L = len(panel)
    n_train = int(math.floor(ratios[0] * L + 1e-9))
    n_val = int(math.floor(ratios[1] * L + 1e-9))
    bounds = [0, n_train, n_train + n_val, L]
    parts = []
    for name, a, b in zip(("train", "val", "test"), bounds[:-1], bounds[1:]):
        if b - a < min_length:
            raise DataError(f"{name} split has {b - a} steps; need at least {min_length}")
        parts.append(panel.slice(a, b))
    return tuple(parts)


# ---------------------------------------------------------------- windows


@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray  # (n,)
    std: np.ndarray  # (n,)

    STD_FLOOR = 1e-6

    @classmethod
    def from_panel(cls, panel: TimeSeriesPanel) -> "NormStats":
        vals = np.where(panel.missing, np.nan, panel.values)
        mean = np.nanmean(vals, axis=1)
        std = np.nanstd(vals, axis=1)
        if std[0] < cls.STD_FLOOR:
            warnings.warn("target node is constant on the training split; std floor applied",
                          RuntimeWarning, stacklevel=2)
        return cls(mean, np.maximum(std, cls.STD_FLOOR))

    def normalize(self, values: np.ndarray, node=slice(None)) -> np.ndarray:
        return (values - self.mean[node, None]) / self.std[node, None]

    def denormalize_target(self, y):
        return np.asarray(y) * self.std[0] + self.mean[0]


@dataclass
class WindowedDataset:
    X: np.ndarray  # (N, n, T, 1) normalized windows
    start_slot: np.ndarray  # (N,)
    y: np.ndarray  # (N,) normalized target at window end + h
    target_time: np.ndarray  # (N,) epoch seconds of the target
    end_index: np.ndarray  # (N,) index of the last window step in the panel
    stats: NormStats
    T: int
    h: int
    daylight_only: bool

    def __len__(self) -> int:
        return self.y.shape[0]

    @property
    def y_physical(self) -> np.ndarray:
        return self.stats.denormalize_target(self.y)

    def last_target(self) -> np.ndarray:
        """Normalized target-node value at each window's final step."""
        return self.X[:, 0, -1, 0]

    def subset(self, idx) -> "WindowedDataset":
        return replace(self, X=self.X[idx], start_slot=self.start_slot[idx], y=self.y[idx],
                       target_time=self.target_time[idx], end_index=self.end_index[idx])


def daylight_mask(slots: np.ndarray, daylight: tuple[int, int], offset_slots: int = 0,
                  spd: int = 144) -> np.ndarray:
    local = (np.asarray(slots) + offset_slots) % spd
    lo, hi = daylight
    return (local >= lo) & (local < hi)


def build_windows(panel: TimeSeriesPanel, T: int, h: int, stats: NormStats,
                  daylight_only: bool = True, daylight: tuple[int, int] = (36, 120),
                  utc_offset_slots: int = 0) -> WindowedDataset:
    """One (window, target) pair per end index whose inputs and target are observed.

    ``daylight`` is a half-open local slot range; with ``daylight_only`` an
    example is kept only when its target slot falls inside it.
    """
    L = len(panel)
    if L < T + h:
        raise DataError(f"panel of {L} steps shorter than T + h = {T + h}")
    norm = stats.normalize(panel.values).astype(np.float64)
    ends = np.arange(T - 1, L - h)
    bad = panel.missing.any(axis=0).astype(np.int64)
    csum = np.concatenate([[0], np.cumsum(bad)])
    window_bad = csum[ends + 1] - csum[ends + 1 - T]
    keep = (window_bad == 0) & ~panel.missing[0, ends + h]
    spd = steps_per_day(panel.sampling_period)
    slots = panel.slots()
    if daylight_only:
        keep &= daylight_mask(slots[ends + h], daylight, utc_offset_slots, spd)
    ends = ends[keep]
    idx = ends[:, None] - T + 1 + np.arange(T)[None, :]  # (N, T)
    X = np.transpose(norm[:, idx], (1, 0, 2))[..., None]  # (N, n, T, 1)
    return WindowedDataset(
        X=np.ascontiguousarray(X),
        start_slot=slots[ends - T + 1].astype(np.int64),
        y=norm[0, ends + h],
        target_time=panel.timestamps[ends + h],
        end_index=ends,
        stats=stats,
        T=T,
        h=h,
        daylight_only=daylight_only,
    )
