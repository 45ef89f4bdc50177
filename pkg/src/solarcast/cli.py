"""Command-line entry point: generate, train, evaluate, forecast, ablation-suite.

Every config key is also a flag (``--batch-size 16`` or ``--batch_size 16``).
Exit codes: 0 success, 2 config error, 3 data error, 4 numeric divergence.
"""

from __future__ import annotations

import argparse
import json
import subprocess
import sys
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import FIELD_TYPES, ConfigError, RunConfig, parse_value, read_config_file, resolve
from .data import (
    DataError,
    NormStats,
    TimeSeriesPanel,
    build_windows,
    chronological_split,
    format_timestamp,
    generate_synthetic,
    load_csv,
    write_csv,
    write_ground_truth,
)
from .metrics import EvalReport, evaluate, write_report_csv
from .model import ModelConfig, init_params, model_forward
from .training import (
    DivergenceError,
    load_checkpoint,
    predict,
    read_checkpoint_meta,
    save_checkpoint,
    train,
)

SUITE = (("full", ()), ("no_emb", ("no_emb",)), ("no_stgl", ("no_stgl",)), ("no_sgt", ("no_sgt",)))


def version_string() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"], cwd=Path(__file__).parent,
                             capture_output=True, text=True, timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def make_run_dir(cfg: RunConfig, command: str) -> Path:
    if cfg.run_dir:
        path = Path(cfg.run_dir)
    else:
        stamp = time.strftime("%Y%m%dT%H%M%S", time.gmtime())
        path = cfg.root() / f"{stamp}-{cfg.hash()}"
        k = 1
        while path.exists():
            path = cfg.root() / f"{stamp}-{cfg.hash()}-{k}"
            k += 1
    path.mkdir(parents=True, exist_ok=True)
    # a re-run from the echo gets a fresh directory rather than this one
    echo = replace(cfg, run_dir="")
    (path / "config.txt").write_text(echo.to_text(), encoding="utf-8")
    (path / "seed.txt").write_text(f"{cfg.seed}\n", encoding="utf-8")
    (path / "version.txt").write_text(f"{version_string()}\ncommand={command}\n", encoding="utf-8")
    return path


# ---------------------------------------------------------------- data plumbing


@dataclass
class Prepared:
    panel: TimeSeriesPanel
    splits: dict
    stats: NormStats
    model_cfg: ModelConfig


def load_panel(cfg: RunConfig, csv_path: str = "") -> tuple[TimeSeriesPanel, tuple[int, int], int]:
    """Panel, daylight slot range and local offset in slots."""
    path = csv_path or cfg.data_csv
    if path:
        panel = load_csv(path, max_fill=cfg.max_fill)
        period = panel.sampling_period
        slot = lambda hhmm: (int(hhmm[:2]) * 3600 + int(hhmm[3:5]) * 60) // period
        offset = cfg.utc_offset_hours * 3600 // period
        return panel, (slot(cfg.daylight_start), slot(cfg.daylight_end)), offset
    syn = cfg.synthetic()
    panel, _ = generate_synthetic(syn)
    return panel, syn.daylight_slots(), 0


def prepare(cfg: RunConfig, stats: NormStats | None = None) -> Prepared:
    panel, daylight, offset = load_panel(cfg)
    model_cfg = cfg.model(panel.n_nodes).validate()
    parts = chronological_split(panel, cfg.ratios(), min_length=model_cfg.T + model_cfg.h)
    stats = stats or NormStats.from_panel(parts[0])
    splits = {}
    for name, part in zip(("train", "val", "test"), parts):
        day = cfg.daylight_train if name == "train" else cfg.daylight_eval
        splits[name] = build_windows(part, model_cfg.T, model_cfg.h, stats, day, daylight, offset)
    return Prepared(panel, splits, stats, model_cfg)


def write_reports(run_dir: Path, reports: list[EvalReport], stem: str = "report") -> None:
    text = "".join(r.to_text() + "\n" for r in reports)
    (run_dir / f"{stem}.txt").write_text(text, encoding="utf-8")
    write_report_csv(reports, run_dir / f"{stem}.csv")


def _label(ablation) -> str:
    return "+".join(sorted(ablation)) or "full"


def fit(cfg: RunConfig, prep: Prepared, ablation, run_dir: Path, log=print):
    params = init_params(prep.model_cfg, ablation, seed=cfg.seed)
    log(f"[{_label(ablation)}] {params.count()} parameters, "
        f"{len(prep.splits['train'])} train / {len(prep.splits['val'])} val examples")
    try:
        params, history = train(params, prep.splits["train"], prep.splits["val"],
                                prep.model_cfg, cfg.training(), log=log)
    except DivergenceError as exc:
        if exc.history is not None:
            (run_dir / "history.json").write_text(exc.history.to_json(), encoding="utf-8")
        raise
    save_checkpoint(run_dir / "checkpoint.npz", params, prep.model_cfg, prep.stats,
                    extra={"run_config": cfg.to_dict()})
    (run_dir / "history.json").write_text(history.to_json(), encoding="utf-8")
    with (run_dir / "history.csv").open("w", encoding="utf-8") as fh:
        fh.write("epoch,train_loss,val_loss,lr\n")
        for i, (a, b, c) in enumerate(zip(history.train_loss, history.val_loss, history.lr), 1):
            fh.write(f"{i},{a!r},{b!r},{c!r}\n")
    return params, history


def score(cfg: RunConfig, prep: Prepared, params, split: str) -> EvalReport:
    ds = prep.splits[split]
    return evaluate(lambda d: predict(params, d, prep.model_cfg), ds, split=split,
                    baseline=cfg.baseline == "persistence", ablation=_label(params.ablation),
                    config_hash=prep.model_cfg.hash())


# ---------------------------------------------------------------- commands


def cmd_generate(cfg: RunConfig) -> int:
    run_dir = make_run_dir(cfg, "generate")
    panel, truth = generate_synthetic(cfg.synthetic())
    out = Path(cfg.out) if cfg.out else run_dir / "panel.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(panel, out)
    sidecar = out.with_name(out.stem + ".truth.csv")
    write_ground_truth(panel, truth, sidecar)
    print(f"wrote {out} ({panel.n_nodes} nodes x {len(panel)} steps) and {sidecar}")
    return 0


def cmd_train(cfg: RunConfig) -> int:
    run_dir = make_run_dir(cfg, "train")
    prep = prepare(cfg)
    params, history = fit(cfg, prep, cfg.ablation(), run_dir)
    report = score(cfg, prep, params, "test")
    write_reports(run_dir, [report])
    (run_dir / "run.json").write_text(json.dumps({
        "param_count": params.count(),
        "ablation": _label(params.ablation),
        "best_epoch": history.best_epoch,
        "stop_reason": history.stop_reason,
        "run_config_hash": cfg.hash(),
        "model_config_hash": prep.model_cfg.hash(),
    }, indent=2, sort_keys=True), encoding="utf-8")
    print(report.to_text(), end="")
    print(f"run directory: {run_dir}")
    return 0


def cmd_evaluate(cfg: RunConfig) -> int:
    if cfg.ablation_suite:
        return cmd_ablation_suite(cfg)
    if not cfg.checkpoint:
        raise ConfigError("evaluate needs --checkpoint")
    params, model_cfg, stats, meta = load_checkpoint(cfg.checkpoint)
    run_dir = make_run_dir(cfg, "evaluate")
    prep = prepare(cfg, stats=stats)
    if prep.model_cfg.hash() != model_cfg.hash():
        raise ConfigError(f"config does not match checkpoint (hash {prep.model_cfg.hash()} "
                          f"vs {model_cfg.hash()}); pass the training config")
    report = score(cfg, prep, params, cfg.split)
    write_reports(run_dir, [report])
    print(report.to_text(), end="")
    return 0


def cmd_ablation_suite(cfg: RunConfig) -> int:
    run_dir = make_run_dir(cfg, "ablation-suite")
    prep = prepare(cfg)
    reports = []
    for name, ablation in SUITE:
        sub = run_dir / name
        sub.mkdir(exist_ok=True)
        params, _ = fit(cfg, prep, ablation, sub)
        rep = score(cfg, prep, params, cfg.split)
        write_reports(sub, [rep])
        reports.append(rep)
        print(f"{name:8s} rmse={rep.rmse:.3f} rse={rep.rse:.4f} corr={rep.corr:.4f}")
    write_reports(run_dir, reports)
    return 0


def cmd_forecast(cfg: RunConfig) -> int:
    if not cfg.checkpoint or not cfg.csv:
        raise ConfigError("forecast needs --checkpoint and --csv")
    params, model_cfg, stats, _ = load_checkpoint(cfg.checkpoint)
    panel = load_csv(cfg.csv, max_fill=cfg.max_fill)
    T = model_cfg.T
    if len(panel) < T:
        raise DataError(f"input has {len(panel)} steps; forecasting needs at least T = {T}")
    if panel.n_nodes != model_cfg.n_nodes:
        raise DataError(f"input has {panel.n_nodes} nodes, checkpoint expects {model_cfg.n_nodes}")
    if panel.sampling_period != model_cfg.sampling_period:
        raise DataError(f"input sampled every {panel.sampling_period}s, "
                        f"checkpoint expects {model_cfg.sampling_period}s")
    if stats is None:
        raise DataError("checkpoint carries no normalization statistics")
    tail = panel.slice(len(panel) - T, len(panel))
    if tail.missing.any():
        raise DataError("the last T steps contain unfilled gaps")
    window = stats.normalize(tail.values)[..., None]
    y, alpha = model_forward(params, window.astype(model_cfg.dtype), int(tail.slots()[0]),
                             model_cfg, return_alpha=True)
    ghi = float(stats.denormalize_target(float(y.data)))
    when = int(tail.timestamps[-1]) + model_cfg.h * model_cfg.sampling_period
    run_dir = make_run_dir(cfg, "forecast")
    out = Path(cfg.out) if cfg.out else run_dir / "forecast.csv"
    with out.open("w", encoding="utf-8") as fh:
        header = ["timestamp", "ghi_hat"] + (["alpha"] if cfg.emit_alpha else [])
        fh.write(",".join(header) + "\n")
        row = [format_timestamp(when), f"{ghi:.6f}"]
        if cfg.emit_alpha:
            row.append("" if alpha is None else f"{float(np.asarray(alpha.data).reshape(-1)[0]):.6f}")
        fh.write(",".join(row) + "\n")
    print(out.read_text(), end="")
    return 0


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "forecast": cmd_forecast,
    "ablation-suite": cmd_ablation_suite,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="solarcast", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="flat key = value config file")
    for key, kind in FIELD_TYPES.items():
        flags = ["--" + key.replace("_", "-")]
        if "_" in key:
            flags.append("--" + key)
        if key == "nodes":
            flags.append("--n-nodes")
        if kind == "bool":
            parser.add_argument(*flags, dest=key, nargs="?", const="true", default=None)
        elif kind == "list":
            parser.add_argument(*flags, dest=key, action="append", default=None)
        else:
            parser.add_argument(*flags, dest=key, default=None)
    return parser


def parse_args(argv) -> tuple[str, RunConfig]:
    """Resolve defaults, then a checkpoint's training config (evaluate and
    forecast), then the config file, then explicit flags."""
    args = build_parser().parse_args(argv)
    file_values = read_config_file(args.config) if args.config else {}
    overrides = {}
    for key in FIELD_TYPES:
        raw = getattr(args, key)
        if raw is None:
            continue
        if isinstance(raw, list):
            overrides[key] = [x for item in raw for x in parse_value(key, item)]
        else:
            overrides[key] = parse_value(key, raw)
    base = {}
    checkpoint = overrides.get("checkpoint") or file_values.get("checkpoint")
    if args.command in ("evaluate", "forecast") and checkpoint:
        stored = read_checkpoint_meta(checkpoint).get("extra", {}).get("run_config", {})
        base = {k: v for k, v in stored.items() if k in FIELD_TYPES and k not in RunConfig.PATH_KEYS}
    return args.command, resolve({**base, **file_values}, overrides)


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        command, cfg = parse_args(argv)
        return COMMANDS[command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except DivergenceError as exc:
        print(f"numeric divergence: {exc}", file=sys.stderr)
        return 4
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
