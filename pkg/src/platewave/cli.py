"""Command-line entry point: ``platewave <command> [options]``.

Commands
--------
synth          generate (and curate) a synthetic dataset
train          train one model per seed and summarise across seeds
eval           evaluate a checkpoint on its held-out split
ablate         retrain on each of the four time windows
equivariance   R0 / R(x) / Q(x) reports and heatmaps
weights        symmetry-weight report of an approximate model

Every report is printed as JSON lines and, with ``--out``, also written to disk.
Exit codes: 0 success, 2 invalid configuration, 3 data error, 4 numeric divergence.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import analysis, container, models, training
from .models import ModelSpec
from .signals import curate as curation
from .signals import dataset as dsmod
from .signals.config import load_config, plate_from_dict, sym_from_dict

log = logging.getLogger("platewave")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 0, 2, 3, 4


class ConfigError(Exception):
    pass


class DataError(Exception):
    pass


# helpers

def _emit(records, path: Path | None = None):
    lines = [json.dumps(r, sort_keys=True) for r in records]
    for line in lines:
        print(line)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("".join(line + "\n" for line in lines))


def _parse_seeds(text: str) -> list[int]:
    try:
        if "-" in text and "," not in text:
            lo, hi = text.split("-")
            return list(range(int(lo), int(hi) + 1))
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad --seeds value {text!r}") from exc


def _parse_window(text: str | None) -> tuple[float, float] | None:
    if text is None:
        return None
    try:
        t0, t1 = (float(v) for v in text.split(":"))
    except ValueError as exc:
        raise ConfigError(f"bad --window value {text!r}; expected t0:t1 in ms") from exc
    return t0, t1


def _parse_widths(text: str | None):
    if text is None:
        return None
    try:
        widths = tuple(int(v) for v in text.split(","))
    except ValueError as exc:
        raise ConfigError(f"bad --widths value {text!r}") from exc
    if len(widths) != 6:
        raise ConfigError("--widths needs six comma-separated integers")
    return widths


def _read_config(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file {p} does not exist")
    try:
        return load_config(p)
    except Exception as exc:  # malformed TOML/JSON
        raise ConfigError(f"cannot parse {p}: {exc}") from exc


def _load_dataset(path: str | None) -> dsmod.Dataset:
    if path is None:
        raise ConfigError("--dataset is required")
    p = Path(path)
    if not p.exists():
        raise DataError(f"dataset {p} does not exist")
    if p.suffix == ".npz":
        return dsmod.import_arrays(p)
    return dsmod.load(p)


def _apply_window(ds: dsmod.Dataset, window) -> tuple[dsmod.Dataset, list[int]]:
    if window is None:
        return ds, [0, ds.length]
    start, stop = ds.plate.window_to_samples(*window)
    if (start, stop) == (0, ds.length):
        return ds, [start, stop]
    return ds.window(start, stop), [start, stop]


def _train_config(args, cfg: dict, seed: int) -> training.TrainConfig:
    kw = dict(cfg.get("train", {}))
    kw["task"] = args.task
    kw["seed"] = seed
    if args.epochs is not None:
        kw["epochs"] = args.epochs
    return training.TrainConfig(**kw)


# commands

def cmd_synth(args) -> int:
    cfg = _read_config(args.config)
    plate_kw = dict(cfg.get("plate", {}))
    if args.grid is not None:
        plate_kw["grid"] = args.grid
    plate = plate_from_dict(plate_kw)
    sym_cfg = cfg.get("sym", {})
    if args.sym_break:
        sc = _read_config(args.sym_break)
        sym_cfg = sc.get("sym", sc)
    sym = sym_from_dict(sym_cfg)
    thresholds = curation.CurationThresholds(**cfg.get("curation", {}))
    if args.dry_run:
        _emit([{"locations": len(plate.grid_positions()), "baselines": plate.n_baselines,
                "length": plate.output_length}])
        return EXIT_OK
    out = Path(args.out)
    if out.parent and not out.parent.exists():
        out.parent.mkdir(parents=True, exist_ok=True)
    ds = dsmod.generate(plate, sym, args.seed, noise=args.noise)
    if not args.no_curate:
        ds = curation.curate(ds, thresholds)
    try:
        dsmod.save(ds, out)
    except OSError as exc:
        raise DataError(f"cannot write {out}: {exc}") from exc
    r0, r0_std, _ = analysis.baseline_equivariance_error(ds.baselines, analysis.first_arrival_index(plate))
    records = [{"kind": "curation", **entry} for entry in ds.curation_log]
    records.append({"kind": "summary", "path": str(out), "locations": len(ds),
                    "baselines": int(ds.baselines.shape[0]), "length": ds.length,
                    "seed": args.seed, "r0": r0, "r0_std": r0_std})
    _emit(records, Path(args.report) if args.report else None)
    return EXIT_OK


def _summary(task: str, per_seed: list[dict]) -> dict:
    keys = ("mde", "var", "std", "rmse") if task == "locate" else ("accuracy", "perplexity")
    out = {"kind": "aggregate", "task": task, "seeds": [r["seed"] for r in per_seed]}
    for k in keys:
        vals = np.array([r["test"][k] for r in per_seed])
        out[k] = float(vals.mean())
        out[k + "_spread"] = float(vals.std())
    if task == "locate":
        gaps = np.array([r["gap"] for r in per_seed])
        out["gap"] = float(gaps.mean())
        out["gap_spread"] = float(gaps.std())
    return out


def cmd_train(args) -> int:
    cfg = _read_config(args.config)
    ds = _load_dataset(args.dataset)
    window = _parse_window(args.window)
    ds, samples = _apply_window(ds, window)
    widths = _parse_widths(args.widths) or cfg.get("model", {}).get("channel_widths")
    out = Path(args.out)
    records = []
    for seed in _parse_seeds(args.seeds):
        spec = ModelSpec(args.variant, args.task, widths, input_length=ds.length, seed=seed,
                         include_diagonal=bool(cfg.get("model", {}).get("include_diagonal", False)))
        model = models.build(spec)
        tc = _train_config(args, cfg, seed)
        log.info("seed %d: %s %s with %d parameters", seed, spec.variant, spec.task, model.n_parameters)
        run_dir = out / f"seed-{seed}"
        result = training.train(model, ds, tc, run_dir,
                                {"window_samples": samples, "dataset": str(args.dataset)})
        rec = {"kind": "run", "seed": seed, "variant": spec.variant, "task": spec.task,
               "parameters": model.n_parameters, "train": result.metrics["train"],
               "test": result.metrics.get("test")}
        if "gap" in result.metrics:
            rec["gap"] = result.metrics["gap"]
        records.append(rec)
    if all(r["test"] is not None for r in records):
        records.append(_summary(args.task, records))
    _emit(records, out / "summary.jsonl")
    return EXIT_OK


def _checkpoint(path: str | None):
    if path is None:
        raise ConfigError("--checkpoint is required")
    p = Path(path)
    if not p.exists():
        raise DataError(f"checkpoint {p} does not exist")
    return models.load_checkpoint(p)


def cmd_eval(args) -> int:
    model, meta = _checkpoint(args.checkpoint)
    extra = meta.get("extra", {})
    ds = _load_dataset(args.dataset or extra.get("dataset"))
    start, stop = extra.get("window_samples", [0, ds.length])
    if (start, stop) != (0, ds.length):
        ds = ds.window(start, stop)
    if ds.length != model.spec.input_length:
        raise DataError(f"dataset length {ds.length} does not match the model input {model.spec.input_length}")
    tc = training.TrainConfig(**extra["train_config"]) if "train_config" in extra else \
        training.TrainConfig(task=model.spec.task, seed=model.spec.seed)
    _, test, _, _ = training.task_arrays(ds, tc.task, tc.split_ratio, tc.seed)
    m = training.evaluate(model, test, tc)
    _emit([{"kind": "eval", "checkpoint": str(args.checkpoint), **m}], Path(args.out) if args.out else None)
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _read_config(args.config)
    ds = _load_dataset(args.dataset)
    widths = _parse_widths(args.widths) or cfg.get("model", {}).get("channel_widths")
    args.task = "locate"
    records = []
    for seed in _parse_seeds(args.seeds):
        spec = ModelSpec(args.variant, "locate", widths, input_length=ds.length, seed=seed)
        rows = training.ablate_windows(spec, ds, _train_config(args, cfg, seed))
        records.extend({"kind": "window", "seed": seed, **r} for r in rows)
    _emit(records, Path(args.out) / "ablation.jsonl" if args.out else None)
    return EXIT_OK


def cmd_equivariance(args) -> int:
    ds = _load_dataset(args.dataset)
    out = Path(args.out) if args.out else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    records = []
    if ds.baselines.shape[0]:
        r0, spread, _ = analysis.baseline_equivariance_error(ds.baselines, analysis.first_arrival_index(ds.plate))
        records.append({"kind": "R0", "value": r0, "spread": spread})
    field = analysis.input_equivariance_field(ds)
    finite = field.values[~np.isnan(field.values)]
    records.append({"kind": "R(x)", "median": float(np.median(finite)) if finite.size else None,
                    "max": float(finite.max()) if finite.size else None, "skipped": field.skipped})
    if out is not None:
        field.heatmap.to_csv(out / "input_equivariance.csv")
        field.heatmap.to_pgm(out / "input_equivariance.pgm")
    if args.checkpoint:
        model, meta = _checkpoint(args.checkpoint)
        start, stop = meta.get("extra", {}).get("window_samples", [0, ds.length])
        view = ds if (start, stop) == (0, ds.length) else ds.window(start, stop)
        q = analysis.learned_equivariance_field(model, view)
        qn = analysis.learned_equivariance_field(model, view, normalized=True)
        records.append({"kind": "Q(x)", "max": float(q.values.max()), "mean": float(q.values.mean()),
                        "normalized_max": float(qn.values.max())})
        if out is not None:
            q.heatmap.to_csv(out / "learned_equivariance.csv")
            q.heatmap.to_pgm(out / "learned_equivariance.pgm")
    _emit(records, out / "equivariance.jsonl" if out else None)
    return EXIT_OK


def cmd_weights(args) -> int:
    model, _ = _checkpoint(args.checkpoint)
    if model.spec.variant != "approximate":
        raise ConfigError(f"checkpoint holds a {model.spec.variant} model; weights need an approximate one")
    rep = analysis.symmetry_weight_report(model)
    records = [{"kind": "layer", **row} for row in rep["layers"]]
    records.append({"kind": "trend", "first": rep["first"], "last": rep["last"],
                    "slope": rep["slope"], "decreasing": rep["decreasing"]})
    _emit(records, Path(args.out) if args.out else None)
    return EXIT_OK


# parser

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="platewave", description="Equivariant Lamb-wave load localisation.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, task=True, variant=True):
        if task:
            p.add_argument("--task", choices=models.TASKS, default="locate")
        if variant:
            p.add_argument("--variant", choices=("ordinary", "exact", "approx", "approximate"), default="exact")
        p.add_argument("--dataset")
        p.add_argument("--out")
        p.add_argument("--config", help="TOML or JSON file with [plate], [sym], [train], [model] tables")

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--grid", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sym-break", help="TOML or JSON file of symmetry-breaking controls")
    p.add_argument("--noise", type=float, help="override the noise level")
    p.add_argument("--config")
    p.add_argument("--report", help="also write the JSON-lines report here")
    p.add_argument("--no-curate", action="store_true")
    p.add_argument("--dry-run", action="store_true", help="report planned counts without generating")
    p.set_defaults(func=cmd_synth)

    for name, func, hlp in (("train", cmd_train, "train one model per seed"),
                            ("ablate", cmd_ablate, "time-window ablation")):
        p = sub.add_parser(name, help=hlp)
        common(p, task=(name == "train"))
        p.add_argument("--seeds", default="0")
        p.add_argument("--seed", type=int, help="single seed; same as --seeds N")
        p.add_argument("--epochs", type=int)
        p.add_argument("--widths", help="six comma-separated channel widths")
        if name == "train":
            p.add_argument("--window", help="time window t0:t1 in ms")
        p.set_defaults(func=func)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("equivariance", help="equivariance-error reports")
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--out")
    p.set_defaults(func=cmd_equivariance)

    p = sub.add_parser("weights", help="symmetry-weight report")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_weights)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "seed", None) is not None and hasattr(args, "seeds"):
        args.seeds = str(args.seed)
    try:
        return args.func(args)
    except training.DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (DataError, container.FormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ConfigError, ValueError, TypeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
