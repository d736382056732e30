"""Command-line interface: train / score / localize / eval / simulate /
star-check driven by flat key=value config files with sections.

Each run writes a resolved copy of its configuration next to the outputs so
results can be reproduced from the output directory alone.  Exit codes:
0 success, 2 configuration error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import sys
from pathlib import Path

import numpy as np

from . import data as data_mod
from . import localize as loc_mod
from . import metrics as metrics_mod
from . import model as model_mod
from . import star_verify
from .data import DataError
from .model import NumericError, TrainConfig

__all__ = ["main", "ConfigError"]


class ConfigError(ValueError):
    """Bad, missing, or unknown configuration."""


_BOOL_VALUES = {"true": True, "1": True, "yes": True, "false": False, "0": False, "no": False}


def _as_bool(raw: str, key: str) -> bool:
    try:
        return _BOOL_VALUES[raw.strip().lower()]
    except KeyError:
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}") from None


def _as_int(raw: str, key: str) -> int:
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {raw!r}") from None


def _as_float(raw: str, key: str) -> float:
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {raw!r}") from None


_CONVERTERS = {"str": lambda raw, key: raw, "int": _as_int, "float": _as_float, "bool": _as_bool}

# key -> (type, default); default None (without a type suffix "!") means optional
_SCHEMAS = {
    "train": {
        "data": ("str", "!required"),
        "out": ("str", "!required"),
        "seed": ("int", 0),
        "t_window": ("int", 20),
        "d_model": ("int", 64),
        "heads": ("int", 8),
        "layers": ("int", 3),
        "lambda_reg": ("float", 10.0),
        "learning_rate": ("float", 1e-4),
        "max_epochs": ("int", 50),
        "patience": ("int", 5),
        "k_pairs": ("int", 512),
        "r": ("int", 1),
        "batch_size": ("int", 64),
        "skip": ("bool", True),
        "activation": ("str", "identity"),
        "mask": ("str", "none"),
        "pair_method": ("str", "spearman"),
        "kernel_size": ("int", 3),
        "label_column": ("str", "label"),
        "downsample": ("int", 1),
    },
    "score": {
        "checkpoint": ("str", "!required"),
        "data": ("str", "!required"),
        "out": ("str", "!required"),
        "seed": ("int", 0),
        "h2": ("float", None),
        "label_column": ("str", "label"),
    },
    "localize": {
        "checkpoint": ("str", "!required"),
        "data": ("str", "!required"),
        "out": ("str", "!required"),
        "seed": ("int", 0),
        "top_k": ("int", None),
        "absolute": ("bool", False),
        "label_column": ("str", "label"),
    },
    "eval": {
        "scores": ("str", "!required"),
        "data": ("str", "!required"),
        "out": ("str", "!required"),
        "seed": ("int", 0),
        "las": ("str", None),
        "loc_truth": ("str", None),
        "t_window": ("int", 20),
        "horizon": ("int", None),
        "p_percents": ("str", "100,150"),
        "label_column": ("str", "label"),
    },
    "simulate": {
        "out": ("str", "!required"),
        "seed": ("int", 0),
        "n": ("int", 500),
        "t1": ("int", 200),
        "t2": ("int", 300),
        "delta": ("float", 3.0),
        "mu1": ("float", 0.0),
        "mu2": ("float", 0.0),
        "sigma1": ("float", 1.0),
        "sigma2": ("float", 1.0),
        "inject_kind": ("str", None),
        "inject_series": ("int", 1),
        "inject_start": ("int", None),
        "inject_end": ("int", None),
        "inject_magnitude": ("float", 3.0),
    },
    "star-check": {
        "out": ("str", None),
        "seed": ("int", 0),
        "configs": ("int", 20),
        "tolerance": ("float", 1e-6),
    },
}


def _load_section(config_path: str | None, command: str, overrides: dict) -> dict:
    schema = _SCHEMAS[command]
    raw: dict[str, str] = {}
    if config_path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        read = parser.read(config_path)
        if not read:
            raise ConfigError(f"cannot read config file {config_path}")
        if parser.has_section(command):
            raw = dict(parser.items(command))
        unknown = set(raw) - set(schema)
        if unknown:
            raise ConfigError(f"unknown keys in [{command}]: {', '.join(sorted(unknown))}")

    resolved = {}
    for key, (kind, default) in schema.items():
        if key in overrides and overrides[key] is not None:
            resolved[key] = overrides[key]
        elif key in raw:
            resolved[key] = _CONVERTERS[kind](raw[key], key)
        elif default == "!required":
            raise ConfigError(f"[{command}] is missing required key {key!r}")
        else:
            resolved[key] = default
    return resolved


def _prepare_out(resolved: dict, command: str) -> Path:
    out = Path(resolved["out"])
    out.mkdir(parents=True, exist_ok=True)
    parser = configparser.ConfigParser(interpolation=None)
    parser.add_section(command)
    for key, value in resolved.items():
        if value is not None:
            parser.set(command, key, str(value))
    with open(out / "resolved_config.ini", "w", encoding="utf-8") as fh:
        parser.write(fh)
    return out


def _require_file(path: str) -> str:
    if not Path(path).is_file():
        raise FileNotFoundError(f"missing input file: {path}")
    return path


# -- commands ------------------------------------------------------------------


def cmd_train(resolved: dict) -> int:
    cfg = TrainConfig(
        t_window=resolved["t_window"],
        d_model=resolved["d_model"],
        heads=resolved["heads"],
        layers=resolved["layers"],
        lambda_reg=resolved["lambda_reg"],
        learning_rate=resolved["learning_rate"],
        max_epochs=resolved["max_epochs"],
        patience=resolved["patience"],
        k_pairs=resolved["k_pairs"],
        r=resolved["r"],
        seed=resolved["seed"],
        skip=resolved["skip"],
        activation=resolved["activation"],
        mask=resolved["mask"],
        batch_size=resolved["batch_size"],
        pair_method=resolved["pair_method"],
        kernel_size=resolved["kernel_size"],
    )
    out = _prepare_out(resolved, "train")
    frame = data_mod.load_csv(_require_file(resolved["data"]), resolved["label_column"])
    if resolved["downsample"] > 1:
        frame = data_mod.downsample_mean(frame, resolved["downsample"])
    frame, stats = data_mod.normalize(frame)
    if stats.constant.any():
        flagged = [frame.names[i] for i in np.flatnonzero(stats.constant)]
        print(f"warning: constant series centered only: {', '.join(flagged)}")
    result = model_mod.train(frame, cfg)

    model_mod.save_checkpoint(
        out / "model.alora",
        result.params,
        cfg,
        result.selection,
        h1=result.thresholds.h1,
        norm_stats=stats,
    )
    result.selection.save(out / "pairs.txt")
    with open(out / "loss_history.csv", "w", encoding="utf-8", newline="") as fh:
        fh.write("epoch,train_total,train_recon,train_reg,val_total\n")
        for row in result.history:
            fh.write(
                f"{row.epoch},{row.train_total!r},{row.train_recon!r},"
                f"{row.train_reg!r},{row.val_total!r}\n"
            )
    print(f"trained {cfg.layers} layer(s) for {len(result.history)} epoch(s); "
          f"h1={result.thresholds.h1!r}")
    print(f"checkpoint: {out / 'model.alora'}")
    return 0


def _load_model(resolved: dict):
    params, cfg, selection, h1, stats = model_mod.load_checkpoint(
        _require_file(resolved["checkpoint"])
    )
    frame = data_mod.load_csv(_require_file(resolved["data"]), resolved["label_column"])
    if frame.d != params.d_in:
        raise ConfigError(f"data has {frame.d} series, checkpoint expects {params.d_in}")
    if stats is not None:
        frame, _ = data_mod.normalize(frame, stats)
    return params, cfg, selection, h1, frame


def cmd_score(resolved: dict) -> int:
    out = _prepare_out(resolved, "score")
    params, cfg, _, h1, frame = _load_model(resolved)
    if h1 is None:
        raise ConfigError("checkpoint has no calibrated h1; re-run training")
    series = model_mod.score_frame(frame, params, cfg, h1)
    h2 = resolved["h2"]
    labels = None
    if h2 is not None:
        labels = (series.anomaly_score > h2).astype(np.int8)

    with open(out / "scores.csv", "w", encoding="utf-8", newline="") as fh:
        header = "timestamp,anomaly_score,alora_t_score,residual_sq"
        fh.write(header + (",label\n" if labels is not None else "\n"))
        for t in range(frame.n):
            row = (
                f"{t},{float(series.anomaly_score[t])!r},{int(series.alora_score[t])},"
                f"{float(series.residual_sq[t])!r}"
            )
            if labels is not None:
                row += f",{labels[t]}"
            fh.write(row + "\n")
    with open(out / "scores.meta.txt", "w", encoding="utf-8") as fh:
        fh.write(f"t_window={cfg.t_window}\n")
        fh.write(f"h1={h1!r}\n")
        fh.write(f"h2={'' if h2 is None else repr(h2)}\n")
        fh.write(f"first_full_window_timestep={cfg.t_window - 1}\n")
        fh.write("note=timesteps before first_full_window_timestep are scored "
                 "from the first window\n")
    print(f"scored {frame.n} timesteps -> {out / 'scores.csv'}")
    return 0


def cmd_localize(resolved: dict) -> int:
    out = _prepare_out(resolved, "localize")
    params, cfg, _, h1, frame = _load_model(resolved)
    series = model_mod.score_frame(frame, params, cfg, h1 if h1 is not None else 0.0)
    weights = loc_mod.contribution_weights(params, cfg.skip, cfg.activation)
    series.las = loc_mod.las(
        weights.c,
        series.residual_sq_per_series,
        top_k=resolved["top_k"],
        absolute=resolved["absolute"],
    )
    las_matrix = series.las
    names = list(frame.names)
    loc_mod.save_las_csv(out / "las.csv", las_matrix, names)
    loc_mod.save_matrix_csv(out / "c_matrix.csv", weights.c, names, names)
    channels = [f"ch{k}" for k in range(weights.e.shape[1])]
    loc_mod.save_matrix_csv(out / "e_matrix.csv", weights.e, names, channels)
    print(f"localization weights mode: {weights.mode}")
    print(f"LAS -> {out / 'las.csv'}")
    return 0


def _read_scores_csv(path: str) -> np.ndarray:
    with open(_require_file(path), "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or "anomaly_score" not in header:
            raise DataError(f"{path}: expected a scores CSV with an anomaly_score column")
        idx = header.index("anomaly_score")
        values = []
        for line_no, row in enumerate(reader, start=2):
            try:
                values.append(float(row[idx]))
            except (ValueError, IndexError):
                raise DataError(f"{path}:{line_no}: bad anomaly_score cell") from None
    return np.array(values)


def _read_las_csv(path: str) -> np.ndarray:
    with open(_require_file(path), "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        next(reader, None)
        rows = [[float(c) for c in row] for row in reader]
    return np.array(rows)


def cmd_eval(resolved: dict) -> int:
    out = _prepare_out(resolved, "eval")
    scores = _read_scores_csv(resolved["scores"])
    frame = data_mod.load_csv(_require_file(resolved["data"]), resolved["label_column"])
    if frame.labels is None:
        raise DataError(f"{resolved['data']}: no ground-truth label column")
    if len(scores) != frame.n:
        raise DataError(f"{len(scores)} scores for {frame.n} labeled timesteps")
    labels = frame.labels
    if labels.sum() == 0:
        raise DataError(f"{resolved['data']}: no positive labels; F1 undefined")

    f1, precision, recall, h2 = metrics_mod.best_f1_sweep(scores, labels)
    thresholds, sp, sr, sf = metrics_mod.f1_sweep_curve(scores, labels)
    metrics_mod.write_sweep_csv(out / "sweep.csv", thresholds, sp, sr, sf)

    horizon = resolved["horizon"]
    if horizon is None:
        horizon = 2 * resolved["t_window"]
    pred_events = metrics_mod.events_from_labels(scores >= h2)
    true_events = metrics_mod.events_from_labels(labels)
    aff = metrics_mod.affiliation_pr(pred_events, true_events, horizon)

    report = {
        "detection_best_f1": f1,
        "detection_precision": precision,
        "detection_recall": recall,
        "detection_h2": h2,
        "affiliation_precision": aff.precision,
        "affiliation_recall": aff.recall,
        "affiliation_f1": aff.f1,
        "affiliation_horizon": horizon,
        "affiliation_empty_predictions": aff.empty_predictions,
    }

    if resolved["las"] is not None and resolved["loc_truth"] is not None:
        las_matrix = _read_las_csv(resolved["las"])
        truth = data_mod.load_loc_truth(_require_file(resolved["loc_truth"]))
        p_values = [int(p) for p in resolved["p_percents"].split(",") if p.strip()]
        ranked_cache = {
            t: loc_mod.rank_series(las_matrix[t], las_matrix.shape[1])
            for t in truth.by_time
            if t < las_matrix.shape[0]
        }
        for p in p_values:
            hrs = [
                metrics_mod.hit_rate(ranked_cache[t], g, p)
                for t, g in truth.by_time.items()
                if t in ranked_cache
            ]
            ndcgs = [
                metrics_mod.ndcg(ranked_cache[t], g, p)
                for t, g in truth.by_time.items()
                if t in ranked_cache
            ]
            report[f"hit_rate_at_{p}"] = float(np.mean(hrs))
            report[f"ndcg_at_{p}"] = float(np.mean(ndcgs))
        segments = metrics_mod.events_from_labels(labels)
        seg_truth = [truth.segment_set(seg) for seg in segments]
        usable = [(s, g) for s, g in zip(segments, seg_truth) if g]
        if usable:
            report["ips"] = metrics_mod.ips(
                las_matrix, [s for s, _ in usable], [g for _, g in usable]
            )

    metrics_mod.write_report(out / "report.txt", report)
    for key, value in report.items():
        print(f"{key}={value}")
    return 0


def cmd_simulate(resolved: dict) -> int:
    out = _prepare_out(resolved, "simulate")
    frame = data_mod.simulate_mean_shift(
        n=resolved["n"],
        t1=resolved["t1"],
        t2=resolved["t2"],
        delta=resolved["delta"],
        mu=(resolved["mu1"], resolved["mu2"]),
        sigma=(resolved["sigma1"], resolved["sigma2"]),
        seed=resolved["seed"],
    )
    if resolved["inject_kind"] is not None:
        if resolved["inject_start"] is None or resolved["inject_end"] is None:
            raise ConfigError("inject_kind needs inject_start and inject_end")
        frame = data_mod.inject_anomaly(
            frame,
            resolved["inject_kind"],
            resolved["inject_series"],
            (resolved["inject_start"], resolved["inject_end"]),
            resolved["inject_magnitude"],
            seed=resolved["seed"] + 1,
        )
    data_mod.save_csv(frame, out / "sim.csv")
    data_mod.save_loc_truth(frame.loc_truth, out / "sim_loc_truth.csv")
    print(f"wrote {frame.n} x {frame.d} frame -> {out / 'sim.csv'}")
    return 0


def cmd_star_check(resolved: dict) -> int:
    out = None
    if resolved["out"] is not None:
        out = _prepare_out(resolved, "star-check")
    results = star_verify.run_grid(
        n=resolved["configs"], base_seed=resolved["seed"], tolerance=resolved["tolerance"]
    )
    lines = []
    all_pass = True
    for config, reports in results:
        for mode in ("skip", "no_skip"):
            report = reports[mode]
            lines.append(f"{config.describe()} {report.line()}")
            if report.passed is False:
                all_pass = False
    for line in lines:
        print(line)
    summary = f"aggregate={'PASS' if all_pass else 'FAIL'} configs={len(results)}"
    print(summary)
    if out is not None:
        with open(out / "star_report.txt", "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines + [summary]) + "\n")
    return 0 if all_pass else 4


_COMMANDS = {
    "train": (cmd_train, "fit a model on a training CSV and write a checkpoint"),
    "score": (cmd_score, "score a CSV per timestep with a trained checkpoint"),
    "localize": (cmd_localize, "export localization scores and contribution matrices"),
    "eval": (cmd_eval, "evaluate scores (and optionally localization) against labels"),
    "simulate": (cmd_simulate, "generate the bivariate mean-shift synthetic CSV"),
    "star-check": (cmd_star_check, "verify the unrolled forward-pass algebra"),
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="alorat",
        description="Low-rank-attention anomaly diagnosis for multivariate time series",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in _COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument(
            "--config", default=None, required=(name != "star-check"),
            help="key=value config file with a [%s] section" % name,
        )
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None)
    args = parser.parse_args(argv)

    try:
        resolved = _load_section(
            args.config, args.command, {"seed": args.seed, "out": args.out}
        )
        return _COMMANDS[args.command][0](resolved)
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except FileNotFoundError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
