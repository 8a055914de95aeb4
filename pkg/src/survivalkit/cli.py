"""Batch command-line front end.

Subcommands compose the pipeline through file artifacts:

    simulate   hazard/cohort spec JSON -> survival CSV or event-log CSV
    featurize  event-log CSV -> feature CSV (labels, features, segments)
    fit        feature CSV -> model JSON (km | cox | forest | binary-forest)
    predict    model JSON + feature CSV -> predictions CSV (+ curve CSVs)
    evaluate   model JSON or model name + feature CSV -> error curve CSV,
               summary JSON, calibration CSV (holdout or bootstrap-cv)
    importance forest JSON + feature CSV -> importance CSV

Every subcommand is a pure function of its input files, flags, and seed.
Flag values override config-file values, which override defaults; the
effective configuration is echoed into summary JSON outputs. Plots are
emitted as data files; rendering is left to external tools. The env var
SURVIVALKIT_THREADS caps internal parallelism (default 1).
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from datetime import date
from pathlib import Path

import numpy as np
import pandas as pd

from survivalkit import churn, evaluation, simulate
from survivalkit.cox import CoxConfig, cox_from_dict, cox_to_dict, fit_cox, predict_cox_survival
from survivalkit.forest import (
    ForestConfig,
    binary_forest_from_dict,
    binary_forest_to_dict,
    fit_binary_forest,
    fit_forest,
    forest_from_dict,
    forest_to_dict,
    predict_binary_many,
    predict_forest_curves,
    variable_importance,
)
from survivalkit.survival import SurvivalCurve, SurvivalDataset, kaplan_meier, write_curve_csv
from survivalkit.tree import TreeConfig

MODEL_NAMES = ("km", "cox", "forest", "binary-forest")


def _n_jobs() -> int:
    return max(1, int(os.environ.get("SURVIVALKIT_THREADS", "1")))


# ---------------------------------------------------------------------------
# config resolution: flags > config file > defaults


def _resolve(args: argparse.Namespace, defaults: dict) -> dict:
    file_cfg = {}
    if getattr(args, "config", None):
        with open(args.config) as fh:
            file_cfg = json.load(fh)
    eff = {}
    for key, default in defaults.items():
        flag = getattr(args, key, None)
        if flag is not None:
            eff[key] = flag
        elif key in file_cfg:
            eff[key] = file_cfg[key]
        else:
            eff[key] = default
    return eff


def _forest_config(eff: dict) -> ForestConfig:
    return ForestConfig(
        n_trees=int(eff["n_trees"]),
        tree=TreeConfig(
            alpha=float(eff["alpha"]),
            min_node_size=int(eff["min_node_size"]),
            min_split_size=int(eff["min_split_size"]),
            mtry=None if eff["mtry"] is None else int(eff["mtry"]),
        ),
        rng_seed=int(eff["seed"]),
    )


_FIT_DEFAULTS = {
    "seed": 0,
    "n_trees": 100,
    "alpha": 0.05,
    "mtry": None,
    "min_node_size": 20,
    "min_split_size": 60,
    "segment": None,
    "features": None,
}


# ---------------------------------------------------------------------------
# feature-frame helpers


def _load_features(path, segment=None, features=None):
    df = churn.read_feature_csv(path)
    if segment is not None:
        if "segment" not in df.columns:
            raise ValueError("schema mismatch: no 'segment' column to filter on")
        df = df[df["segment"] == segment]
        if df.empty:
            raise ValueError(f"empty after filter: no rows with segment {segment!r}")
    reserved = {"player_id", "segment", "time", "event"}
    all_feats = [c for c in df.columns if c not in reserved]
    if features is not None:
        missing = [f for f in features if f not in all_feats]
        if missing:
            raise ValueError(f"schema mismatch: missing feature columns {missing}")
        all_feats = list(features)
    X = df[all_feats].apply(pd.to_numeric).to_numpy(dtype=float)
    if np.isnan(X).any():
        # purchase-recency blanks for never-payers: impute past the window
        lifetime = pd.to_numeric(df["time"]).to_numpy(dtype=float)
        for j in range(X.shape[1]):
            col = X[:, j]
            col[np.isnan(col)] = lifetime[np.isnan(col)] + 1.0
    data = SurvivalDataset(
        times=pd.to_numeric(df["time"]).to_numpy(dtype=float),
        events=pd.to_numeric(df["event"]).to_numpy(dtype=int).astype(bool),
        X=X,
        feature_names=all_feats,
    )
    ids = (
        df["player_id"].astype(str).tolist()
        if "player_id" in df.columns
        else [f"row_{i:05d}" for i in range(len(df))]
    )
    return data, ids


def _save_json(doc: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def _load_model(path) -> dict:
    with open(path) as fh:
        doc = json.load(fh)
    if "model" not in doc:
        raise ValueError(f"schema mismatch: no 'model' field in {path}")
    return doc


def _model_curves(doc: dict, data: SurvivalDataset):
    """Per-row survival curves from a loaded model document."""
    kind = doc["model"]
    if kind == "km":
        curve = SurvivalCurve(np.asarray(doc["times"]), np.asarray(doc["probs"]))
        return [curve] * data.n
    if kind == "cox":
        model = cox_from_dict(doc)
        _check_schema(model.feature_names, data.feature_names)
        return [predict_cox_survival(model, x) for x in data.X]
    if kind == "forest":
        forest = forest_from_dict(doc)
        _check_schema(forest.feature_names, data.feature_names)
        probs = predict_forest_curves(forest, data.X)
        return [SurvivalCurve(forest.grid, row) for row in probs]
    raise ValueError(f"model kind {kind!r} does not produce survival curves")


def _check_schema(expected, actual):
    if list(expected) != list(actual):
        raise ValueError(
            f"schema mismatch: model features {list(expected)} != data features {list(actual)}"
        )


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(args) -> int:
    with open(args.spec) as fh:
        spec_doc = json.load(fh)
    seed = args.seed if args.seed is not None else int(spec_doc.get("seed", 0))
    kind = spec_doc.get("type", "survival")
    if kind == "survival":
        fields = {k: v for k, v in spec_doc.items() if k != "type"}
        fields["seed"] = seed
        if "beta" in fields:
            fields["beta"] = tuple(fields["beta"])
        data = simulate.sample_survival(simulate.HazardSpec(**fields))
        from survivalkit.survival import write_dataset_csv

        write_dataset_csv(data, args.output)
    elif kind == "events":
        segments = {
            name: simulate.SegmentSpec(**seg)
            for name, seg in spec_doc.get("segments", {}).items()
        }
        cohort_fields = {
            k: v
            for k, v in spec_doc.items()
            if k in ("registration_window_days", "observation_days")
        }
        if "start_date" in spec_doc:
            cohort_fields["start_date"] = date.fromisoformat(spec_doc["start_date"])
        cohort = simulate.CohortSpec(segments=segments, seed=seed, **cohort_fields)
        churn.write_event_log(simulate.sample_event_log(cohort), args.output)
    else:
        raise ValueError(f"unknown simulation type {kind!r}")
    return 0


def cmd_featurize(args) -> int:
    df = churn.load_event_log(args.input)
    observation_end = (
        date.fromisoformat(args.observation_end) if args.observation_end else None
    )
    config = churn.FeatureConfig(
        first_weeks=args.first_weeks,
        moving_window_days=args.moving_window_days,
        last_days=args.last_days,
    )
    rows = churn.featurize_frame(
        df,
        observation_end=observation_end,
        config=config,
        inactivity_days=args.inactivity_days,
        whale_spend_quantile=args.whale_quantile,
    )
    churn.write_feature_csv(rows, args.output)
    return 0


def cmd_fit(args) -> int:
    eff = _resolve(args, _FIT_DEFAULTS)
    features = eff["features"].split(",") if isinstance(eff["features"], str) else eff["features"]
    data, _ = _load_features(args.input, segment=eff["segment"], features=features)
    model = args.model
    if model == "km":
        curve = kaplan_meier(data)
        doc = {
            "model": "km",
            "features": data.feature_names,
            "times": curve.times.tolist(),
            "probs": curve.probs.tolist(),
        }
    elif model == "cox":
        doc = cox_to_dict(fit_cox(data, CoxConfig()))
    elif model == "forest":
        forest = fit_forest(data, _forest_config(eff), n_jobs=_n_jobs())
        doc = forest_to_dict(forest)
    elif model == "binary-forest":
        bf = fit_binary_forest(
            data.X,
            data.events.astype(int),
            _forest_config(eff),
            feature_names=data.feature_names,
            n_jobs=_n_jobs(),
        )
        doc = binary_forest_to_dict(bf)
    else:
        raise ValueError(f"unknown model {args.model!r}; expected one of {MODEL_NAMES}")
    doc["fit_config"] = {k: eff[k] for k in sorted(eff)}
    _save_json(doc, args.output)
    return 0


def cmd_predict(args) -> int:
    doc = _load_model(args.model)
    data, ids = _load_features(args.input, segment=args.segment)

    if doc["model"] == "binary-forest":
        bf = binary_forest_from_dict(doc)
        _check_schema(bf.feature_names, data.feature_names)
        probs = predict_binary_many(bf, data.X)
        with open(args.output, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["player_id", "churn_probability"])
            for pid, p in zip(ids, probs):
                w.writerow([pid, repr(float(p))])
        return 0

    curves = _model_curves(doc, data)
    curves_dir = Path(args.curves_dir) if args.curves_dir else None
    if curves_dir is not None:
        curves_dir.mkdir(parents=True, exist_ok=True)
    out_dir = Path(args.output).resolve().parent
    with open(args.output, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["player_id", "median_survival", "at_risk", "curve_file"])
        from survivalkit.survival import median_survival

        for pid, curve in zip(ids, curves):
            med = median_survival(curve)
            at_risk = int(med is not None and med <= args.horizon)
            curve_file = ""
            if curves_dir is not None:
                curve_path = curves_dir / f"curve_{pid}.csv"
                write_curve_csv(curve, curve_path)
                curve_file = os.path.relpath(curve_path, out_dir)
            w.writerow([pid, "" if med is None else repr(float(med)), at_risk, curve_file])
    return 0


_EVAL_DEFAULTS = {"seed": 0, "n_boot": 1000, "horizon": None, "segment": None, **{
    k: v for k, v in _FIT_DEFAULTS.items() if k not in ("seed", "segment", "features")
}}


def cmd_evaluate(args) -> int:
    eff = _resolve(args, _EVAL_DEFAULTS)
    data, _ = _load_features(args.input, segment=eff["segment"])
    grid = evaluation.default_grid(data, horizon=eff["horizon"])
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)

    is_path = os.path.exists(args.model) or args.model not in MODEL_NAMES
    if args.mode == "holdout":
        if not is_path:
            raise ValueError("holdout mode evaluates a fitted model JSON file")
        doc = _load_model(args.model)
        curves = _model_curves(doc, data)
        error_curve = evaluation.brier_curve(curves, data, grid)
        from survivalkit.survival import median_survival

        medians = [median_survival(c) for c in curves]
        model_label = doc["model"]
        n_boot = 0
        ibs = error_curve.ibs
        mean_curve = error_curve
    else:
        if is_path:
            raise ValueError("bootstrap-cv mode refits a model by name (km, cox, forest)")
        spec = _model_spec_by_name(args.model, eff)
        result = evaluation.bootstrap_cv_error(
            spec, data, int(eff["n_boot"]), grid, rng_seed=int(eff["seed"]), n_jobs=_n_jobs()
        )
        mean_curve = result.mean_curve
        ibs = float(np.mean(result.ibs_samples))
        n_boot = int(eff["n_boot"])
        model_label = args.model
        # calibration from a fit on the full data (the CV curves are per-replicate)
        predict = spec(data)
        from survivalkit.survival import median_survival

        medians = [median_survival(c) for c in predict(data.X)]

    evaluation.write_error_curve_csv(mean_curve, out / "error_curve.csv")
    pairs = evaluation.calibration_pairs(medians, data)
    evaluation.write_calibration_csv(pairs, out / "calibration.csv")
    horizon = eff["horizon"] if eff["horizon"] is not None else float(grid[-1])
    summary = {
        "model": model_label,
        "ibs": ibs,
        "n_boot": n_boot,
        "horizon": horizon,
        "config": {k: eff[k] for k in sorted(eff)},
    }
    _save_json(summary, out / "summary.json")
    return 0


def _model_spec_by_name(name: str, eff: dict):
    if name == "km":
        return evaluation.km_spec()
    if name == "cox":
        return evaluation.cox_spec()
    if name == "forest":
        return evaluation.forest_spec(_forest_config(eff), n_jobs=1)
    raise ValueError(f"unknown model {name!r}; expected km, cox, or forest")


def cmd_importance(args) -> int:
    doc = _load_model(args.model)
    if doc["model"] != "forest":
        raise ValueError("importance requires a fitted survival forest JSON")
    forest = forest_from_dict(doc)
    data, _ = _load_features(args.input, segment=args.segment, features=forest.feature_names)
    report = variable_importance(
        forest, data, n_repeats=args.n_repeats, rng_seed=args.seed, horizon=args.horizon
    )
    order = np.argsort(report.rank)
    with open(args.output, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["feature", "importance", "stderr", "rank"])
        for j in order:
            w.writerow(
                [
                    report.feature_names[j],
                    repr(float(report.importance[j])),
                    repr(float(report.stderr[j])),
                    int(report.rank[j]),
                ]
            )
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="survivalkit",
        description="Censored time-to-event toolkit: simulate, featurize, fit, predict, evaluate, importance.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate survival or event-log CSV from a spec JSON")
    p.add_argument("--spec", required=True, help="hazard or cohort spec JSON file")
    p.add_argument("--output", required=True)
    p.add_argument("--seed", type=int, default=None, help="overrides the spec seed")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("featurize", help="event-log CSV -> labeled feature CSV")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--inactivity-days", type=int, default=10)
    p.add_argument("--observation-end", default=None, help="YYYY-MM-DD; default last event")
    p.add_argument("--first-weeks", type=int, default=2)
    p.add_argument("--moving-window-days", type=int, default=7)
    p.add_argument("--last-days", type=int, default=7)
    p.add_argument("--whale-quantile", type=float, default=0.90)
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("fit", help="feature CSV -> model JSON")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--model", required=True, choices=MODEL_NAMES)
    p.add_argument("--config", default=None, help="JSON config file (flags win)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--n-trees", type=int, default=None, dest="n_trees")
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--mtry", type=int, default=None)
    p.add_argument("--min-node-size", type=int, default=None, dest="min_node_size")
    p.add_argument("--min-split-size", type=int, default=None, dest="min_split_size")
    p.add_argument("--segment", default=None, choices=churn.SEGMENTS)
    p.add_argument("--features", default=None, help="comma-separated feature subset")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="model JSON + feature CSV -> predictions CSV")
    p.add_argument("--input", required=True)
    p.add_argument("--model", required=True, help="model JSON file")
    p.add_argument("--output", required=True)
    p.add_argument("--horizon", type=float, default=30.0, help="at-risk threshold in days")
    p.add_argument("--segment", default=None, choices=churn.SEGMENTS)
    p.add_argument("--curves-dir", default=None, help="also write one curve CSV per player")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="error curve + summary + calibration")
    p.add_argument("--input", required=True)
    p.add_argument("--model", required=True, help="model JSON (holdout) or name (bootstrap-cv)")
    p.add_argument("--output", required=True, help="output directory")
    p.add_argument("--mode", choices=("holdout", "bootstrap-cv"), default="holdout")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--n-boot", type=int, default=None, dest="n_boot")
    p.add_argument("--horizon", type=float, default=None)
    p.add_argument("--segment", default=None, choices=churn.SEGMENTS)
    p.add_argument("--n-trees", type=int, default=None, dest="n_trees")
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--mtry", type=int, default=None)
    p.add_argument("--min-node-size", type=int, default=None, dest="min_node_size")
    p.add_argument("--min-split-size", type=int, default=None, dest="min_split_size")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("importance", help="forest JSON + feature CSV -> importance CSV")
    p.add_argument("--input", required=True)
    p.add_argument("--model", required=True, help="forest model JSON")
    p.add_argument("--output", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-repeats", type=int, default=5, dest="n_repeats")
    p.add_argument("--horizon", type=float, default=None)
    p.add_argument("--segment", default=None, choices=churn.SEGMENTS)
    p.set_defaults(func=cmd_importance)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # one-line machine-parsable error contract
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
