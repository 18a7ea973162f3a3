"""Reproducible experiment driver.

Subcommands: simulate, run, sweep, verify, explain. Every run is governed by
one JSON config (flags override file values; the merged config is always
written to the output directory) and one root seed that expands into
purpose-scoped child seeds, so a single (config, seed) pair reproduces every
artifact byte for byte. Wall-clock timings live only in the run manifest,
never in reports or model files.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, backend
from .attribution import (
    agreement,
    ensemble_spread,
    explain_rows,
    export_attributions_csv,
    export_spread_csv,
    save_agreement,
)
from .data import Dataset, SimConfig, load_csv, load_dataset, save_dataset, simulate_dataset, split
from .evaluate import (
    EvalReport,
    PredictionPanel,
    evaluate_model,
    export_panel_csv,
    export_pvalue_hist_csv,
)
from .model import config_hash, forward_batch, load_model, save_model
from .rng import child_seed, make_rng
from .training import (
    BootstrapPool,
    TrainConfig,
    build_pool,
    load_pool,
    save_pool,
    train_ensemble,
    train_stable,
    train_standard,
)

MODEL_TAGS = ("standard", "stable", "ensemble")

DEFAULT_CONFIG = {
    "schema_version": 1,
    "dataset": {
        "source": "simulate",
        "n": 4000,
        "p_binary": 2,
        "p_informative": 10,
        "p_noise": 3,
        "beta_low": 3.0,
        "beta_high": 6.0,
    },
    "split": {"test_fraction": 0.2},
    # the top-level "workers" knob is the single concurrency setting
    "train": {k: v for k, v in TrainConfig().to_dict().items() if k != "workers"},
    "eval": {
        "threshold": 0.05,
        "explain_rows": 500,
        "explain_permutations": 128,
        "background_rows": 100,
        "spread_members": 20,
        "spread_rows": 100,
        "spread_permutations": 32,
        "violin_rows": 12,
    },
    "sweep": {"lambda_grid": [0.01, 0.1, 1.0, 10.0], "subsample_grid": [20, 50, 100], "sweep_lambda": 0.1},
    "seed": 20260808,
    "replicates": 1,
    "workers": 1,
}


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


def _deep_merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = value
    return out


def load_config(path=None, overrides: dict | None = None) -> dict:
    """Default config <- config file <- CLI overrides, in that order."""
    cfg = DEFAULT_CONFIG
    if path is not None:
        with open(Path(path), encoding="utf-8") as fh:
            file_cfg = json.load(fh)
        version = file_cfg.get("schema_version", 1)
        if version != 1:
            raise ValueError(f"unsupported config schema_version {version}")
        unknown = set(file_cfg) - set(DEFAULT_CONFIG)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        cfg = _deep_merge(cfg, file_cfg)
    if overrides:
        cfg = _deep_merge(cfg, overrides)
    return cfg


def _train_config(cfg: dict, seed: int, **replacements) -> TrainConfig:
    d = dict(cfg["train"])
    d["seed"] = seed
    d["workers"] = cfg.get("workers", 1)
    d.update(replacements)
    return TrainConfig.from_dict(d)


def _write_json(path, payload) -> None:
    with open(Path(path), "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1)
        fh.write("\n")


def _write_config(cfg: dict, out_dir: Path) -> str:
    _write_json(out_dir / "config.json", cfg)
    return config_hash(cfg)


def _make_dataset(cfg: dict, seed: int) -> Dataset:
    spec = cfg["dataset"]
    if spec["source"] == "simulate":
        sim = SimConfig(
            n=spec["n"],
            p_binary=spec["p_binary"],
            p_informative=spec["p_informative"],
            p_noise=spec["p_noise"],
            beta_low=spec["beta_low"],
            beta_high=spec["beta_high"],
            seed=child_seed(seed, "simulate"),
        )
        return simulate_dataset(sim)
    if spec["source"] == "csv":
        ds, n_dropped = load_csv(
            spec["path"], spec["label_column"], spec.get("feature_columns")
        )
        if n_dropped:
            print(f"dropped {n_dropped} rows with missing values", file=sys.stderr)
        return ds
    raise ValueError(f"unknown dataset source {spec['source']!r}")


def cmd_simulate(cfg: dict, out_dir) -> Path:
    """Write the simulated dataset CSV plus its provenance sidecar."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if cfg["dataset"]["source"] != "simulate":
        raise ValueError("cmd_simulate requires a simulate dataset source")
    ds = _make_dataset(cfg, cfg["seed"])
    path = out_dir / "dataset.csv"
    save_dataset(ds, path, seed=cfg["seed"], source="simulate")
    _write_config(cfg, out_dir)
    print(f"wrote {path} ({ds.n} rows x {ds.p} features)")
    return path


def _predictions(models: dict, pool: BootstrapPool, X_test: np.ndarray) -> tuple[dict, np.ndarray]:
    boot_preds = np.column_stack([forward_batch(m, X_test) for m in pool.members])
    preds = {
        "standard": forward_batch(models["standard"], X_test),
        "stable": forward_batch(models["stable"], X_test),
        "ensemble": models["ensemble"].predict(X_test),
    }
    return preds, boot_preds


def _evaluate_all(preds: dict, boot_preds, labels, threshold: float, meta: dict) -> dict:
    panel = PredictionPanel.build(preds["standard"], boot_preds)
    reports = {}
    for tag in MODEL_TAGS:
        reports[tag] = evaluate_model(
            preds[tag],
            preds["standard"],
            panel,
            labels,
            threshold=threshold,
            metadata={**meta, "model": tag},
        )
    return reports


SUMMARY_FIELDS = ("mad", "auc", "sig_fraction", "closer_fraction")


def _write_summary_csv(path, rows: list[dict]) -> None:
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        header = ["model"] + list(SUMMARY_FIELDS)
        writer.writerow(header)
        for row in rows:
            writer.writerow([row["model"]] + [repr(float(row[f])) for f in SUMMARY_FIELDS])


def _replicate_run(cfg: dict, rep: int, rep_dir: Path, timings: dict) -> dict:
    """One full pipeline pass; returns the per-model summary rows."""
    rep_root = child_seed(cfg["seed"], "replicate", rep)
    eval_cfg = cfg["eval"]
    for sub in ("data", "pool", "models", "reports", "plots", "attribution"):
        (rep_dir / sub).mkdir(parents=True, exist_ok=True)

    def _stage(name, fn):
        t0 = time.perf_counter()
        try:
            result = fn()
        except Exception as exc:
            raise StageError(name, exc) from exc
        timings[f"replicate_{rep}/{name}"] = round(time.perf_counter() - t0, 3)
        return result

    def _data_stage():
        ds = _make_dataset(cfg, rep_root)
        train, test = split(ds, cfg["split"]["test_fraction"], child_seed(rep_root, "split"))
        save_dataset(train, rep_dir / "data" / "train.csv", seed=rep_root, source=cfg["dataset"]["source"])
        save_dataset(test, rep_dir / "data" / "test.csv", seed=rep_root, source=cfg["dataset"]["source"])
        return train, test

    train, test = _stage("data", _data_stage)

    tc = _train_config(cfg, child_seed(rep_root, "train"))
    pool = _stage("build_pool", lambda: build_pool(train, tc))
    _stage("save_pool", lambda: save_pool(pool, rep_dir / "pool", config=tc))

    cfg_hash = config_hash(cfg)
    provenance = {"config_hash": cfg_hash, "replicate": rep, "seed": tc.seed}

    def _train_stage():
        models = {
            "standard": train_standard(train, tc),
            "stable": train_stable(train, pool, tc),
            "ensemble": train_ensemble(pool),
        }
        save_model(
            models["standard"],
            rep_dir / "models" / "standard.json",
            standardisation=train.standardisation,
            provenance={**provenance, "model": "standard"},
        )
        save_model(
            models["stable"],
            rep_dir / "models" / "stable.json",
            standardisation=train.standardisation,
            provenance={**provenance, "model": "stable", "lambda": tc.lam},
        )
        _write_json(
            rep_dir / "models" / "ensemble.json",
            {
                "schema_version": 1,
                "aggregation": "mean_probability",
                "members": [f"../pool/member_{m:03d}.json" for m in range(pool.size)],
                "provenance": {**provenance, "model": "ensemble"},
            },
        )
        return models

    models = _stage("train", _train_stage)

    def _eval_stage():
        preds, boot_preds = _predictions(models, pool, test.features)
        reports = _evaluate_all(
            preds,
            boot_preds,
            test.labels,
            eval_cfg["threshold"],
            {
                "replicate": rep,
                "dataset": cfg["dataset"]["source"],
                "config_hash": cfg_hash,
                "backend": backend.NAME,
            },
        )
        for tag in MODEL_TAGS:
            reports[tag].save(rep_dir / "reports" / f"{tag}.json")
        rows = [{"model": tag, **{f: getattr(reports[tag], f) for f in SUMMARY_FIELDS}} for tag in MODEL_TAGS]
        _write_summary_csv(rep_dir / "reports" / "summary.csv", rows)

        # plot data: per-row violins on a seeded row sample, p-value histograms
        n_violin = min(eval_cfg["violin_rows"], test.n)
        violin_rows = np.sort(make_rng(child_seed(rep_root, "violin-rows")).permutation(test.n)[:n_violin])
        panel = PredictionPanel.build(preds["standard"][violin_rows], boot_preds[violin_rows])
        export_panel_csv(
            panel,
            rep_dir / "plots" / "violins.csv",
            row_ids=violin_rows,
            extra_preds={tag: preds[tag][violin_rows] for tag in MODEL_TAGS},
        )
        export_pvalue_hist_csv(
            {tag: reports[tag].pvalues for tag in MODEL_TAGS},
            rep_dir / "plots" / "pvalue_hist.csv",
        )
        return preds, rows

    preds, rows = _stage("evaluate", _eval_stage)

    def _attribution_stage():
        bg_rng = make_rng(child_seed(rep_root, "background"))
        background = train.features[bg_rng.permutation(train.n)[: min(eval_cfg["background_rows"], train.n)]]
        n_explain = min(eval_cfg["explain_rows"], test.n)
        explain_idx = np.sort(make_rng(child_seed(rep_root, "explain-rows")).permutation(test.n)[:n_explain])
        attrs = {}
        for tag in ("standard", "stable"):
            predict = lambda X, m=models[tag]: forward_batch(m, X)
            attrs[tag] = explain_rows(
                predict,
                test.features[explain_idx],
                background,
                test.feature_names,
                n_permutations=eval_cfg["explain_permutations"],
                seed=child_seed(rep_root, "attribution", tag),
                row_ids=explain_idx,
            )
            export_attributions_csv(attrs[tag], rep_dir / "attribution" / f"{tag}_attr.csv")
        save_agreement(agreement(attrs["stable"], attrs["standard"]), rep_dir / "attribution" / "agreement.json")

        k = min(eval_cfg["spread_members"], pool.size)
        member_ids = np.sort(make_rng(child_seed(rep_root, "spread-members")).permutation(pool.size)[:k])
        n_spread = min(eval_cfg["spread_rows"], test.n)
        spread_idx = np.sort(make_rng(child_seed(rep_root, "spread-rows")).permutation(test.n)[:n_spread])
        spread = ensemble_spread(
            [lambda X, m=pool.members[mid]: forward_batch(m, X) for mid in member_ids],
            test.features[spread_idx],
            background,
            test.feature_names,
            n_permutations=eval_cfg["spread_permutations"],
            seed=child_seed(rep_root, "spread"),
            row_ids=spread_idx,
        )
        export_spread_csv(
            spread,
            rep_dir / "attribution" / "spread_values.csv",
            rep_dir / "attribution" / "spread_rankings.csv",
        )

    _stage("attribution", _attribution_stage)
    return rows


def _aggregate_summary(per_replicate: list[list[dict]], path) -> None:
    """Mean and stddev over replicates (plain ordering for 1 replicate)."""
    n_rep = len(per_replicate)
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        header = ["model", "replicates"]
        for f in SUMMARY_FIELDS:
            header += [f"{f}_mean", f"{f}_std"]
        writer.writerow(header)
        for tag in MODEL_TAGS:
            row = [tag, n_rep]
            for f in SUMMARY_FIELDS:
                vals = np.array([rows[[r["model"] for r in rows].index(tag)][f] for rows in per_replicate])
                row.append(repr(float(vals.mean())))
                row.append(repr(float(vals.std(ddof=1))) if n_rep > 1 else repr(0.0))
            writer.writerow(row)


def cmd_run(cfg: dict, out_dir) -> dict:
    """split -> pool -> standard/stable/ensemble -> metrics -> attribution."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg_hash = _write_config(cfg, out_dir)
    timings: dict = {}
    manifest = {
        "schema_version": 1,
        "tool_version": __version__,
        "backend": backend.NAME,
        "config_hash": cfg_hash,
        "seed": cfg["seed"],
        "replicates": cfg["replicates"],
        "complete": False,
        "failed_stage": None,
        "paths": {},
        "timings": timings,
    }
    t_start = time.perf_counter()
    per_replicate = []
    try:
        for rep in range(cfg["replicates"]):
            rep_dir = out_dir / f"replicate_{rep:03d}"
            per_replicate.append(_replicate_run(cfg, rep, rep_dir, timings))
            manifest["paths"][f"replicate_{rep:03d}"] = str(rep_dir)
        _aggregate_summary(per_replicate, out_dir / "summary.csv")
        manifest["paths"]["summary"] = str(out_dir / "summary.csv")
        manifest["complete"] = True
        for tag in MODEL_TAGS:
            vals = {
                f: np.mean([rows[[r["model"] for r in rows].index(tag)][f] for rows in per_replicate])
                for f in SUMMARY_FIELDS
            }
            print(
                f"{tag:>8}: MAD {vals['mad']:.4f}  AUC {vals['auc']:.4f}  "
                f"sig_fraction {vals['sig_fraction']:.4f}  closer_fraction {vals['closer_fraction']:.4f}"
            )
        print(f"run complete: {out_dir / 'summary.csv'}")
    except StageError as exc:
        manifest["failed_stage"] = exc.stage
        raise
    finally:
        timings["total"] = round(time.perf_counter() - t_start, 3)
        _write_json(out_dir / "manifest.json", manifest)
    return manifest


def cmd_sweep(cfg: dict, out_dir) -> Path:
    """Stability/AUC against the lambda grid and the subsample-size grid.

    One pool is built at the replicate-0 seeds and shared by every grid
    point; the standard and ensemble reference metrics are included.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_config(cfg, out_dir)
    sweep_cfg = cfg["sweep"]
    lambda_grid = list(sweep_cfg["lambda_grid"])
    subsample_grid = list(sweep_cfg["subsample_grid"])
    if not lambda_grid or not subsample_grid:
        raise ValueError("sweep grids must be nonempty")

    rep_root = child_seed(cfg["seed"], "replicate", 0)
    ds = _make_dataset(cfg, rep_root)
    train, test = split(ds, cfg["split"]["test_fraction"], child_seed(rep_root, "split"))
    tc = _train_config(cfg, child_seed(rep_root, "train"))
    pool = build_pool(train, tc)
    boot_preds = np.column_stack([forward_batch(m, test.features) for m in pool.members])
    panel = PredictionPanel.build(boot_preds[:, 0], boot_preds)
    threshold = cfg["eval"]["threshold"]

    standard = train_standard(train, tc)
    standard_preds = forward_batch(standard, test.features)
    ensemble_preds = train_ensemble(pool).predict(test.features)

    def _metrics(preds) -> dict:
        report = evaluate_model(preds, standard_preds, panel, test.labels, threshold=threshold)
        return {"mad": report.mad, "auc": report.auc, "sig_fraction": report.sig_fraction}

    grid = [("lambda", lam, {"lambda": lam}) for lam in lambda_grid]
    grid += [
        ("subsample", m_sub, {"lambda": sweep_cfg["sweep_lambda"], "subsample_size": m_sub})
        for m_sub in subsample_grid
    ]

    def _grid_point(args):
        kind, param, over = args
        model = train_stable(train, pool, TrainConfig.from_dict({**tc.to_dict(), **over}))
        return kind, param, forward_batch(model, test.features)

    # grid points are seed-fixed pure functions, so results are
    # schedule-independent; the compiled kernel trains without the GIL
    workers = cfg.get("workers", 1)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            grid_preds = list(ex.map(_grid_point, grid))
    else:
        grid_preds = [_grid_point(g) for g in grid]

    rows = [
        {"kind": "reference", "model": "standard", "param": "", **_metrics(standard_preds)},
        {"kind": "reference", "model": "ensemble", "param": "", **_metrics(ensemble_preds)},
    ]
    rows += [
        {"kind": kind, "model": "stable", "param": param, **_metrics(preds)}
        for kind, param, preds in grid_preds
    ]

    path = out_dir / "sweep.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["kind", "model", "param", "mad", "auc", "sig_fraction"])
        for row in rows:
            writer.writerow(
                [row["kind"], row["model"], row["param"]]
                + [repr(float(row[f])) for f in ("mad", "auc", "sig_fraction")]
            )
    print(f"wrote {path} ({len(rows)} rows)")
    return path


def cmd_verify(run_dir, tolerance: float = 1e-9) -> bool:
    """Re-derive every reported metric from the stored artifacts alone."""
    run_dir = Path(run_dir)
    with open(run_dir / "manifest.json", encoding="utf-8") as fh:
        manifest = json.load(fh)
    with open(run_dir / "config.json", encoding="utf-8") as fh:
        cfg = json.load(fh)
    ok = True
    for rep in range(manifest["replicates"]):
        rep_dir = run_dir / f"replicate_{rep:03d}"
        test = load_dataset(rep_dir / "data" / "test.csv")
        pool = load_pool(rep_dir / "pool")
        models = {
            "standard": load_model(rep_dir / "models" / "standard.json")[0],
            "stable": load_model(rep_dir / "models" / "stable.json")[0],
        }
        boot_preds = np.column_stack([forward_batch(m, test.features) for m in pool.members])
        preds = {
            "standard": forward_batch(models["standard"], test.features),
            "stable": forward_batch(models["stable"], test.features),
            "ensemble": train_ensemble(pool).predict(test.features),
        }
        panel = PredictionPanel.build(preds["standard"], boot_preds)
        for tag in MODEL_TAGS:
            stored = EvalReport.from_dict(
                json.load(open(rep_dir / "reports" / f"{tag}.json", encoding="utf-8"))
            )
            fresh = evaluate_model(
                preds[tag], preds["standard"], panel, test.labels, threshold=stored.threshold
            )
            for metric in SUMMARY_FIELDS:
                delta = abs(getattr(fresh, metric) - getattr(stored, metric))
                line_ok = delta <= tolerance
                ok &= line_ok
                print(
                    f"replicate {rep} {tag:>8} {metric:<16} "
                    f"{'ok' if line_ok else 'MISMATCH'} (|delta|={delta:.3e})"
                )
    print("verification " + ("PASSED" if ok else "FAILED"))
    return ok


def cmd_explain(run_dir, replicate: int = 0) -> None:
    """Recompute the attribution exports for a finished run."""
    run_dir = Path(run_dir)
    with open(run_dir / "config.json", encoding="utf-8") as fh:
        cfg = json.load(fh)
    rep_dir = run_dir / f"replicate_{replicate:03d}"
    if not rep_dir.exists():
        raise FileNotFoundError(f"no such replicate directory: {rep_dir}")
    eval_cfg = cfg["eval"]
    rep_root = child_seed(cfg["seed"], "replicate", replicate)
    train = load_dataset(rep_dir / "data" / "train.csv")
    test = load_dataset(rep_dir / "data" / "test.csv")
    models = {
        tag: load_model(rep_dir / "models" / f"{tag}.json")[0] for tag in ("standard", "stable")
    }
    pool = load_pool(rep_dir / "pool")

    out = rep_dir / "attribution"
    out.mkdir(exist_ok=True)
    bg_rng = make_rng(child_seed(rep_root, "background"))
    background = train.features[bg_rng.permutation(train.n)[: min(eval_cfg["background_rows"], train.n)]]
    n_explain = min(eval_cfg["explain_rows"], test.n)
    explain_idx = np.sort(make_rng(child_seed(rep_root, "explain-rows")).permutation(test.n)[:n_explain])
    attrs = {}
    for tag in ("standard", "stable"):
        predict = lambda X, m=models[tag]: forward_batch(m, X)
        attrs[tag] = explain_rows(
            predict,
            test.features[explain_idx],
            background,
            test.feature_names,
            n_permutations=eval_cfg["explain_permutations"],
            seed=child_seed(rep_root, "attribution", tag),
            row_ids=explain_idx,
        )
        export_attributions_csv(attrs[tag], out / f"{tag}_attr.csv")
    report = agreement(attrs["stable"], attrs["standard"])
    save_agreement(report, out / "agreement.json")

    k = min(eval_cfg["spread_members"], pool.size)
    member_ids = np.sort(make_rng(child_seed(rep_root, "spread-members")).permutation(pool.size)[:k])
    n_spread = min(eval_cfg["spread_rows"], test.n)
    spread_idx = np.sort(make_rng(child_seed(rep_root, "spread-rows")).permutation(test.n)[:n_spread])
    spread = ensemble_spread(
        [lambda X, m=pool.members[mid]: forward_batch(m, X) for mid in member_ids],
        test.features[spread_idx],
        background,
        test.feature_names,
        n_permutations=eval_cfg["spread_permutations"],
        seed=child_seed(rep_root, "spread"),
        row_ids=spread_idx,
    )
    export_spread_csv(spread, out / "spread_values.csv", out / "spread_rankings.csv")
    print(f"global attribution agreement (stable vs standard): {report.global_rho:.4f}")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bootstab",
        description="Bootstrap-stability regularised prediction models",
    )
    parser.add_argument("--version", action="version", version=f"bootstab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def _common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--out", default="bootstab_out", help="output directory")
        p.add_argument("--seed", type=int, help="root seed")
        p.add_argument("--lambda", dest="lam", type=float, help="stability penalty weight")
        p.add_argument("--pool-size", type=int)
        p.add_argument("--subsample-size", type=int)
        p.add_argument("--epochs", type=int)
        p.add_argument("--batch-size", type=int)
        p.add_argument("--learning-rate", type=float)
        p.add_argument("--hidden-dims", help="comma-separated hidden widths, e.g. 64,32")
        p.add_argument("--test-fraction", type=float)
        p.add_argument("--replicates", type=int)
        p.add_argument("--workers", type=int)
        p.add_argument("--dataset", help="CSV dataset path (switches source to csv)")
        p.add_argument("--label-column", help="label column for CSV mode")

    for name, descr in (
        ("simulate", "generate and export the synthetic dataset"),
        ("run", "full experiment: pool, three models, metrics, attribution"),
        ("sweep", "lambda and subsample-size sensitivity sweeps"),
    ):
        _common(sub.add_parser(name, help=descr))

    verify = sub.add_parser("verify", help="recompute reports from stored artifacts")
    verify.add_argument("run_dir", help="directory produced by `bootstab run`")
    verify.add_argument("--tolerance", type=float, default=1e-9)

    explain = sub.add_parser("explain", help="recompute attribution exports for a run")
    explain.add_argument("run_dir", help="directory produced by `bootstab run`")
    explain.add_argument("--replicate", type=int, default=0)
    return parser


def _overrides_from_args(args) -> dict:
    over: dict = {}
    train: dict = {}
    for flag, key in (
        ("lam", "lambda"),
        ("pool_size", "pool_size"),
        ("subsample_size", "subsample_size"),
        ("epochs", "epochs"),
        ("batch_size", "batch_size"),
        ("learning_rate", "learning_rate"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            train[key] = value
    if getattr(args, "hidden_dims", None):
        train["hidden_dims"] = [int(v) for v in args.hidden_dims.split(",")]
    if train:
        over["train"] = train
    if getattr(args, "seed", None) is not None:
        over["seed"] = args.seed
    if getattr(args, "replicates", None) is not None:
        over["replicates"] = args.replicates
    if getattr(args, "workers", None) is not None:
        over["workers"] = args.workers
    if getattr(args, "test_fraction", None) is not None:
        over["split"] = {"test_fraction": args.test_fraction}
    if getattr(args, "dataset", None):
        over["dataset"] = {
            "source": "csv",
            "path": args.dataset,
            "label_column": args.label_column or "label",
        }
    return over


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "verify":
            return 0 if cmd_verify(args.run_dir, args.tolerance) else 1
        if args.command == "explain":
            cmd_explain(args.run_dir, args.replicate)
            return 0
        cfg = load_config(args.config, _overrides_from_args(args))
        if args.command == "simulate":
            cmd_simulate(cfg, args.out)
            return 0
        if args.command == "run":
            manifest = cmd_run(cfg, args.out)
            return 0 if manifest["complete"] else 1
        if args.command == "sweep":
            cmd_sweep(cfg, args.out)
            return 0
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except RuntimeError as exc:  # e.g. training divergence outside a staged run
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    raise AssertionError("unreachable")


if __name__ == "__main__":
    sys.exit(main())
