"""Command-line entry point: ingest, synth, train, eval, gradcheck, export-graph.

Exit codes are the machine contract: 0 success, 2 configuration error,
3 data error, 4 numeric failure. Human-readable messages go to stderr.
Runs write their outputs under ``<out>/<run-id>/{config,checkpoints,logs,reports}``
where ``<out>`` comes from ``--out``, the config file, the
``GAETS_OUTPUT_ROOT`` environment variable, or ``./runs`` in that order.
"""

from __future__ import annotations

import functools
import json
import os
import sys
from pathlib import Path

import click
import numpy as np
import pandas as pd

from . import data as data_mod
from . import metrics as metrics_mod
from . import runconfig
from . import synthetic as synthetic_mod
from .errors import (
    ConfigurationError,
    DegenerateVariableError,
    DimensionError,
    EmptyInputError,
    GaetsError,
    NumericError,
    ParseError,
    SchemaError,
)
from .structure import edge_list_frame, edge_probabilities
from .training import (
    gradcheck as run_gradcheck,
    load_checkpoint,
    save_checkpoint,
    train as run_train,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

_DATA_ERRORS = (
    SchemaError,
    ParseError,
    EmptyInputError,
    DegenerateVariableError,
    FileNotFoundError,
)


def guarded(fn):
    """Map library errors onto the CLI exit-code contract."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except _DATA_ERRORS as err:
            click.echo(f"error: {err}", err=True)
            sys.exit(EXIT_DATA)
        except NumericError as err:
            click.echo(f"error: {err}", err=True)
            sys.exit(EXIT_NUMERIC)
        except (ConfigurationError, DimensionError, GaetsError) as err:
            click.echo(f"error: {err}", err=True)
            sys.exit(EXIT_CONFIG)
        except OSError as err:
            click.echo(f"error: {err}", err=True)
            sys.exit(EXIT_DATA)

    return wrapper


@click.group()
def main():
    """Graph-autoencoder time-series forecasting toolkit."""


def _resolve_out_root(flag_value, config) -> Path:
    if flag_value:
        return Path(flag_value)
    if config and config.get("out_root"):
        return Path(config["out_root"])
    env = os.environ.get("GAETS_OUTPUT_ROOT")
    if env:
        return Path(env)
    return Path("runs")


def _load_series_list(paths, schema):
    paths = [Path(p) for p in paths]
    for p in paths:
        if not p.exists():
            raise FileNotFoundError(f"data file not found: {p}")
    # Deterministic merge order: file name.
    paths = sorted(paths, key=lambda p: p.name)
    return [data_mod.load_csv(p, schema) for p in paths]


def _bundle_from_config(config):
    """Build the split bundle named by the config's single data source.

    Returns (bundle, ground_truth_graph_or_None).
    """
    window = config["window"]
    split_cfg = config["split"]
    spec = data_mod.SplitSpec(
        train_fraction=split_cfg["train_fraction"],
        val_fraction=split_cfg["val_fraction"],
        test_fraction=split_cfg["test_fraction"],
        split_mode=split_cfg["mode"],
    )
    data_cfg = config["data"]
    if data_cfg["cache"]:
        cache = Path(data_cfg["cache"])
        if not cache.exists():
            raise FileNotFoundError(f"cache file not found: {cache}")
        return data_mod.load_bundle(cache), None
    if data_cfg["csv"]:
        series_list = _load_series_list(data_cfg["csv"], data_cfg["schema"])
        test_list = (
            _load_series_list(data_cfg["test_csv"], data_cfg["schema"])
            if data_cfg["test_csv"]
            else None
        )
        bundle = data_mod.build_split_bundle(
            series_list,
            input_horizon=window["input_horizon"],
            output_horizon=window["output_horizon"],
            stride=window["stride"],
            split_spec=spec,
            smooth=window["smooth"],
            test_series_list=test_list,
            keep_degenerate=data_cfg["keep_degenerate"],
        )
        return bundle, None
    if data_cfg["synthetic"]:
        syn = data_cfg["synthetic"]
        graph = synthetic_mod.random_graph(
            syn["n_vars"],
            syn["n_edges"],
            syn["seed"],
            noise_std=syn["noise_std"],
            nonlinearity=syn["nonlinearity"],
        )
        series = synthetic_mod.generate(graph, syn["length"], syn["seed"])
        bundle = data_mod.build_split_bundle(
            [series],
            input_horizon=window["input_horizon"],
            output_horizon=window["output_horizon"],
            stride=window["stride"],
            split_spec=spec,
            smooth=window["smooth"],
        )
        return bundle, graph
    raise ConfigurationError(
        "no data source configured: set data.csv, data.cache or data.synthetic"
    )


def _parse_int_list(text):
    try:
        return [int(part) for part in str(text).split(",") if part.strip() != ""]
    except ValueError:
        raise ConfigurationError(f"expected comma-separated integers, got {text!r}")


@main.command()
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="YAML configuration file.")
@click.option("--mode", type=click.Choice(["GAETS", "GTS"]), default=None,
              help="Override training mode.")
@click.option("--horizon", type=int, default=None, help="Override output horizon.")
@click.option("--epochs", type=int, default=None, help="Override epoch count.")
@click.option("--seed", type=int, default=None, help="Train a single seed.")
@click.option("--seeds", type=str, default=None,
              help="Comma-separated seed list, e.g. 0,1,2,3,4.")
@click.option("--out", "out_flag", type=click.Path(), default=None,
              help="Output root directory.")
@click.option("--run-id", type=str, default=None, help="Run directory name.")
@guarded
def train(config_path, mode, horizon, epochs, seed, seeds, out_flag, run_id):
    """Train one model per seed and keep the best-validation checkpoints."""
    if config_path is not None and not Path(config_path).exists():
        raise ConfigurationError(f"config file not found: {config_path}")
    overrides = {
        "training.mode": mode,
        "window.output_horizon": horizon,
        "training.epochs": epochs,
        "run_id": run_id,
    }
    if seed is not None and seeds is not None:
        raise ConfigurationError("give either --seed or --seeds, not both")
    if seed is not None:
        overrides["seeds"] = [seed]
    elif seeds is not None:
        overrides["seeds"] = _parse_int_list(seeds)
    config = runconfig.load_run_config(config_path, overrides)

    bundle, truth_graph = _bundle_from_config(config)
    out_root = _resolve_out_root(out_flag, config)
    run_dir = out_root / (config["run_id"] or runconfig.default_run_id(config))
    (run_dir / "checkpoints").mkdir(parents=True, exist_ok=True)
    (run_dir / "logs").mkdir(parents=True, exist_ok=True)
    (run_dir / "reports").mkdir(parents=True, exist_ok=True)
    runconfig.dump_resolved(config, run_dir / "config.yaml")

    digest = runconfig.config_hash(config)
    summary = {"config_hash": digest, "run_id": run_dir.name, "seeds": {}}
    any_aborted = False
    for s in config["seeds"]:
        train_config = runconfig.train_config_for(config, s)
        result = run_train(train_config, bundle)
        result.checkpoint["run_config_hash"] = digest
        ckpt_path = run_dir / "checkpoints" / f"seed{s}.pt"
        save_checkpoint(ckpt_path, result.checkpoint)
        log_path = run_dir / "logs" / f"train_seed{s}.ndjson"
        log_path.write_text(
            "".join(record.to_json() + "\n" for record in result.log),
            encoding="utf-8",
        )
        entry = {
            "checkpoint": str(ckpt_path),
            "best_epoch": result.best_epoch,
            "best_val_base": result.best_val_base,
            "aborted": result.aborted,
        }
        if truth_graph is not None:
            score = synthetic_mod.structure_recovery_score(
                edge_probabilities(result.checkpoint["edge_logits"]),
                truth_graph.adjacency,
            )
            entry["structure_auc"] = score.auc
        if result.aborted:
            any_aborted = True
            diagnostics = {
                "seed": s,
                "diagnostic": result.diagnostic,
                "completed_epochs": len(result.log),
            }
            (run_dir / "reports" / f"diagnostics_seed{s}.json").write_text(
                json.dumps(diagnostics, sort_keys=True, indent=2), encoding="utf-8"
            )
            entry["diagnostic"] = result.diagnostic
        summary["seeds"][str(s)] = entry
        click.echo(
            f"seed {s}: best epoch {result.best_epoch}, "
            f"val base {result.best_val_base:.6g}"
            + (" [ABORTED]" if result.aborted else "")
        )
    if truth_graph is not None:
        truth = edge_list_frame(
            truth_graph.coefficients, bundle.var_names
        ).rename(columns={"probability": "coefficient"})
        truth = truth[truth["coefficient"] != 0.0]
        truth.to_csv(run_dir / "reports" / "structure_truth.csv", index=False)
    (run_dir / "reports" / "train_summary.json").write_text(
        json.dumps(summary, sort_keys=True, indent=2), encoding="utf-8"
    )
    click.echo(f"run written to {run_dir}")
    if any_aborted:
        sys.exit(EXIT_NUMERIC)


def _select_eval_dataset(bundle, which):
    if which == "auto":
        which = "test" if len(bundle.test) else "val"
    dataset = {"train": bundle.train, "val": bundle.val, "test": bundle.test}[which]
    if len(dataset) == 0:
        raise ConfigurationError(f"requested evaluation split {which!r} is empty")
    return which, dataset


@main.command("eval")
@click.argument("checkpoints", nargs=-1, required=True,
                type=click.Path(exists=False))
@click.option("--cache", type=click.Path(), default=None,
              help="Windowed dataset cache (.npz) to evaluate on.")
@click.option("--csv", "csv_paths", multiple=True, type=click.Path(),
              help="Raw CSV(s); windowed with the checkpoint's window config.")
@click.option("--split", "split_name",
              type=click.Choice(["auto", "train", "val", "test"]), default="auto")
@click.option("--out", "out_flag", type=click.Path(), default=None)
@click.option("--run-id", type=str, default=None)
@click.option("--report-ae", is_flag=True, default=False,
              help="Append per-node reconstruction errors.")
@click.option("--mc-eval", type=int, default=0,
              help="Also average metrics over K sampled graphs.")
@click.option("--dump-forecasts", type=int, default=0,
              help="Dump plot-ready forecast-vs-truth series for N samples.")
@guarded
def eval_cmd(checkpoints, cache, csv_paths, split_name, out_flag, run_id,
             report_ae, mc_eval, dump_forecasts):
    """Score checkpoints; aggregates across seeds grouped by mode."""
    ckpts = []
    for path in checkpoints:
        if not Path(path).exists():
            raise FileNotFoundError(f"checkpoint not found: {path}")
        ckpts.append(load_checkpoint(path))
    first = ckpts[0]
    if cache:
        if not Path(cache).exists():
            raise FileNotFoundError(f"cache file not found: {cache}")
        bundle = data_mod.load_bundle(cache)
        which, dataset = _select_eval_dataset(bundle, split_name)
    elif csv_paths:
        # Raw CSVs are windowed whole and normalized with the checkpoint's
        # training statistics; the entire file is the evaluation set.
        from dataclasses import replace

        series_list = _load_series_list(csv_paths, None)
        stats = data_mod.NormStats(mean=first["norm_mean"], std=first["norm_std"])
        norm_series = [
            replace(s, values=stats.apply(s.values)) for s in series_list
        ]
        dataset = data_mod.make_windows_multi(
            norm_series, first["input_horizon"], first["output_horizon"], stride=1
        )
        which = "csv"
    else:
        raise ConfigurationError("give --cache or --csv to evaluate on")

    out_root = _resolve_out_root(out_flag, None)
    run_dir = out_root / (run_id or f"eval-{first['config_hash'][:10]}")
    reports_dir = run_dir / "reports"
    reports_dir.mkdir(parents=True, exist_ok=True)

    by_mode: dict[str, list] = {}
    for ckpt in ckpts:
        report = metrics_mod.evaluate(
            ckpt, dataset, mc_samples=mc_eval, report_ae=report_ae
        )
        by_mode.setdefault(ckpt["mode"], []).append((ckpt, report))

    for mode_label, pairs in sorted(by_mode.items()):
        reports = [r for _, r in pairs]
        merged = (
            metrics_mod.aggregate_seeds(reports) if len(reports) > 1 else reports[0]
        )
        stem = f"metrics_{mode_label.lower()}_{which}"
        (reports_dir / f"{stem}.json").write_text(
            merged.to_json() + "\n", encoding="utf-8"
        )
        merged.to_frame().to_csv(reports_dir / f"{stem}.csv", index=False)
        for entry in merged.per_seed:
            mape_text = "n/a" if entry.metrics.mape is None else f"{entry.metrics.mape:.4f}%"
            click.echo(
                f"{mode_label} h{entry.horizon} seed {entry.seed}: "
                f"mae {entry.metrics.mae:.6f} rmse {entry.metrics.rmse:.6f} "
                f"mape {mape_text} (masked {entry.metrics.mape_masked})"
            )
        if dump_forecasts > 0:
            ckpt = pairs[0][0]
            indices = list(range(min(dump_forecasts, len(dataset))))
            frame = metrics_mod.forecast_dump(ckpt, dataset, indices)
            frame.to_csv(
                reports_dir / f"forecasts_{mode_label.lower()}_seed{ckpt['seed']}.csv",
                index=False,
            )
    click.echo(f"reports written to {reports_dir}")


@main.command()
@click.option("--csv", "csv_paths", multiple=True, required=True,
              type=click.Path(), help="Input CSV file(s); repeatable.")
@click.option("--test-csv", "test_csv_paths", multiple=True, type=click.Path(),
              help="Held-out CSV(s) used verbatim as the test split.")
@click.option("--schema", type=str, default=None,
              help="Comma-separated column names (default: all columns).")
@click.option("--input-horizon", type=int, default=80, show_default=True)
@click.option("--output-horizon", type=int, default=40, show_default=True)
@click.option("--stride", type=int, default=1, show_default=True)
@click.option("--smooth", type=int, default=None,
              help="Moving-average pre-filter width (opt-in).")
@click.option("--fractions", type=str, default="0.7,0.15,0.15", show_default=True,
              help="train,val,test fractions.")
@click.option("--split-mode", type=click.Choice(["chronological", "by_cycle"]),
              default="chronological", show_default=True)
@click.option("--keep-degenerate", is_flag=True, default=False,
              help="Keep zero-variance variables unscaled instead of failing.")
@click.option("--out", "out_path", type=click.Path(), required=True,
              help="Cache file to write (.npz).")
@guarded
def ingest(csv_paths, test_csv_paths, schema, input_horizon, output_horizon,
           stride, smooth, fractions, split_mode, keep_degenerate, out_path):
    """Window and normalize CSV logs into a reusable dataset cache."""
    schema_list = [s.strip() for s in schema.split(",")] if schema else None
    parts = [float(p) for p in fractions.split(",")]
    if len(parts) != 3:
        raise ConfigurationError("fractions must be train,val,test")
    if test_csv_paths and parts[2] != 0.0:
        # Separate test files replace the in-file test split.
        total = parts[0] + parts[1]
        if total <= 0:
            raise ConfigurationError("train and val fractions cannot both be 0")
        parts = [parts[0] / total, parts[1] / total, 0.0]
    spec = data_mod.SplitSpec(parts[0], parts[1], parts[2], split_mode)
    series_list = _load_series_list(csv_paths, schema_list)
    test_list = (
        _load_series_list(test_csv_paths, schema_list) if test_csv_paths else None
    )
    bundle = data_mod.build_split_bundle(
        series_list,
        input_horizon=input_horizon,
        output_horizon=output_horizon,
        stride=stride,
        split_spec=spec,
        smooth=smooth,
        test_series_list=test_list,
        keep_degenerate=keep_degenerate,
    )
    out = Path(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    data_mod.save_bundle(out, bundle)
    click.echo(
        json.dumps(
            {
                "cache": str(out),
                "n_vars": bundle.n_vars,
                "var_names": list(bundle.var_names),
                "train": len(bundle.train),
                "val": len(bundle.val),
                "test": len(bundle.test),
            },
            sort_keys=True,
        )
    )


@main.command()
@click.option("--nodes", type=int, default=6, show_default=True)
@click.option("--edges", type=int, default=8, show_default=True)
@click.option("--length", type=int, default=4000, show_default=True)
@click.option("--seed", type=int, default=7, show_default=True)
@click.option("--noise-std", type=float, default=0.1, show_default=True)
@click.option("--nonlinearity", type=click.Choice(["linear", "tanh"]),
              default="tanh", show_default=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@guarded
def synth(nodes, edges, length, seed, noise_std, nonlinearity, out_dir):
    """Generate a synthetic dataset with a known dependency graph."""
    graph = synthetic_mod.random_graph(
        nodes, edges, seed, noise_std=noise_std, nonlinearity=nonlinearity
    )
    series = synthetic_mod.generate(graph, length, seed)
    paths = synthetic_mod.write_dataset(out_dir, graph, series)
    click.echo(json.dumps(paths, sort_keys=True))


@main.command()
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--epsilon", type=float, default=1e-5, show_default=True)
@click.option("--mode", type=click.Choice(["GAETS", "GTS"]), default="GAETS",
              show_default=True)
@click.option("--tolerance", type=float, default=1e-4, show_default=True)
@guarded
def gradcheck(seed, epsilon, mode, tolerance):
    """Check analytic gradients against central finite differences."""
    from .training import build_probe

    probe = build_probe(seed, mode=mode)
    report = run_gradcheck(probe, epsilon=epsilon, seed=seed)
    for group, err in sorted(report.per_group.items()):
        click.echo(f"{group}: {err:.3e}")
    click.echo(f"max relative error: {report.max_rel_error:.3e} "
               f"({report.coords_checked} coordinates)")
    if not report.passed(tolerance):
        click.echo(f"FAIL: exceeds tolerance {tolerance:g}", err=True)
        sys.exit(1)
    click.echo("PASS")


@main.command("export-graph")
@click.argument("checkpoint", type=click.Path())
@click.option("--out", "out_dir", type=click.Path(), required=True)
@guarded
def export_graph(checkpoint, out_dir):
    """Export learned edge probabilities as a matrix CSV and an edge list."""
    if not Path(checkpoint).exists():
        raise FileNotFoundError(f"checkpoint not found: {checkpoint}")
    ckpt = load_checkpoint(checkpoint)
    probs = edge_probabilities(ckpt["edge_logits"])
    names = ckpt["var_names"]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    matrix = pd.DataFrame(probs, index=names, columns=names)
    matrix.to_csv(out / "edge_probabilities.csv")
    edge_list_frame(probs, names).to_csv(out / "edge_list.csv", index=False)
    click.echo(json.dumps({
        "matrix": str(out / "edge_probabilities.csv"),
        "edges": str(out / "edge_list.csv"),
    }, sort_keys=True))


if __name__ == "__main__":
    main()
