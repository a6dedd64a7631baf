"""Forecast quality metrics in original units, cross-seed aggregation, reports.

MAPE masks out entries whose true magnitude falls at or below a per-variable
threshold (battery current crosses zero during cycling, where raw MAPE
diverges); the mask count is always reported. Cross-seed aggregates use a
Student-t 95% confidence half-width.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
import torch
from scipy import stats as scipy_stats

from .data import NormStats, WindowedDataset
from .errors import ConfigurationError, DimensionError
from .nnutils import seeded_generator, to_tensor
from .structure import sample_adjacency, threshold_adjacency
from .training import model_from_checkpoint
from .validation import check_same_shape

#: MAPE mask threshold as a fraction of each variable's training-split std.
MAPE_STD_SCALE = 1e-3


def mae(pred, truth) -> float:
    """Mean absolute deviation over all entries."""
    check_same_shape(pred, truth)
    return float(np.mean(np.abs(np.asarray(pred) - np.asarray(truth))))


def rmse(pred, truth) -> float:
    """Root mean squared deviation over all entries."""
    check_same_shape(pred, truth)
    diff = np.asarray(pred) - np.asarray(truth)
    return float(np.sqrt(np.mean(diff * diff)))


@dataclass(frozen=True)
class MapeResult:
    """Masked mean absolute percentage error (percent).

    ``value`` is None when every entry was masked (undefined metric).
    """

    value: float | None
    masked_count: int
    evaluated_count: int

    @property
    def defined(self) -> bool:
        return self.value is not None


def mape(pred, truth, threshold) -> MapeResult:
    """Percentage error over entries with |truth| above ``threshold``.

    ``threshold`` may be a positive scalar or an array broadcastable against
    ``truth`` (e.g. per-variable thresholds).
    """
    check_same_shape(pred, truth)
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    threshold = np.asarray(threshold, dtype=np.float64)
    if not (threshold > 0).all():
        raise ConfigurationError("mape threshold must be positive")
    mask = np.abs(truth) > threshold
    masked = int(pred.size - mask.sum())
    if not mask.any():
        return MapeResult(value=None, masked_count=masked, evaluated_count=0)
    ratio = np.abs(pred[mask] - truth[mask]) / np.abs(truth[mask])
    return MapeResult(
        value=float(100.0 * ratio.mean()),
        masked_count=masked,
        evaluated_count=int(mask.sum()),
    )


@dataclass(frozen=True)
class HorizonMetrics:
    mae: float
    rmse: float
    mape: float | None
    mape_masked: int
    mape_evaluated: int

    def as_dict(self) -> dict:
        return {
            "mae": self.mae,
            "rmse": self.rmse,
            "mape": self.mape,
            "mape_masked": self.mape_masked,
            "mape_evaluated": self.mape_evaluated,
        }


@dataclass(frozen=True)
class SeedEntry:
    seed: int
    horizon: int
    metrics: HorizonMetrics
    extras: dict = field(default_factory=dict)


@dataclass(frozen=True)
class MetricsReport:
    """Per-seed metrics with optional cross-seed aggregates, one mode label."""

    mode: str
    per_seed: tuple[SeedEntry, ...]
    aggregate: dict | None = None  # horizon -> metric -> {mean, half_width}

    @property
    def horizons(self) -> tuple[int, ...]:
        return tuple(sorted({e.horizon for e in self.per_seed}))

    def per_horizon(self, horizon: int) -> list[SeedEntry]:
        return [e for e in self.per_seed if e.horizon == horizon]

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "horizons": list(self.horizons),
            "per_seed": [
                {
                    "seed": e.seed,
                    "horizon": e.horizon,
                    "metrics": e.metrics.as_dict(),
                    "extras": e.extras,
                }
                for e in self.per_seed
            ],
            "aggregate": self.aggregate,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def to_frame(self) -> pd.DataFrame:
        """Flat table for plotting: one row per mode x horizon x seed."""
        rows = []
        for e in self.per_seed:
            row = {"mode": self.mode, "horizon": e.horizon, "seed": e.seed}
            row.update(e.metrics.as_dict())
            rows.append(row)
        if self.aggregate:
            for horizon, metrics_map in sorted(self.aggregate.items()):
                row = {"mode": self.mode, "horizon": horizon, "seed": "aggregate"}
                for metric, stat in metrics_map.items():
                    if stat is None:
                        row[metric] = None
                        row[f"{metric}_ci95"] = None
                    else:
                        row[metric] = stat["mean"]
                        row[f"{metric}_ci95"] = stat["half_width"]
                rows.append(row)
        return pd.DataFrame(rows)


def _predict_normalized(model, adjacency, dataset: WindowedDataset,
                        batch_size: int) -> np.ndarray:
    chunks = []
    with torch.no_grad():
        for start in range(0, len(dataset), batch_size):
            x = to_tensor(dataset.inputs[start : start + batch_size], model.dtype)
            chunks.append(model.forecaster(adjacency, x).numpy())
    if not chunks:
        return np.empty((0, dataset.n_vars, dataset.output_horizon))
    return np.concatenate(chunks).astype(np.float64)


def _metrics_from_arrays(preds, truth, thresholds) -> HorizonMetrics:
    mape_result = mape(preds, truth, thresholds)
    return HorizonMetrics(
        mae=mae(preds, truth),
        rmse=rmse(preds, truth),
        mape=mape_result.value,
        mape_masked=mape_result.masked_count,
        mape_evaluated=mape_result.evaluated_count,
    )


def evaluate(
    checkpoint: dict,
    dataset: WindowedDataset,
    *,
    batch_size: int = 256,
    mc_samples: int = 0,
    mc_seed: int = 0,
    report_ae: bool = False,
) -> MetricsReport:
    """Score a checkpoint on a windowed dataset in denormalized units.

    The adjacency is the deterministic thresholded graph (edge probability
    > 0.5). ``mc_samples > 0`` additionally averages metrics over sampled
    graphs as a sensitivity check; ``report_ae`` appends per-node SEM
    reconstruction errors (normalized units).
    """
    if len(dataset) == 0:
        raise ConfigurationError("cannot evaluate on an empty dataset")
    if dataset.output_horizon != checkpoint["output_horizon"]:
        raise ConfigurationError(
            f"checkpoint forecasts {checkpoint['output_horizon']} steps but the "
            f"dataset provides {dataset.output_horizon}-step targets; "
            "each horizon needs a model trained for it"
        )
    if dataset.input_horizon != checkpoint["input_horizon"]:
        raise ConfigurationError(
            f"checkpoint consumes {checkpoint['input_horizon']}-step inputs, "
            f"dataset provides {dataset.input_horizon}"
        )
    if dataset.n_vars != checkpoint["n_vars"]:
        raise DimensionError(
            f"checkpoint has {checkpoint['n_vars']} variables, dataset "
            f"{dataset.n_vars}"
        )
    if checkpoint.get("edge_logits") is None:
        raise ConfigurationError(
            "checkpoint carries no edge logits (aborted run); cannot evaluate"
        )
    model, _ = model_from_checkpoint(checkpoint)
    logits = checkpoint["edge_logits"].to(model.dtype)
    stats = NormStats(mean=checkpoint["norm_mean"], std=checkpoint["norm_std"])
    thresholds = (MAPE_STD_SCALE * stats.std).reshape(1, -1, 1)

    adjacency = threshold_adjacency(logits)
    preds = stats.invert(_predict_normalized(model, adjacency, dataset, batch_size),
                         var_axis=1)
    truth = stats.invert(dataset.targets, var_axis=1)
    metrics = _metrics_from_arrays(preds, truth, thresholds)

    extras: dict = {}
    if report_ae:
        extras["ae_per_node"] = _per_node_reconstruction_error(
            model, adjacency, dataset, batch_size
        )
    if mc_samples > 0:
        extras["mc_eval"] = _mc_metrics(
            model, logits, stats, dataset, thresholds, mc_samples, mc_seed, batch_size
        )
    entry = SeedEntry(
        seed=checkpoint["seed"],
        horizon=dataset.output_horizon,
        metrics=metrics,
        extras=extras,
    )
    return MetricsReport(mode=checkpoint["mode"], per_seed=(entry,))


def _per_node_reconstruction_error(model, adjacency, dataset, batch_size) -> list[float]:
    sums = np.zeros(dataset.n_vars)
    count = 0
    with torch.no_grad():
        for start in range(0, len(dataset), batch_size):
            x = to_tensor(dataset.inputs[start : start + batch_size], model.dtype)
            recon = model.sem.reconstruct(x, adjacency)
            sums += (x - recon).pow(2).mean(dim=-1).sum(dim=0).numpy()
            count += x.shape[0]
    return (sums / count).tolist()


def _mc_metrics(model, logits, stats, dataset, thresholds, mc_samples, mc_seed,
                batch_size) -> dict:
    gen = seeded_generator(mc_seed)
    values: dict[str, list[float]] = {"mae": [], "rmse": [], "mape": []}
    truth = stats.invert(dataset.targets, var_axis=1)
    for _ in range(mc_samples):
        with torch.no_grad():
            adjacency = sample_adjacency(logits, 0.5, gen).hard
        preds = stats.invert(
            _predict_normalized(model, adjacency, dataset, batch_size), var_axis=1
        )
        m = _metrics_from_arrays(preds, truth, thresholds)
        values["mae"].append(m.mae)
        values["rmse"].append(m.rmse)
        if m.mape is not None:
            values["mape"].append(m.mape)
    out = {}
    for metric, vals in values.items():
        if vals:
            arr = np.asarray(vals)
            out[metric] = {"mean": float(arr.mean()),
                           "std": float(arr.std(ddof=1)) if len(arr) > 1 else 0.0}
    out["samples"] = mc_samples
    return out


def aggregate_seeds(reports) -> MetricsReport:
    """Merge single-seed reports into one with 95% Student-t intervals."""
    reports = list(reports)
    if len(reports) < 2:
        raise ConfigurationError("need at least 2 seed reports to aggregate")
    mode = reports[0].mode
    horizons = reports[0].horizons
    for report in reports[1:]:
        if report.mode != mode:
            raise ConfigurationError("cannot aggregate reports of different modes")
        if report.horizons != horizons:
            raise ConfigurationError("cannot aggregate reports of different horizons")
    entries = tuple(e for report in reports for e in report.per_seed)
    aggregate: dict = {}
    for horizon in horizons:
        group = [e.metrics for e in entries if e.horizon == horizon]
        aggregate[horizon] = {
            "mae": _t_interval([m.mae for m in group]),
            "rmse": _t_interval([m.rmse for m in group]),
            "mape": (
                _t_interval([m.mape for m in group])
                if all(m.mape is not None for m in group)
                else None
            ),
        }
    return MetricsReport(mode=mode, per_seed=entries, aggregate=aggregate)


def _t_interval(values, confidence: float = 0.95) -> dict:
    arr = np.asarray(values, dtype=np.float64)
    n = len(arr)
    mean = float(arr.mean())
    if n < 2:
        return {"mean": mean, "half_width": 0.0, "n": n}
    sd = float(arr.std(ddof=1))
    t = float(scipy_stats.t.ppf(0.5 + confidence / 2.0, n - 1))
    return {"mean": mean, "half_width": t * sd / np.sqrt(n), "n": n}


def forecast_dump(checkpoint: dict, dataset: WindowedDataset,
                  sample_indices, *, batch_size: int = 256) -> pd.DataFrame:
    """Plot-ready forecast-vs-truth table for selected samples.

    One row per (sample, variable, step) with denormalized truth and
    prediction.
    """
    model, _ = model_from_checkpoint(checkpoint)
    stats = NormStats(mean=checkpoint["norm_mean"], std=checkpoint["norm_std"])
    adjacency = threshold_adjacency(checkpoint["edge_logits"].to(model.dtype))
    preds = stats.invert(_predict_normalized(model, adjacency, dataset, batch_size),
                         var_axis=1)
    truth = stats.invert(dataset.targets, var_axis=1)
    rows = []
    for idx in sample_indices:
        for v, name in enumerate(dataset.var_names):
            for t in range(dataset.output_horizon):
                rows.append(
                    {
                        "sample": idx,
                        "variable": name,
                        "step": t,
                        "truth": truth[idx, v, t],
                        "prediction": preds[idx, v, t],
                    }
                )
    return pd.DataFrame(rows, columns=["sample", "variable", "step", "truth", "prediction"])
