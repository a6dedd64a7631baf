"""Loading, normalization, windowing and splitting of multivariate measurement logs.

Conventions fixed here and relied on by the tests:

* Series are stored variables-by-time: ``values[i, t]`` is variable ``i`` at
  step ``t``.
* z-scoring uses the population standard deviation (divide by N).
* Sliding windows use stride ``s``: sample ``i`` covers input
  ``series[:, i*s : i*s+T]`` and target ``series[:, i*s+T : i*s+T+tau]``,
  giving ``N = floor((L - T - tau) / s) + 1`` samples for ``L >= T + tau``.
* When several CSV files (charge/discharge cycles) are given, each file is
  windowed separately so no window spans a file boundary.
* Normalization statistics are computed from the time range covered by the
  training split only and applied to every split.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import (
    ConfigurationError,
    DegenerateVariableError,
    DimensionError,
    EmptyInputError,
    NumericError,
    ParseError,
    SchemaError,
)

#: Column names of the six battery channel measurements, used as the default
#: ingestion schema.
BATTERY_SCHEMA = (
    "Voltage",
    "Current",
    "Charge_Capacity",
    "Discharge_Capacity",
    "Charge_Energy",
    "Discharge_Energy",
)

CACHE_VERSION = "gaets-cache-v1"


def _frozen(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=np.float64, copy=True)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class RawSeries:
    """An n-variable by L-timestep measurement matrix.

    ``timestep`` is the sampling interval in seconds; it is metadata only.
    """

    values: np.ndarray
    var_names: tuple[str, ...]
    timestep: float = 1.0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise DimensionError(f"series must be 2-D, got shape {values.shape}")
        if values.shape[0] < 2:
            raise DimensionError("a series needs at least 2 variables")
        if values.shape[1] < 1:
            raise DimensionError("a series needs at least 1 timestep")
        if not np.isfinite(values).all():
            raise NumericError("series contains NaN or Inf entries")
        names = tuple(str(v) for v in self.var_names)
        if len(names) != values.shape[0]:
            raise DimensionError(
                f"{len(names)} variable names for {values.shape[0]} variables"
            )
        if len(set(names)) != len(names):
            raise SchemaError("variable names must be unique")
        if not self.timestep > 0:
            raise ConfigurationError("timestep must be positive")
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "var_names", names)

    @property
    def n_vars(self) -> int:
        return self.values.shape[0]

    @property
    def length(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class NormStats:
    """Per-variable z-scoring statistics (population std convention)."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64).reshape(-1)
        std = np.asarray(self.std, dtype=np.float64).reshape(-1)
        if mean.shape != std.shape:
            raise DimensionError("mean and std lengths differ")
        if not (std > 0).all():
            raise ConfigurationError("std entries must be strictly positive")
        object.__setattr__(self, "mean", _frozen(mean))
        object.__setattr__(self, "std", _frozen(std))

    def _col(self, values: np.ndarray, var_axis: int) -> tuple[np.ndarray, np.ndarray]:
        shape = [1] * values.ndim
        shape[var_axis] = len(self.mean)
        return self.mean.reshape(shape), self.std.reshape(shape)

    def apply(self, values: np.ndarray, var_axis: int = 0) -> np.ndarray:
        """z-score ``values`` along ``var_axis`` (default: variables first)."""
        values = np.asarray(values)
        mean, std = self._col(values, var_axis)
        return (values - mean) / std

    def invert(self, values: np.ndarray, var_axis: int = 0) -> np.ndarray:
        values = np.asarray(values)
        mean, std = self._col(values, var_axis)
        return values * std + mean


def load_csv(path, schema=None) -> RawSeries:
    """Load a comma-separated measurement log into a :class:`RawSeries`.

    The file must have a header row; ``schema`` selects and orders the
    columns (default: all header columns in file order). Cells must parse
    as finite numbers.
    """
    path = Path(path)
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyInputError(f"{path} is empty") from None
        header = [h.strip() for h in header]
        if schema is None:
            schema = tuple(header)
        schema = tuple(schema)
        if len(set(schema)) != len(schema):
            raise SchemaError("schema contains duplicate column names")
        col_index = {}
        for name in schema:
            if name not in header:
                raise SchemaError(f"missing column {name!r} in {path}")
            col_index[name] = header.index(name)

        columns: list[list[float]] = [[] for _ in schema]
        n_rows = 0
        for lineno, row in enumerate(reader, start=2):
            if not row or all(cell.strip() == "" for cell in row):
                continue  # ignore trailing blank lines
            for j, name in enumerate(schema):
                idx = col_index[name]
                if idx >= len(row):
                    raise ParseError(f"row too short for column {name!r}", lineno)
                cell = row[idx].strip()
                try:
                    value = float(cell)
                except ValueError:
                    raise ParseError(
                        f"cannot parse {cell!r} in column {name!r}", lineno
                    ) from None
                if not math.isfinite(value):
                    raise ParseError(
                        f"non-finite value {cell!r} in column {name!r}", lineno
                    )
                columns[j].append(value)
            n_rows += 1
    if n_rows == 0:
        raise EmptyInputError(f"{path} has a header but no data rows")
    return RawSeries(values=np.array(columns, dtype=np.float64), var_names=schema)


def compute_stats(values: np.ndarray, var_names) -> NormStats:
    """Population mean/std per variable; zero variance is an error."""
    values = np.asarray(values, dtype=np.float64)
    mean = values.mean(axis=1)
    std = values.std(axis=1)  # ddof=0
    for i, s in enumerate(std):
        if s <= 0.0:
            raise DegenerateVariableError(str(var_names[i]))
    return NormStats(mean=mean, std=std)


def normalize(series: RawSeries) -> tuple[RawSeries, NormStats]:
    """z-score every variable of ``series`` (population std).

    Returns the normalized series and the statistics needed to undo it.
    Raises :class:`DegenerateVariableError` for zero-variance variables;
    the caller may drop the variable or keep it unscaled.
    """
    stats = compute_stats(series.values, series.var_names)
    scaled = stats.apply(series.values)
    return replace(series, values=scaled), stats


def moving_average(series: RawSeries, k: int) -> RawSeries:
    """Pre-filter each variable with a length-``k`` moving average.

    Uses 'valid' windows, so the output is shorter by ``k - 1`` steps.
    """
    if k < 1:
        raise ConfigurationError("smoothing window must be >= 1")
    if k == 1:
        return series
    if series.length < k:
        raise ConfigurationError(
            f"series of length {series.length} too short for smoothing window {k}"
        )
    kernel = np.full(k, 1.0 / k)
    smoothed = np.stack([np.convolve(row, kernel, mode="valid") for row in series.values])
    return replace(series, values=smoothed)


@dataclass(frozen=True)
class WindowedDataset:
    """Paired (input window, target window) samples cut by a sliding window.

    ``inputs`` has shape (N, n_vars, T) and ``targets`` (N, n_vars, tau).
    ``sample_cycles[i]`` records which source file/cycle sample ``i`` came
    from. ``insufficient_length`` flags an empty dataset produced from a
    series shorter than ``T + tau``.
    """

    inputs: np.ndarray
    targets: np.ndarray
    input_horizon: int
    output_horizon: int
    stride: int
    var_names: tuple[str, ...]
    sample_cycles: np.ndarray | None = None
    insufficient_length: bool = False

    def __post_init__(self):
        inputs = np.asarray(self.inputs, dtype=np.float64)
        targets = np.asarray(self.targets, dtype=np.float64)
        if inputs.ndim != 3 or targets.ndim != 3:
            raise DimensionError("inputs and targets must be 3-D")
        if inputs.shape[0] != targets.shape[0]:
            raise DimensionError("inputs and targets sample counts differ")
        if inputs.shape[0] and (
            inputs.shape[2] != self.input_horizon
            or targets.shape[2] != self.output_horizon
        ):
            raise DimensionError("window lengths do not match declared horizons")
        object.__setattr__(self, "inputs", _frozen(inputs))
        object.__setattr__(self, "targets", _frozen(targets))
        object.__setattr__(self, "var_names", tuple(str(v) for v in self.var_names))
        if self.sample_cycles is not None:
            cyc = np.array(self.sample_cycles, dtype=np.int64, copy=True)
            cyc.flags.writeable = False
            object.__setattr__(self, "sample_cycles", cyc)

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def n_vars(self) -> int:
        return len(self.var_names)


def window_count(length: int, input_horizon: int, output_horizon: int, stride: int) -> int:
    """Closed-form sample count for a sliding window over ``length`` steps."""
    if length < input_horizon + output_horizon:
        return 0
    return (length - input_horizon - output_horizon) // stride + 1


def make_windows(
    series: RawSeries, input_horizon: int, output_horizon: int, stride: int = 1
) -> WindowedDataset:
    """Cut ``series`` into supervised (input, target) window pairs.

    A series shorter than ``input_horizon + output_horizon`` yields an empty
    dataset with ``insufficient_length`` set instead of an error.
    """
    for name, v in (
        ("input_horizon", input_horizon),
        ("output_horizon", output_horizon),
        ("stride", stride),
    ):
        if int(v) != v or v < 1:
            raise ConfigurationError(f"{name} must be a positive integer, got {v}")
    t, tau, s = int(input_horizon), int(output_horizon), int(stride)
    n = window_count(series.length, t, tau, s)
    if n == 0:
        return WindowedDataset(
            inputs=np.empty((0, series.n_vars, t)),
            targets=np.empty((0, series.n_vars, tau)),
            input_horizon=t,
            output_horizon=tau,
            stride=s,
            var_names=series.var_names,
            sample_cycles=np.empty(0, dtype=np.int64),
            insufficient_length=series.length < t + tau,
        )
    starts = np.arange(n) * s
    inputs = np.stack([series.values[:, i : i + t] for i in starts])
    targets = np.stack([series.values[:, i + t : i + t + tau] for i in starts])
    return WindowedDataset(
        inputs=inputs,
        targets=targets,
        input_horizon=t,
        output_horizon=tau,
        stride=s,
        var_names=series.var_names,
        sample_cycles=np.zeros(n, dtype=np.int64),
    )


def make_windows_multi(
    series_list, input_horizon: int, output_horizon: int, stride: int = 1
) -> WindowedDataset:
    """Window several series (cycles) without any window crossing a boundary.

    Cycles keep their list order; ``sample_cycles`` records provenance.
    """
    if not series_list:
        raise EmptyInputError("no series given")
    names = series_list[0].var_names
    for srs in series_list[1:]:
        if srs.var_names != names:
            raise SchemaError("all series must share the same variable names")
    parts = [
        make_windows(srs, input_horizon, output_horizon, stride) for srs in series_list
    ]
    inputs = np.concatenate([p.inputs for p in parts])
    targets = np.concatenate([p.targets for p in parts])
    cycles = np.concatenate(
        [np.full(len(p), c, dtype=np.int64) for c, p in enumerate(parts)]
    )
    return WindowedDataset(
        inputs=inputs,
        targets=targets,
        input_horizon=int(input_horizon),
        output_horizon=int(output_horizon),
        stride=int(stride),
        var_names=names,
        sample_cycles=cycles,
        insufficient_length=all(p.insufficient_length for p in parts)
        and len(inputs) == 0,
    )


@dataclass(frozen=True)
class SplitSpec:
    """Train/validation/test partition of a windowed dataset."""

    train_fraction: float
    val_fraction: float
    test_fraction: float
    split_mode: str = "chronological"

    def __post_init__(self):
        total = self.train_fraction + self.val_fraction + self.test_fraction
        if abs(total - 1.0) > 1e-9:
            raise ConfigurationError(f"split fractions sum to {total}, expected 1")
        if min(self.train_fraction, self.val_fraction, self.test_fraction) < 0:
            raise ConfigurationError("split fractions must be nonnegative")
        if self.split_mode not in ("chronological", "by_cycle"):
            raise ConfigurationError(f"unknown split_mode {self.split_mode!r}")


def _split_sizes(n: int, spec: SplitSpec) -> tuple[int, int, int]:
    n_train = int(round(n * spec.train_fraction))
    n_val = int(round(n * (spec.train_fraction + spec.val_fraction))) - n_train
    n_test = n - n_train - n_val
    return n_train, n_val, n_test


def _take(dataset: WindowedDataset, sl: slice) -> WindowedDataset:
    return WindowedDataset(
        inputs=dataset.inputs[sl],
        targets=dataset.targets[sl],
        input_horizon=dataset.input_horizon,
        output_horizon=dataset.output_horizon,
        stride=dataset.stride,
        var_names=dataset.var_names,
        sample_cycles=None
        if dataset.sample_cycles is None
        else dataset.sample_cycles[sl],
    )


def split(
    dataset: WindowedDataset, spec: SplitSpec
) -> tuple[WindowedDataset, WindowedDataset, WindowedDataset]:
    """Partition ``dataset`` into (train, val, test).

    Chronological mode cuts at sample boundaries so no training window comes
    after a validation/test window. ``by_cycle`` mode additionally snaps the
    cut points to cycle boundaries.
    """
    n = len(dataset)
    n_train, n_val, _ = _split_sizes(n, spec)
    cut1, cut2 = n_train, n_train + n_val
    if spec.split_mode == "by_cycle" and dataset.sample_cycles is not None and n:
        bounds = _cycle_boundaries(dataset.sample_cycles)
        cut1 = min(bounds, key=lambda b: abs(b - cut1))
        cut2 = min((b for b in bounds if b >= cut1), key=lambda b: abs(b - cut2))
    return (
        _take(dataset, slice(0, cut1)),
        _take(dataset, slice(cut1, cut2)),
        _take(dataset, slice(cut2, n)),
    )


def _cycle_boundaries(sample_cycles: np.ndarray) -> list[int]:
    bounds = [0]
    for i in range(1, len(sample_cycles)):
        if sample_cycles[i] != sample_cycles[i - 1]:
            bounds.append(i)
    bounds.append(len(sample_cycles))
    return bounds


@dataclass(frozen=True)
class SplitBundle:
    """Normalized train/val/test windows plus everything needed to reuse them.

    ``train_series`` is the normalized raw-series prefix covered by the
    training windows (cycles concatenated); the structure learner consumes
    it as a whole.
    """

    train: WindowedDataset
    val: WindowedDataset
    test: WindowedDataset
    norm_stats: NormStats
    train_series: np.ndarray
    var_names: tuple[str, ...]

    @property
    def n_vars(self) -> int:
        return len(self.var_names)


def build_split_bundle(
    series_list,
    *,
    input_horizon: int,
    output_horizon: int,
    stride: int = 1,
    split_spec: SplitSpec,
    smooth: int | None = None,
    test_series_list=None,
    keep_degenerate: bool = False,
) -> SplitBundle:
    """Run the full data pipeline: smooth, window, split, z-score.

    Normalization statistics come from the raw-series prefix covered by the
    training windows only and are applied to every split, including the
    optional held-out ``test_series_list`` (two-file mode).
    """
    if isinstance(series_list, RawSeries):
        series_list = [series_list]
    series_list = list(series_list)
    if smooth:
        series_list = [moving_average(s, smooth) for s in series_list]
    raw = make_windows_multi(series_list, input_horizon, output_horizon, stride)
    if test_series_list is not None:
        if isinstance(test_series_list, RawSeries):
            test_series_list = [test_series_list]
        test_series_list = list(test_series_list)
        if smooth:
            test_series_list = [moving_average(s, smooth) for s in test_series_list]
        if split_spec.test_fraction != 0.0:
            raise ConfigurationError(
                "test_fraction must be 0 when a separate test series is given"
            )
    train_raw, _, _ = split(raw, split_spec)
    if len(train_raw) == 0:
        raise ConfigurationError("training split is empty; not enough windows")

    stats = _train_prefix_stats(
        series_list, train_raw, input_horizon, output_horizon, keep_degenerate
    )
    norm_list = [replace(s, values=stats.apply(s.values)) for s in series_list]
    windows = make_windows_multi(norm_list, input_horizon, output_horizon, stride)
    train, val, test = split(windows, split_spec)
    if test_series_list is not None:
        norm_test = [
            replace(s, values=stats.apply(s.values)) for s in test_series_list
        ]
        test = make_windows_multi(norm_test, input_horizon, output_horizon, stride)

    train_series = _train_prefix(norm_list, train_raw, input_horizon, output_horizon)
    return SplitBundle(
        train=train,
        val=val,
        test=test,
        norm_stats=stats,
        train_series=_frozen(train_series),
        var_names=series_list[0].var_names,
    )


def _prefix_ends(train_ds: WindowedDataset, t: int, tau: int) -> dict[int, int]:
    """Last covered raw index (exclusive) per cycle for the training windows."""
    ends: dict[int, int] = {}
    cycles = train_ds.sample_cycles
    stride = train_ds.stride
    pos_in_cycle: dict[int, int] = {}
    for c in cycles:
        c = int(c)
        k = pos_in_cycle.get(c, 0)
        ends[c] = k * stride + t + tau
        pos_in_cycle[c] = k + 1
    return ends


def _train_prefix(
    series_list, train_ds: WindowedDataset, t: int, tau: int
) -> np.ndarray:
    ends = _prefix_ends(train_ds, t, tau)
    parts = [series_list[c].values[:, :end] for c, end in sorted(ends.items())]
    return np.concatenate(parts, axis=1)


def _train_prefix_stats(
    series_list, train_ds: WindowedDataset, t: int, tau: int, keep_degenerate: bool
) -> NormStats:
    prefix = _train_prefix(series_list, train_ds, t, tau)
    names = series_list[0].var_names
    try:
        return compute_stats(prefix, names)
    except DegenerateVariableError:
        if not keep_degenerate:
            raise
        mean = prefix.mean(axis=1)
        std = prefix.std(axis=1)
        degenerate = std <= 0.0
        mean[degenerate] = 0.0
        std[degenerate] = 1.0
        return NormStats(mean=mean, std=std)


def save_bundle(path, bundle: SplitBundle) -> None:
    """Persist a :class:`SplitBundle` as a versioned ``.npz`` cache."""
    meta = {
        "version": CACHE_VERSION,
        "input_horizon": bundle.train.input_horizon,
        "output_horizon": bundle.train.output_horizon,
        "stride": bundle.train.stride,
        "var_names": list(bundle.var_names),
    }
    arrays = {
        "meta": np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8),
        "mean": bundle.norm_stats.mean,
        "std": bundle.norm_stats.std,
        "train_series": bundle.train_series,
    }
    for part_name, part in (("train", bundle.train), ("val", bundle.val), ("test", bundle.test)):
        arrays[f"{part_name}_inputs"] = part.inputs
        arrays[f"{part_name}_targets"] = part.targets
        if part.sample_cycles is not None:
            arrays[f"{part_name}_cycles"] = part.sample_cycles
    np.savez_compressed(path, **arrays)


def load_bundle(path) -> SplitBundle:
    """Load a cache written by :func:`save_bundle`, checking the version tag."""
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode())
        if meta.get("version") != CACHE_VERSION:
            raise ConfigurationError(
                f"cache version {meta.get('version')!r} not supported"
            )
        names = tuple(meta["var_names"])
        parts = {}
        for part_name in ("train", "val", "test"):
            cycles_key = f"{part_name}_cycles"
            parts[part_name] = WindowedDataset(
                inputs=data[f"{part_name}_inputs"],
                targets=data[f"{part_name}_targets"],
                input_horizon=meta["input_horizon"],
                output_horizon=meta["output_horizon"],
                stride=meta["stride"],
                var_names=names,
                sample_cycles=data[cycles_key] if cycles_key in data else None,
            )
        return SplitBundle(
            train=parts["train"],
            val=parts["val"],
            test=parts["test"],
            norm_stats=NormStats(mean=data["mean"], std=data["std"]),
            train_series=data["train_series"],
            var_names=names,
        )
