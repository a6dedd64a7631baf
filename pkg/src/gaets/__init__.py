"""Joint graph structure learning and multivariate time-series forecasting.

The package trains a diffusion-convolutional GRU forecaster whose node
dependency graph is learned jointly from the data, with a nonlinear
structural-equation reconstruction loss acting as a regularizer on the
learned structure ("GAETS"; the "GTS" mode is the regularizer-free
ablation).
"""

from .autoencoder import SemAutoencoder
from .data import (
    BATTERY_SCHEMA,
    NormStats,
    RawSeries,
    SplitBundle,
    SplitSpec,
    WindowedDataset,
    build_split_bundle,
    load_bundle,
    load_csv,
    make_windows,
    make_windows_multi,
    moving_average,
    normalize,
    save_bundle,
    split,
    window_count,
)
from .dcgru import DCGRUCell, DiffusionConv, Seq2SeqForecaster, degree_normalize, diffusion_conv
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
from .estimator import GaetsForecaster
from .metrics import (
    MetricsReport,
    aggregate_seeds,
    evaluate,
    forecast_dump,
    mae,
    mape,
    rmse,
)
from .model import GaetsModel
from .structure import (
    AdjacencySample,
    ConvSpec,
    LinkPredictor,
    NodeFeatureEncoder,
    edge_probabilities,
    sample_adjacency,
    threshold_adjacency,
)
from .synthetic import (
    GroundTruthGraph,
    benchmark_series,
    generate,
    random_graph,
    structure_recovery_score,
)
from .training import (
    EpochRecord,
    GradcheckReport,
    LossBreakdown,
    TrainConfig,
    TrainResult,
    base_loss,
    build_probe,
    gradcheck,
    load_checkpoint,
    model_from_checkpoint,
    save_checkpoint,
    total_loss,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "AdjacencySample",
    "BATTERY_SCHEMA",
    "ConfigurationError",
    "ConvSpec",
    "DCGRUCell",
    "DegenerateVariableError",
    "DiffusionConv",
    "DimensionError",
    "EmptyInputError",
    "EpochRecord",
    "GaetsError",
    "GaetsForecaster",
    "GaetsModel",
    "GradcheckReport",
    "GroundTruthGraph",
    "LinkPredictor",
    "LossBreakdown",
    "MetricsReport",
    "NodeFeatureEncoder",
    "NormStats",
    "NumericError",
    "ParseError",
    "RawSeries",
    "SchemaError",
    "SemAutoencoder",
    "Seq2SeqForecaster",
    "SplitBundle",
    "SplitSpec",
    "TrainConfig",
    "TrainResult",
    "WindowedDataset",
    "aggregate_seeds",
    "base_loss",
    "benchmark_series",
    "build_probe",
    "build_split_bundle",
    "degree_normalize",
    "diffusion_conv",
    "edge_probabilities",
    "evaluate",
    "forecast_dump",
    "generate",
    "gradcheck",
    "load_bundle",
    "load_checkpoint",
    "load_csv",
    "mae",
    "make_windows",
    "make_windows_multi",
    "mape",
    "model_from_checkpoint",
    "moving_average",
    "normalize",
    "random_graph",
    "rmse",
    "sample_adjacency",
    "save_bundle",
    "save_checkpoint",
    "split",
    "structure_recovery_score",
    "threshold_adjacency",
    "total_loss",
    "train",
    "window_count",
]
