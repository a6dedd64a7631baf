"""scikit-learn style estimator wrapping the joint training pipeline.

``GaetsForecaster`` follows the usual fit/predict contract so the model
composes with sklearn tooling (``get_params``/``set_params``/``clone``):
``fit`` takes a time-major (length, n_vars) series, trains on sliding
windows, and keeps the best-validation checkpoint; ``predict`` maps
(T, n_vars) input windows to denormalized (tau, n_vars) forecasts.
"""

from __future__ import annotations

import numpy as np
import torch
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .data import RawSeries, SplitSpec, build_split_bundle
from .errors import DimensionError
from .metrics import mae
from .structure import edge_probabilities, threshold_adjacency
from .training import TrainConfig, model_from_checkpoint, train
from .validation import as_float_matrix, as_window_batch


class GaetsForecaster(BaseEstimator, RegressorMixin):
    """Joint graph-structure learner and multi-horizon forecaster.

    Parameters mirror the training configuration; ``mode="GTS"`` disables
    the reconstruction regularizer (ablation). After ``fit`` the learned
    edge probabilities are available as ``edge_probabilities_`` and the
    epoch log as ``history_``.
    """

    def __init__(
        self,
        input_horizon: int = 80,
        output_horizon: int = 40,
        mode: str = "GAETS",
        epochs: int = 50,
        batch_size: int = 64,
        learning_rate: float = 1e-3,
        seed: int = 0,
        stride: int = 1,
        val_fraction: float = 0.2,
        hidden_dim: int = 64,
        num_layers: int = 1,
        max_degree: int = 2,
        embed_dim: int = 64,
        sem_dim: int = 32,
        gumbel_temperature: float = 0.5,
        ss_decay: float = 2000.0,
        base_loss_kind: str = "mae",
        dtype: str = "float32",
    ):
        self.input_horizon = input_horizon
        self.output_horizon = output_horizon
        self.mode = mode
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.seed = seed
        self.stride = stride
        self.val_fraction = val_fraction
        self.hidden_dim = hidden_dim
        self.num_layers = num_layers
        self.max_degree = max_degree
        self.embed_dim = embed_dim
        self.sem_dim = sem_dim
        self.gumbel_temperature = gumbel_temperature
        self.ss_decay = ss_decay
        self.base_loss_kind = base_loss_kind
        self.dtype = dtype

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            seed=self.seed,
            mode=self.mode,
            input_horizon=self.input_horizon,
            output_horizon=self.output_horizon,
            gumbel_temperature=self.gumbel_temperature,
            ss_decay=self.ss_decay,
            max_degree=self.max_degree,
            hidden_dim=self.hidden_dim,
            num_layers=self.num_layers,
            embed_dim=self.embed_dim,
            sem_dim=self.sem_dim,
            base_loss_kind=self.base_loss_kind,
            dtype=self.dtype,
        )

    def fit(self, X, y=None):
        """Train on a time-major (length, n_vars) measurement matrix.

        ``y`` is ignored; targets come from the series itself via sliding
        windows. Column names are taken from a DataFrame input when present.
        """
        names = list(X.columns) if hasattr(X, "columns") else None
        X = as_float_matrix(X, "X")
        if names is None:
            names = [f"x{i + 1}" for i in range(X.shape[1])]
        series = RawSeries(values=X.T, var_names=tuple(names))
        spec = SplitSpec(
            train_fraction=1.0 - self.val_fraction,
            val_fraction=self.val_fraction,
            test_fraction=0.0,
        )
        bundle = build_split_bundle(
            [series],
            input_horizon=self.input_horizon,
            output_horizon=self.output_horizon,
            stride=self.stride,
            split_spec=spec,
        )
        result = train(self._train_config(), bundle)
        self.checkpoint_ = result.checkpoint
        self.history_ = result.log
        self.best_epoch_ = result.best_epoch
        self.best_val_base_ = result.best_val_base
        self.n_features_in_ = X.shape[1]
        self.var_names_ = tuple(names)
        self.edge_probabilities_ = edge_probabilities(result.checkpoint["edge_logits"])
        self._model, _ = model_from_checkpoint(result.checkpoint)
        return self

    def predict(self, X):
        """Forecast ``output_horizon`` steps from (T, n_vars) input windows.

        Accepts a single window or a (batch, T, n_vars) stack; returns
        forecasts in original units with matching batchness.
        """
        check_is_fitted(self, "checkpoint_")
        batch, single = as_window_batch(X, self.input_horizon, self.n_features_in_)
        ckpt = self.checkpoint_
        mean, std = ckpt["norm_mean"], ckpt["norm_std"]
        windows = (np.transpose(batch, (0, 2, 1)) - mean[None, :, None]) / std[None, :, None]
        adjacency = threshold_adjacency(ckpt["edge_logits"].to(self._model.dtype))
        with torch.no_grad():
            preds = self._model.forecaster(
                adjacency, torch.as_tensor(windows, dtype=self._model.dtype)
            ).numpy()
        preds = preds * std[None, :, None] + mean[None, :, None]
        out = np.transpose(preds, (0, 2, 1))
        return out[0] if single else out

    def score(self, X, y):
        """Negative mean absolute error of forecasts against true windows."""
        preds = self.predict(X)
        y = np.asarray(y, dtype=np.float64)
        if preds.shape != y.shape:
            raise DimensionError(f"y shape {y.shape} does not match forecasts {preds.shape}")
        return -mae(preds, y)
