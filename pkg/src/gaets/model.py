"""The joint model: structure learner + DCGRU forecaster + SEM reconstructor."""

from __future__ import annotations

import torch
from torch import nn

from .autoencoder import SemAutoencoder
from .dcgru import Seq2SeqForecaster
from .nnutils import resolve_dtype
from .structure import ConvSpec, LinkPredictor, NodeFeatureEncoder


class GaetsModel(nn.Module):
    """All trainable components of the joint forecasting objective.

    The feature encoder and link predictor turn the training-split series
    into per-edge Bernoulli logits; the forecaster and the SEM autoencoder
    both consume adjacency samples drawn from those logits.
    """

    def __init__(
        self,
        n_vars: int,
        input_horizon: int,
        output_horizon: int,
        *,
        embed_dim: int = 64,
        link_hidden_dim: int = 64,
        sem_dim: int = 32,
        sem_hidden_dim: int | None = None,
        hidden_dim: int = 64,
        num_layers: int = 1,
        max_degree: int = 2,
        conv_spec: ConvSpec | None = None,
        dtype=torch.float32,
    ):
        super().__init__()
        dtype = resolve_dtype(dtype)
        self.feature_encoder = NodeFeatureEncoder(conv_spec, embed_dim, dtype)
        self.link_predictor = LinkPredictor(embed_dim, link_hidden_dim, dtype)
        self.forecaster = Seq2SeqForecaster(
            input_horizon, output_horizon, hidden_dim, num_layers, max_degree, dtype
        )
        self.sem = SemAutoencoder(input_horizon, sem_dim, sem_hidden_dim, dtype)
        self.n_vars = n_vars
        self.input_horizon = input_horizon
        self.output_horizon = output_horizon
        self._dtype = dtype

    @property
    def dtype(self) -> torch.dtype:
        return self._dtype

    def reset_parameters(self, generator: torch.Generator) -> None:
        self.feature_encoder.reset_parameters(generator)
        self.link_predictor.reset_parameters(generator)
        self.forecaster.reset_parameters(generator)
        self.sem.reset_parameters(generator)

    def edge_logits(self, series: torch.Tensor) -> torch.Tensor:
        """Per-edge Bernoulli logits from the full training series."""
        return self.link_predictor(self.feature_encoder(series))
