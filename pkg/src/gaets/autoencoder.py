"""Nonlinear structural-equation reconstruction through the learned adjacency.

Every node's feature vector is encoded by a shared map ``g1``, mixed across
nodes by the transposed adjacency, and decoded by a shared map ``g2``:
``X_hat = g2(A^T g1(X))``. The reconstruction error is the regularizer that
couples structure learning to the forecasting objective.
"""

from __future__ import annotations

import math

import torch
from torch import nn

from .errors import DimensionError
from .nnutils import resolve_dtype, reset_layers_


class SemAutoencoder(nn.Module):
    """Shared per-node encoder/decoder pair around an adjacency mixing step.

    ``g1`` and ``g2`` are one-hidden-layer MLPs (ReLU) applied identically
    to every node row. ``hidden_dim`` defaults to ``sem_dim`` but may be set
    independently, e.g. to ``2 * feature_dim`` when an exact identity map is
    needed.
    """

    def __init__(self, feature_dim: int, sem_dim: int = 32,
                 hidden_dim: int | None = None, dtype=torch.float32):
        super().__init__()
        dtype = resolve_dtype(dtype)
        hidden = hidden_dim or sem_dim
        self.g1 = nn.Sequential(
            nn.Linear(feature_dim, hidden, dtype=dtype),
            nn.ReLU(),
            nn.Linear(hidden, sem_dim, dtype=dtype),
        )
        self.g2 = nn.Sequential(
            nn.Linear(sem_dim, hidden, dtype=dtype),
            nn.ReLU(),
            nn.Linear(hidden, feature_dim, dtype=dtype),
        )
        self.feature_dim = feature_dim
        self.sem_dim = sem_dim

    def reset_parameters(self, generator: torch.Generator) -> None:
        reset_layers_(self, generator)

    def _check(self, features: torch.Tensor, adjacency: torch.Tensor) -> None:
        if adjacency.ndim != 2 or adjacency.shape[0] != adjacency.shape[1]:
            raise DimensionError(f"adjacency must be square, got {tuple(adjacency.shape)}")
        if features.ndim < 2 or features.shape[-2] != adjacency.shape[0]:
            raise DimensionError(
                f"features with {tuple(features.shape)} do not match "
                f"{adjacency.shape[0]} nodes"
            )
        if features.shape[-1] != self.feature_dim:
            raise DimensionError(
                f"feature width {features.shape[-1]} != {self.feature_dim}"
            )

    def reconstruct(self, features: torch.Tensor, adjacency: torch.Tensor) -> torch.Tensor:
        """Return ``g2(A^T g1(X))`` for (..., n, feature_dim) inputs."""
        self._check(features, adjacency)
        encoded = self.g1(features)
        mixed = torch.einsum("ji,...jd->...id", adjacency, encoded)
        return self.g2(mixed)

    def loss(self, features: torch.Tensor, adjacency: torch.Tensor) -> torch.Tensor:
        """Mean squared reconstruction error with the 1/(2n) convention.

        ``n`` counts node rows across the whole batch, i.e.
        ``n_vars * batch_size``; the value is zero iff reconstruction is
        exact.
        """
        recon = self.reconstruct(features, adjacency)
        n_rows = math.prod(features.shape[:-1])
        return (features - recon).pow(2).sum() / (2.0 * n_rows)
