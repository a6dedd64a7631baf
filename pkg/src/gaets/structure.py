"""Graph structure learning: node embeddings, pairwise link scores, edge sampling.

Each variable's full training series is encoded into an embedding vector by a
shared 1-D convolution stack; a link predictor scores every ordered node pair
from the concatenated embeddings; binary adjacency matrices are drawn from
the resulting per-edge Bernoulli logits with a straight-through binary
concrete (two-Gumbel sigmoid) relaxation.

Self-loops are treated like any other edge; nothing masks the diagonal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd
import torch
from torch import nn

from .errors import ConfigurationError, NumericError
from .nnutils import resolve_dtype, reset_layers_


@dataclass(frozen=True)
class ConvSpec:
    """Shape of the per-node convolution stack in the feature encoder."""

    channels: tuple[int, int] = (8, 16)
    kernel_size: int = 10
    pool_size: int = 16

    def __post_init__(self):
        if len(self.channels) != 2 or min(self.channels) < 1:
            raise ConfigurationError("conv channels must be two positive ints")
        if self.kernel_size < 1 or self.pool_size < 1:
            raise ConfigurationError("kernel and pool sizes must be positive")

    @property
    def min_input_length(self) -> int:
        # conv1 (valid) -> halving max-pool -> conv2 (valid)
        return 3 * self.kernel_size - 1


class NodeFeatureEncoder(nn.Module):
    """Shared per-variable conv + affine encoder producing one row per node.

    Row ``i`` of the output depends only on variable ``i``'s series: the
    convolutions treat nodes as batch entries and there is no cross-node
    mixing (deliberately no batch norm).
    """

    def __init__(self, conv_spec: ConvSpec | None = None, embed_dim: int = 64,
                 dtype=torch.float32):
        super().__init__()
        spec = conv_spec or ConvSpec()
        dtype = resolve_dtype(dtype)
        c1, c2 = spec.channels
        k = spec.kernel_size
        self.conv1 = nn.Conv1d(1, c1, k, dtype=dtype)
        self.conv2 = nn.Conv1d(c1, c2, k, dtype=dtype)
        self.pool = nn.MaxPool1d(2)
        self.adaptive_pool = nn.AdaptiveMaxPool1d(spec.pool_size)
        self.fc = nn.Linear(c2 * spec.pool_size, embed_dim, dtype=dtype)
        self.conv_spec = spec
        self.embed_dim = embed_dim
        self._dtype = dtype

    def reset_parameters(self, generator: torch.Generator) -> None:
        reset_layers_(self, generator)

    def forward(self, series) -> torch.Tensor:
        """Encode an (n_vars, length) series into an (n_vars, embed_dim) matrix."""
        if isinstance(series, np.ndarray):
            series = torch.as_tensor(series)
        series = series.to(self._dtype)
        if series.ndim != 2:
            raise ConfigurationError(
                f"encoder expects an (n_vars, length) matrix, got {tuple(series.shape)}"
            )
        min_len = self.conv_spec.min_input_length
        if series.shape[1] < min_len:
            raise ConfigurationError(
                f"series length {series.shape[1]} below the encoder's receptive "
                f"field; need at least {min_len} steps"
            )
        x = series[:, None, :]
        x = torch.relu(self.conv1(x))
        x = self.pool(x)
        x = torch.relu(self.conv2(x))
        x = self.adaptive_pool(x)
        return self.fc(x.flatten(1))


class LinkPredictor(nn.Module):
    """Scores every ordered node pair (i, j) from concatenated embeddings.

    Two fully connected layers on ``h_i || h_j`` (ReLU after the first) give
    one logit per pair; the full n-by-n logit matrix includes the diagonal.
    """

    def __init__(self, embed_dim: int = 64, hidden_dim: int = 64, dtype=torch.float32):
        super().__init__()
        dtype = resolve_dtype(dtype)
        self.fc1 = nn.Linear(2 * embed_dim, hidden_dim, dtype=dtype)
        self.fc2 = nn.Linear(hidden_dim, 1, dtype=dtype)

    def reset_parameters(self, generator: torch.Generator) -> None:
        reset_layers_(self, generator)

    def forward(self, embeddings: torch.Tensor) -> torch.Tensor:
        if not torch.isfinite(embeddings).all():
            raise NumericError("node embeddings contain non-finite values")
        n = embeddings.shape[0]
        head = embeddings.repeat_interleave(n, dim=0)
        tail = embeddings.repeat(n, 1)
        pairs = torch.cat([head, tail], dim=-1)
        scores = self.fc2(torch.relu(self.fc1(pairs)))
        return scores.view(n, n)


@dataclass
class AdjacencySample:
    """A binary adjacency draw plus the relaxed sample that carries gradients.

    ``hard`` holds exact {0, 1} forward values with a straight-through
    backward pass (gradient of hard w.r.t. soft is treated as 1); ``soft``
    is the binary-concrete relaxation.
    """

    hard: torch.Tensor
    soft: torch.Tensor
    temperature: float


def gumbel_noise(shape, generator: torch.Generator | None = None,
                 dtype=torch.float64) -> torch.Tensor:
    """Standard Gumbel draws of the given shape."""
    u = torch.rand(shape, generator=generator, dtype=resolve_dtype(dtype))
    tiny = torch.finfo(u.dtype).tiny
    return -torch.log(-torch.log(u.clamp_min(tiny)))


def sample_adjacency(
    logits: torch.Tensor,
    temperature: float,
    generator: torch.Generator | None = None,
    noise: torch.Tensor | None = None,
) -> AdjacencySample:
    """Draw a binary adjacency from per-edge Bernoulli logits.

    The relaxed sample is ``sigmoid((logits + g1 - g0) / temperature)`` with
    two independent standard Gumbel draws per edge, so the hard edge
    frequency equals ``sigmoid(logits)`` for any temperature. ``noise`` may
    supply frozen draws of shape (2, n, n) for reproducible gradient checks.
    """
    if not temperature > 0:
        raise ConfigurationError(f"temperature must be positive, got {temperature}")
    if not torch.isfinite(logits).all():
        raise NumericError("edge logits contain non-finite values")
    if noise is None:
        noise = gumbel_noise((2, *logits.shape), generator, dtype=logits.dtype)
    noise = noise.to(logits.dtype)
    soft = torch.sigmoid((logits + noise[0] - noise[1]) / temperature)
    hard = (soft > 0.5).to(logits.dtype)
    # (soft - soft.detach()) is exactly zero forward, identity backward, so
    # the straight-through sample carries exact {0, 1} values.
    straight_through = hard.detach() + (soft - soft.detach())
    return AdjacencySample(hard=straight_through, soft=soft, temperature=temperature)


def edge_probabilities(logits) -> np.ndarray:
    """Entrywise sigmoid of the logits, as a plain float64 array."""
    arr = np.asarray(
        logits.detach().cpu().numpy() if isinstance(logits, torch.Tensor) else logits,
        dtype=np.float64,
    )
    if not np.isfinite(arr).all():
        raise NumericError("edge logits contain non-finite values")
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-arr))


def threshold_adjacency(logits: torch.Tensor) -> torch.Tensor:
    """Deterministic evaluation-time graph: edges where probability > 0.5."""
    return (logits > 0).to(logits.dtype)


def edge_list_frame(probabilities: np.ndarray, var_names) -> pd.DataFrame:
    """Flatten an edge-probability matrix into a (source, target, prob) table."""
    names = list(var_names)
    rows = [
        {"source": names[i], "target": names[j], "probability": probabilities[i, j]}
        for i in range(len(names))
        for j in range(len(names))
    ]
    return pd.DataFrame(rows, columns=["source", "target", "probability"])
