"""Diffusion convolution and the diffusion-convolutional GRU forecaster.

The diffusion filter is the two-direction random-walk polynomial

    sum_k ( theta_fwd[k] (D_O^-1 A)^k + theta_bwd[k] (D_I^-1 A^T)^k ) Y

with D_O/D_I the out-/in-degree matrices of A (edges i -> j stored at
A[i, j]; out-degree = row sums, in-degree = column sums). The forward walk
follows edge direction, the backward walk reverses it, so information flows
both from a node's children and from its parents. Zero-degree rows follow
the 0/0 := 0 convention so sparse samples never divide by zero.
"""

from __future__ import annotations

import torch
from torch import nn

from .errors import DimensionError, NumericError
from .nnutils import resolve_dtype


def _safe_row_scale(adjacency: torch.Tensor, degree: torch.Tensor) -> torch.Tensor:
    # Double-where keeps the untaken 1/0 branch out of the autograd graph.
    positive = degree > 0
    inv = torch.where(positive, 1.0 / torch.where(positive, degree, torch.ones_like(degree)),
                      torch.zeros_like(degree))
    return adjacency * inv[:, None]


def degree_normalize(adjacency: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Return the forward and backward walk matrices (D_O^-1 A, D_I^-1 A^T)."""
    if adjacency.ndim != 2 or adjacency.shape[0] != adjacency.shape[1]:
        raise DimensionError(f"adjacency must be square, got {tuple(adjacency.shape)}")
    out_degree = adjacency.sum(dim=1)
    in_degree = adjacency.sum(dim=0)
    return (
        _safe_row_scale(adjacency, out_degree),
        _safe_row_scale(adjacency.transpose(0, 1), in_degree),
    )


def _walk_concat(fwd, bwd, features, max_degree):
    """Concatenate [Y, fwd Y .. fwd^K Y, bwd Y .. bwd^K Y] on the feature axis.

    Walks run on an (n, batch*d) layout so each graph hop is one small GEMM;
    the result pairs with the degree-stacked filter weights.
    """
    if max_degree == 0:
        return features
    single = features.ndim == 2
    flat = features[None] if single else features.reshape(-1, *features.shape[-2:])
    batch, n, d = flat.shape
    cols = flat.permute(1, 0, 2).reshape(n, batch * d)
    pieces = [cols]
    walk = cols
    for _ in range(max_degree):
        walk = fwd @ walk
        pieces.append(walk)
    walk = cols
    for _ in range(max_degree):
        walk = bwd @ walk
        pieces.append(walk)
    stacked = torch.stack(pieces).reshape(-1, n, batch, d)
    out = stacked.permute(2, 1, 0, 3).reshape(batch, n, -1)
    if single:
        return out[0]
    return out.reshape(*features.shape[:-1], out.shape[-1])


def _stacked_weight(theta_fwd, theta_bwd):
    """Degree-stacked weight matching the _walk_concat block order."""
    k = theta_fwd.shape[0] - 1
    blocks = [theta_fwd[0] + theta_bwd[0]]
    blocks.extend(theta_fwd[i] for i in range(1, k + 1))
    blocks.extend(theta_bwd[i] for i in range(1, k + 1))
    return torch.cat(list(blocks), dim=0)


def _diffusion_polynomial(fwd, bwd, features, theta_fwd, theta_bwd, bias):
    stacked = _walk_concat(fwd, bwd, features, theta_fwd.shape[0] - 1)
    out = stacked @ _stacked_weight(theta_fwd, theta_bwd)
    if bias is not None:
        out = out + bias
    return out


def diffusion_conv(adjacency, features, theta_fwd, theta_bwd, bias=None):
    """Apply the diffusion filter to (..., n, d_in) node features.

    ``theta_fwd`` and ``theta_bwd`` are (K+1, d_in, d_out) stacks of weight
    matrices; the k = 0 term reduces to ``(theta_fwd[0] + theta_bwd[0]) Y``
    independently of the adjacency.
    """
    theta_fwd = torch.as_tensor(theta_fwd)
    theta_bwd = torch.as_tensor(theta_bwd)
    if theta_fwd.shape != theta_bwd.shape or theta_fwd.ndim != 3:
        raise DimensionError("theta stacks must share a (K+1, d_in, d_out) shape")
    if features.shape[-1] != theta_fwd.shape[1]:
        raise DimensionError(
            f"feature width {features.shape[-1]} != filter input {theta_fwd.shape[1]}"
        )
    if features.shape[-2] != adjacency.shape[0]:
        raise DimensionError(
            f"{features.shape[-2]} feature rows for {adjacency.shape[0]} nodes"
        )
    fwd, bwd = degree_normalize(adjacency)
    return _diffusion_polynomial(fwd, bwd, features, theta_fwd, theta_bwd, bias)


class DiffusionConv(nn.Module):
    """Learnable diffusion filter; one weight matrix per degree and direction."""

    def __init__(self, input_dim: int, output_dim: int, max_degree: int = 2,
                 dtype=torch.float32):
        super().__init__()
        if max_degree < 0:
            raise DimensionError("max_degree must be nonnegative")
        dtype = resolve_dtype(dtype)
        shape = (max_degree + 1, input_dim, output_dim)
        self.theta_fwd = nn.Parameter(torch.empty(shape, dtype=dtype))
        self.theta_bwd = nn.Parameter(torch.empty(shape, dtype=dtype))
        self.bias = nn.Parameter(torch.empty(output_dim, dtype=dtype))
        self.max_degree = max_degree
        self.input_dim = input_dim
        self.output_dim = output_dim
        self.reset_parameters(torch.Generator().manual_seed(0))

    def reset_parameters(self, generator: torch.Generator) -> None:
        bound = (self.input_dim * (2 * self.max_degree + 2)) ** -0.5
        with torch.no_grad():
            self.theta_fwd.uniform_(-bound, bound, generator=generator)
            self.theta_bwd.uniform_(-bound, bound, generator=generator)
            self.bias.uniform_(-bound, bound, generator=generator)

    def forward(self, supports, features: torch.Tensor) -> torch.Tensor:
        fwd, bwd = supports
        return _diffusion_polynomial(
            fwd, bwd, features, self.theta_fwd, self.theta_bwd, self.bias
        )


class DCGRUCell(nn.Module):
    """GRU cell whose affine maps are diffusion convolutions.

    Gates follow the convention
        R = sigmoid(W_R [X || H] + b_R)
        U = sigmoid(W_U [X || H] + b_U)
        C = tanh(W_C [X || R * H] + b_C)
        H' = U * H + (1 - U) * C
    where every W is a diffusion filter over the sampled adjacency.
    """

    def __init__(self, input_dim: int, hidden_dim: int, max_degree: int = 2,
                 dtype=torch.float32):
        super().__init__()
        width = input_dim + hidden_dim
        self.reset_gate = DiffusionConv(width, hidden_dim, max_degree, dtype)
        self.update_gate = DiffusionConv(width, hidden_dim, max_degree, dtype)
        self.candidate = DiffusionConv(width, hidden_dim, max_degree, dtype)
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.max_degree = max_degree

    def reset_parameters(self, generator: torch.Generator) -> None:
        for conv in (self.reset_gate, self.update_gate, self.candidate):
            conv.reset_parameters(generator)

    @staticmethod
    def _require_finite(tensor: torch.Tensor, gate: str) -> None:
        # Any NaN/Inf entry poisons the sum, so one scalar check suffices
        # (cheap enough to run on every gate of every cell).
        if not torch.isfinite(tensor.detach().sum()):
            raise NumericError(f"{gate} produced non-finite values")

    def fused_gate_tensors(self):
        """Degree-stacked gate weights, built once per unrolled sequence."""
        ru_weight = torch.cat(
            [
                _stacked_weight(self.reset_gate.theta_fwd, self.reset_gate.theta_bwd),
                _stacked_weight(self.update_gate.theta_fwd, self.update_gate.theta_bwd),
            ],
            dim=1,
        )
        ru_bias = torch.cat([self.reset_gate.bias, self.update_gate.bias])
        c_weight = _stacked_weight(self.candidate.theta_fwd, self.candidate.theta_bwd)
        return ru_weight, ru_bias, c_weight, self.candidate.bias

    def forward(self, supports, x: torch.Tensor, h: torch.Tensor,
                fused=None) -> torch.Tensor:
        fwd, bwd = supports
        hidden = self.hidden_dim
        if fused is None:
            fused = self.fused_gate_tensors()
        ru_weight, ru_bias, c_weight, c_bias = fused
        # R and U share their walk stack; their filters run as one fused GEMM.
        stacked = _walk_concat(fwd, bwd, torch.cat([x, h], dim=-1), self.max_degree)
        ru = torch.sigmoid(stacked @ ru_weight + ru_bias)
        r, u = ru[..., :hidden], ru[..., hidden:]
        self._require_finite(r, "reset gate")
        self._require_finite(u, "update gate")
        c_stacked = _walk_concat(fwd, bwd, torch.cat([x, r * h], dim=-1),
                                 self.max_degree)
        c = torch.tanh(c_stacked @ c_weight + c_bias)
        self._require_finite(c, "candidate state")
        h_new = u * h + (1.0 - u) * c
        self._require_finite(h_new, "hidden state")
        return h_new


class Seq2SeqForecaster(nn.Module):
    """Encoder-decoder stack of DCGRU cells with a shared scalar projection.

    The encoder folds exactly ``input_horizon`` steps into the hidden state;
    the decoder unrolls ``output_horizon`` steps starting from a zero GO
    symbol. During training the caller may pass per-step ``feed_truth``
    flags (scheduled sampling); inference is always autoregressive.
    """

    def __init__(self, input_horizon: int, output_horizon: int,
                 hidden_dim: int = 64, num_layers: int = 1, max_degree: int = 2,
                 dtype=torch.float32):
        super().__init__()
        dtype = resolve_dtype(dtype)
        dims = [1] + [hidden_dim] * (num_layers - 1)
        self.encoder_cells = nn.ModuleList(
            DCGRUCell(d, hidden_dim, max_degree, dtype) for d in dims
        )
        self.decoder_cells = nn.ModuleList(
            DCGRUCell(d, hidden_dim, max_degree, dtype) for d in dims
        )
        self.proj = nn.Linear(hidden_dim, 1, dtype=dtype)
        self.input_horizon = input_horizon
        self.output_horizon = output_horizon
        self.hidden_dim = hidden_dim
        self.num_layers = num_layers
        self._dtype = dtype

    def reset_parameters(self, generator: torch.Generator) -> None:
        for cell in (*self.encoder_cells, *self.decoder_cells):
            cell.reset_parameters(generator)
        from .nnutils import uniform_fan_in_

        uniform_fan_in_(self.proj, generator)

    def forward(self, adjacency: torch.Tensor, window: torch.Tensor, *,
                targets: torch.Tensor | None = None,
                feed_truth=None) -> torch.Tensor:
        """Map an (..., n, T) input window to an (..., n, tau) forecast.

        ``feed_truth[j]`` (j >= 1) requests the ground-truth value for
        decoder step j's input instead of the previous prediction; it
        requires ``targets``.
        """
        single = window.ndim == 2
        if single:
            window = window[None]
            if targets is not None:
                targets = targets[None]
        if window.ndim != 3:
            raise DimensionError(f"window must be 2-D or 3-D, got {tuple(window.shape)}")
        if window.shape[-1] != self.input_horizon:
            raise DimensionError(
                f"window has {window.shape[-1]} steps, model consumes "
                f"{self.input_horizon}"
            )
        if window.shape[-2] != adjacency.shape[0]:
            raise DimensionError(
                f"{window.shape[-2]} variables vs {adjacency.shape[0]}-node adjacency"
            )
        if feed_truth is not None and targets is None:
            raise DimensionError("feed_truth requires targets")
        window = window.to(self._dtype)
        supports = degree_normalize(adjacency)
        batch, n = window.shape[0], window.shape[1]

        state = [
            torch.zeros(batch, n, self.hidden_dim, dtype=self._dtype)
            for _ in range(self.num_layers)
        ]
        fused_enc = [cell.fused_gate_tensors() for cell in self.encoder_cells]
        fused_dec = [cell.fused_gate_tensors() for cell in self.decoder_cells]
        for t in range(self.input_horizon):
            inp = window[..., t : t + 1]
            for layer, cell in enumerate(self.encoder_cells):
                state[layer] = cell(supports, inp, state[layer], fused_enc[layer])
                inp = state[layer]

        outputs = []
        prev = torch.zeros(batch, n, 1, dtype=self._dtype)  # GO symbol
        for j in range(self.output_horizon):
            if j == 0:
                inp = prev
            elif feed_truth is not None and feed_truth[j]:
                inp = targets[..., j - 1 : j].to(self._dtype)
            else:
                inp = prev
            for layer, cell in enumerate(self.decoder_cells):
                state[layer] = cell(supports, inp, state[layer], fused_dec[layer])
                inp = state[layer]
            pred = self.proj(state[-1])
            outputs.append(pred)
            prev = pred
        forecastw = torch.cat(outputs, dim=-1)
        return forecastw[0] if single else forecastw

    @torch.no_grad()
    def forecast(self, adjacency: torch.Tensor, window: torch.Tensor) -> torch.Tensor:
        """Inference-mode autoregressive forecast."""
        return self.forward(adjacency, window).detach()
