"""Small torch helpers: dtype resolution, seeded RNG streams, deterministic init.

All randomness in the package flows through explicit ``torch.Generator``
objects so that runs are reproducible regardless of global RNG state.
"""

from __future__ import annotations

import hashlib

import torch
from torch import nn

from .errors import ConfigurationError

_DTYPES = {
    "float32": torch.float32,
    "float64": torch.float64,
    torch.float32: torch.float32,
    torch.float64: torch.float64,
}


def resolve_dtype(dtype) -> torch.dtype:
    try:
        return _DTYPES[dtype]
    except KeyError:
        raise ConfigurationError(f"unsupported dtype {dtype!r}") from None


def derive_seed(base_seed: int, stream: str) -> int:
    """Derive an independent, stable sub-stream seed from a base seed."""
    digest = hashlib.sha256(f"{base_seed}:{stream}".encode()).digest()
    return int.from_bytes(digest[:8], "big") % (2**63)


def seeded_generator(seed: int) -> torch.Generator:
    gen = torch.Generator()
    gen.manual_seed(int(seed))
    return gen


def stream_generator(base_seed: int, stream: str) -> torch.Generator:
    return seeded_generator(derive_seed(base_seed, stream))


def to_tensor(array, dtype) -> torch.Tensor:
    """Copy a (possibly read-only) numpy array into a torch tensor."""
    import numpy as np

    return torch.as_tensor(np.array(array, copy=True), dtype=resolve_dtype(dtype))


def uniform_fan_in_(module: nn.Module, generator: torch.Generator) -> None:
    """Re-draw a Linear/Conv1d layer's parameters as U(-1/sqrt(fan_in), ...)."""
    weight = module.weight
    fan_in = weight.shape[1:].numel()
    bound = fan_in**-0.5
    with torch.no_grad():
        weight.uniform_(-bound, bound, generator=generator)
        if module.bias is not None:
            module.bias.uniform_(-bound, bound, generator=generator)


def reset_layers_(module: nn.Module, generator: torch.Generator) -> None:
    """Deterministically re-initialize all Linear/Conv1d layers under ``module``."""
    for m in module.modules():
        if isinstance(m, (nn.Linear, nn.Conv1d)):
            uniform_fan_in_(m, generator)
