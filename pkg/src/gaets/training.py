"""Objective composition, the training loop, checkpoints and gradient checking.

The total objective is the forecasting base loss plus the SEM reconstruction
loss, with the SAME adjacency sample feeding both terms each step. ``GTS``
mode is the ablation that drops the reconstruction term entirely (its
parameters receive no gradient).

The base loss is elementwise mean absolute error: the average over output
steps of the mean absolute deviation across nodes and batch. A squared-error
variant is available behind ``base_loss_kind="mse"`` for sensitivity checks.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from .data import SplitBundle, WindowedDataset
from .errors import ConfigurationError, DimensionError, NumericError
from .model import GaetsModel
from .nnutils import (
    derive_seed,
    resolve_dtype,
    seeded_generator,
    stream_generator,
    to_tensor,
)
from .structure import ConvSpec, gumbel_noise, sample_adjacency, threshold_adjacency

CHECKPOINT_VERSION = "gaets-ckpt-v1"
MODES = ("GAETS", "GTS")


def config_digest(mapping) -> str:
    """Stable hash of a JSON-serializable configuration mapping."""
    canonical = json.dumps(mapping, sort_keys=True, default=_jsonify)
    return hashlib.sha256(canonical.encode()).hexdigest()


def _jsonify(value):
    if isinstance(value, tuple):
        return list(value)
    if isinstance(value, (np.integer, np.floating)):
        return value.item()
    raise TypeError(f"not JSON-serializable: {value!r}")


def base_loss(pred: torch.Tensor, truth: torch.Tensor, kind: str = "mae") -> torch.Tensor:
    """Forecasting loss between predicted and true output windows."""
    if pred.shape != truth.shape:
        raise DimensionError(f"pred {tuple(pred.shape)} vs truth {tuple(truth.shape)}")
    diff = pred - truth
    if kind == "mae":
        return diff.abs().mean()
    if kind == "mse":
        return diff.pow(2).mean()
    raise ConfigurationError(f"unknown base loss kind {kind!r}")


@dataclass
class LossBreakdown:
    """The two objective terms and their sum (total = base + autoencoder)."""

    base: torch.Tensor
    autoencoder: torch.Tensor
    total: torch.Tensor

    def items(self):
        return (("base", self.base), ("autoencoder", self.autoencoder),
                ("total", self.total))


def total_loss(
    model: GaetsModel,
    inputs: torch.Tensor,
    targets: torch.Tensor,
    adjacency: torch.Tensor,
    *,
    mode: str = "GAETS",
    ae_weight: float = 1.0,
    base_loss_kind: str = "mae",
    feed_truth=None,
) -> LossBreakdown:
    """Evaluate the joint objective on one batch with a fixed adjacency."""
    if mode not in MODES:
        raise ConfigurationError(f"mode must be one of {MODES}, got {mode!r}")
    preds = model.forecaster(adjacency, inputs, targets=targets, feed_truth=feed_truth)
    base = base_loss(preds, targets, base_loss_kind)
    if mode == "GTS":
        autoencoder = base.detach() * 0.0
    else:
        autoencoder = ae_weight * model.sem.loss(inputs, adjacency)
    return LossBreakdown(base=base, autoencoder=autoencoder, total=base + autoencoder)


@dataclass
class TrainConfig:
    """Everything that determines a training run (fully deterministic per seed)."""

    epochs: int = 200
    batch_size: int = 64
    learning_rate: float = 1e-3
    seed: int = 0
    mode: str = "GAETS"
    input_horizon: int = 80
    output_horizon: int = 40
    gumbel_temperature: float = 0.5
    ss_decay: float = 2000.0
    max_degree: int = 2
    hidden_dim: int = 64
    num_layers: int = 1
    embed_dim: int = 64
    link_hidden_dim: int = 64
    sem_dim: int = 32
    sem_hidden_dim: int | None = None
    conv_channels: tuple[int, int] = (8, 16)
    conv_kernel: int = 10
    conv_pool: int = 16
    lr_milestones: tuple[int, ...] = (20, 30)
    lr_decay: float = 0.1
    clip_norm: float = 5.0
    base_loss_kind: str = "mae"
    ae_weight: float = 1.0
    dtype: str = "float32"
    val_batch_size: int = 256

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.epochs < 0:
            raise ConfigurationError("epochs must be nonnegative")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be positive")
        if not self.gumbel_temperature > 0:
            raise ConfigurationError("gumbel_temperature must be positive")
        if self.base_loss_kind not in ("mae", "mse"):
            raise ConfigurationError(f"unknown base_loss_kind {self.base_loss_kind!r}")
        resolve_dtype(self.dtype)
        object.__setattr__(self, "conv_channels", tuple(self.conv_channels))
        object.__setattr__(self, "lr_milestones", tuple(self.lr_milestones))

    def digest(self) -> str:
        return config_digest(asdict(self))


def train_config_from_dict(d: dict) -> TrainConfig:
    return TrainConfig(**d)


def build_model(config: TrainConfig, n_vars: int) -> GaetsModel:
    spec = ConvSpec(tuple(config.conv_channels), config.conv_kernel, config.conv_pool)
    return GaetsModel(
        n_vars,
        config.input_horizon,
        config.output_horizon,
        embed_dim=config.embed_dim,
        link_hidden_dim=config.link_hidden_dim,
        sem_dim=config.sem_dim,
        sem_hidden_dim=config.sem_hidden_dim,
        hidden_dim=config.hidden_dim,
        num_layers=config.num_layers,
        max_degree=config.max_degree,
        conv_spec=spec,
        dtype=resolve_dtype(config.dtype),
    )


def teacher_forcing_probability(step: int, decay: float) -> float:
    """Inverse-sigmoid schedule for feeding ground truth to the decoder."""
    if decay <= 0:
        return 0.0
    x = step / decay
    if x > 60:
        return 0.0
    return decay / (decay + math.exp(x))


@dataclass
class EpochRecord:
    epoch: int
    base: float
    autoencoder: float
    total: float
    val_base: float
    wall_time: float
    seed: int

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class TrainResult:
    checkpoint: dict
    log: list[EpochRecord]
    best_epoch: int
    best_val_base: float
    aborted: bool = False
    diagnostic: str | None = None


def _clone_state(model: GaetsModel) -> dict:
    return {k: v.detach().clone() for k, v in model.state_dict().items()}


def dataset_base_loss(
    model: GaetsModel,
    adjacency: torch.Tensor,
    dataset: WindowedDataset,
    *,
    kind: str = "mae",
    batch_size: int = 256,
) -> float:
    """Exact mean base loss of autoregressive forecasts over a whole dataset."""
    total = 0.0
    count = 0
    with torch.no_grad():
        for start in range(0, len(dataset), batch_size):
            x = to_tensor(dataset.inputs[start : start + batch_size], model.dtype)
            y = to_tensor(dataset.targets[start : start + batch_size], model.dtype)
            preds = model.forecaster(adjacency, x)
            diff = preds - y
            total += float(diff.abs().sum() if kind == "mae" else diff.pow(2).sum())
            count += diff.numel()
    return total / count


def train(config: TrainConfig, bundle: SplitBundle) -> TrainResult:
    """Run the full training loop and return the best-validation checkpoint.

    Deterministic given ``config.seed``: parameter init, batch order, Gumbel
    draws and scheduled-sampling coins each use an independent stream derived
    from it. A non-finite loss aborts the run and returns the state from the
    end of the last completed epoch, with a diagnostic naming the term.
    """
    if len(bundle.train) == 0:
        raise ConfigurationError("training split is empty")
    if config.epochs > 0 and len(bundle.val) == 0:
        raise ConfigurationError("validation split is empty")
    if bundle.train.input_horizon != config.input_horizon:
        raise ConfigurationError(
            f"data input horizon {bundle.train.input_horizon} != "
            f"config {config.input_horizon}"
        )
    if bundle.train.output_horizon != config.output_horizon:
        raise ConfigurationError(
            f"data output horizon {bundle.train.output_horizon} != "
            f"config {config.output_horizon}"
        )
    dtype = resolve_dtype(config.dtype)
    model = build_model(config, bundle.n_vars)
    model.reset_parameters(stream_generator(config.seed, "init"))

    train_series = to_tensor(bundle.train_series, dtype)
    x_train = to_tensor(bundle.train.inputs, dtype)
    y_train = to_tensor(bundle.train.targets, dtype)

    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    scheduler = torch.optim.lr_scheduler.MultiStepLR(
        optimizer, milestones=list(config.lr_milestones), gamma=config.lr_decay
    )
    order_gen = stream_generator(config.seed, "batch-order")
    gumbel_gen = stream_generator(config.seed, "gumbel")
    coin_gen = stream_generator(config.seed, "scheduled-sampling")

    tau = config.output_horizon
    n_samples = len(bundle.train)
    log: list[EpochRecord] = []
    best_state = _clone_state(model)
    best_val = math.inf
    best_epoch = -1
    last_good = _clone_state(model)
    aborted = False
    diagnostic = None
    global_step = 0

    for epoch in range(1, config.epochs + 1):
        t_start = time.perf_counter()
        perm = torch.randperm(n_samples, generator=order_gen)
        base_sum = ae_sum = 0.0
        try:
            for start in range(0, n_samples, config.batch_size):
                idx = perm[start : start + config.batch_size]
                x, y = x_train[idx], y_train[idx]
                logits = model.edge_logits(train_series)
                sample = sample_adjacency(
                    logits, config.gumbel_temperature, gumbel_gen
                )
                feed = None
                if config.ss_decay > 0:
                    p = teacher_forcing_probability(global_step, config.ss_decay)
                    coins = torch.rand(tau, generator=coin_gen) < p
                    feed = coins.tolist()
                    feed[0] = False
                breakdown = total_loss(
                    model, x, y, sample.hard,
                    mode=config.mode,
                    ae_weight=config.ae_weight,
                    base_loss_kind=config.base_loss_kind,
                    feed_truth=feed,
                )
                for term, value in breakdown.items():
                    if not torch.isfinite(value):
                        raise NumericError(f"{term} loss became non-finite")
                optimizer.zero_grad()
                breakdown.total.backward()
                torch.nn.utils.clip_grad_norm_(model.parameters(), config.clip_norm)
                optimizer.step()
                global_step += 1
                base_sum += float(breakdown.base.detach()) * len(idx)
                ae_sum += float(breakdown.autoencoder.detach()) * len(idx)
        except NumericError as err:
            aborted = True
            diagnostic = str(err)
            model.load_state_dict(last_good)
            break
        scheduler.step()
        with torch.no_grad():
            val_adjacency = threshold_adjacency(model.edge_logits(train_series))
        val_base = dataset_base_loss(
            model, val_adjacency, bundle.val,
            kind=config.base_loss_kind, batch_size=config.val_batch_size,
        )
        if not math.isfinite(val_base):
            aborted = True
            diagnostic = "validation base loss became non-finite"
            model.load_state_dict(last_good)
            break
        base_mean = base_sum / n_samples
        ae_mean = ae_sum / n_samples
        log.append(
            EpochRecord(
                epoch=epoch,
                base=base_mean,
                autoencoder=ae_mean,
                total=base_mean + ae_mean,
                val_base=val_base,
                wall_time=time.perf_counter() - t_start,
                seed=config.seed,
            )
        )
        if val_base < best_val:
            best_val = val_base
            best_epoch = epoch
            best_state = _clone_state(model)
        last_good = _clone_state(model)

    model.load_state_dict(last_good if aborted else best_state)
    try:
        with torch.no_grad():
            final_logits = model.edge_logits(train_series).detach().clone()
    except NumericError:
        # Aborts caused by non-finite inputs cannot materialize logits at all.
        final_logits = None
    checkpoint = {
        "format_version": CHECKPOINT_VERSION,
        "config": asdict(config),
        "config_hash": config.digest(),
        "seed": config.seed,
        "mode": config.mode,
        "n_vars": bundle.n_vars,
        "var_names": list(bundle.var_names),
        "input_horizon": config.input_horizon,
        "output_horizon": config.output_horizon,
        "norm_mean": bundle.norm_stats.mean.copy(),
        "norm_std": bundle.norm_stats.std.copy(),
        "model_state": _clone_state(model),
        "edge_logits": final_logits,
        "best_epoch": best_epoch,
        "best_val_base": best_val,
        "aborted": aborted,
    }
    return TrainResult(
        checkpoint=checkpoint,
        log=log,
        best_epoch=best_epoch,
        best_val_base=best_val,
        aborted=aborted,
        diagnostic=diagnostic,
    )


def save_checkpoint(path, checkpoint: dict) -> None:
    torch.save(checkpoint, path)


def load_checkpoint(path) -> dict:
    checkpoint = torch.load(path, map_location="cpu", weights_only=False)
    if checkpoint.get("format_version") != CHECKPOINT_VERSION:
        raise ConfigurationError(
            f"checkpoint version {checkpoint.get('format_version')!r} not supported"
        )
    return checkpoint


def model_from_checkpoint(checkpoint: dict) -> tuple[GaetsModel, TrainConfig]:
    config = train_config_from_dict(checkpoint["config"])
    model = build_model(config, checkpoint["n_vars"])
    model.load_state_dict(checkpoint["model_state"])
    model.eval()
    return model, config


# ---------------------------------------------------------------------------
# Finite-difference gradient checking
# ---------------------------------------------------------------------------

_GROUP_PREFIXES = (
    ("feature_encoder.", "feature_encoder"),
    ("link_predictor.", "link_predictor"),
    ("sem.", "sem_maps"),
    ("forecaster.encoder_cells.", "encoder_gates"),
    ("forecaster.decoder_cells.", "decoder_gates"),
    ("forecaster.proj.", "output_projection"),
)


def parameter_group(name: str) -> str:
    for prefix, group in _GROUP_PREFIXES:
        if name.startswith(prefix):
            return group
    return "other"


@dataclass
class GradcheckProbe:
    """A small double-precision instance with frozen Gumbel noise."""

    model: GaetsModel
    series: torch.Tensor
    inputs: torch.Tensor
    targets: torch.Tensor
    noise: torch.Tensor
    temperature: float
    mode: str = "GAETS"
    ae_weight: float = 1.0
    resamples: int = 0


def build_probe(
    seed: int = 0,
    n_vars: int = 3,
    input_horizon: int = 6,
    output_horizon: int = 3,
    batch_size: int = 2,
    *,
    mode: str = "GAETS",
    temperature: float = 0.5,
    boundary_margin: float = 1e-3,
    max_resamples: int = 10,
) -> GradcheckProbe:
    """Build the gradcheck probe: tiny model, random data, frozen noise.

    The frozen Gumbel noise is redrawn (up to ``max_resamples`` times) if any
    relaxed sample lands within ``boundary_margin`` of the 0.5 discretization
    boundary, where the straight-through estimator is non-differentiable.
    """
    if not (2 <= n_vars <= 4 and input_horizon <= 8 and output_horizon <= 4):
        raise ConfigurationError("probe must be small: n <= 4, T <= 8, tau <= 4")
    gen = seeded_generator(derive_seed(seed, "gradcheck-probe"))
    model = GaetsModel(
        n_vars,
        input_horizon,
        output_horizon,
        embed_dim=8,
        link_hidden_dim=8,
        sem_dim=6,
        sem_hidden_dim=8,
        hidden_dim=8,
        num_layers=1,
        max_degree=2,
        conv_spec=ConvSpec(channels=(2, 4), kernel_size=3, pool_size=4),
        dtype=torch.float64,
    )
    model.reset_parameters(gen)
    series = torch.randn(n_vars, 32, generator=gen, dtype=torch.float64)
    inputs = torch.randn(batch_size, n_vars, input_horizon, generator=gen,
                         dtype=torch.float64)
    targets = torch.randn(batch_size, n_vars, output_horizon, generator=gen,
                          dtype=torch.float64)
    with torch.no_grad():
        logits = model.edge_logits(series)
    resamples = 0
    while True:
        noise = gumbel_noise((2, n_vars, n_vars), gen, dtype=torch.float64)
        with torch.no_grad():
            soft = torch.sigmoid((logits + noise[0] - noise[1]) / temperature)
        if (soft - 0.5).abs().min() > boundary_margin:
            break
        resamples += 1
        if resamples > max_resamples:
            raise NumericError(
                "could not draw a probe away from the discretization boundary"
            )
    return GradcheckProbe(
        model=model, series=series, inputs=inputs, targets=targets,
        noise=noise, temperature=temperature, mode=mode, resamples=resamples,
    )


def probe_total_loss(probe: GradcheckProbe) -> LossBreakdown:
    """Joint objective on the probe, through the relaxed adjacency sample."""
    logits = probe.model.edge_logits(probe.series)
    sample = sample_adjacency(logits, probe.temperature, noise=probe.noise)
    return total_loss(
        probe.model, probe.inputs, probe.targets, sample.soft,
        mode=probe.mode, ae_weight=probe.ae_weight,
    )


@dataclass
class GradcheckReport:
    max_rel_error: float
    per_group: dict[str, float] = field(default_factory=dict)
    coords_checked: int = 0
    no_parameters_probed: bool = False
    resamples: int = 0

    def passed(self, tolerance: float = 1e-4) -> bool:
        return self.no_parameters_probed or self.max_rel_error < tolerance


def gradcheck(
    probe: GradcheckProbe | None = None,
    epsilon: float = 1e-5,
    max_coords_per_tensor: int = 40,
    seed: int = 0,
) -> GradcheckReport:
    """Compare analytic gradients of the total loss against central differences.

    Every parameter group is probed on a deterministic random subset of
    coordinates; the report carries the worst relative error per group, with
    relative error |g_a - g_fd| / max(|g_a|, |g_fd|, 1e-5).
    """
    if not 1e-6 <= epsilon <= 1e-4:
        raise ConfigurationError("epsilon must lie in [1e-6, 1e-4]")
    if probe is None:
        probe = build_probe(seed)
    model = probe.model
    params = [(n, p) for n, p in model.named_parameters() if p.requires_grad]
    if not params:
        return GradcheckReport(
            max_rel_error=0.0, no_parameters_probed=True, resamples=probe.resamples
        )
    model.zero_grad()
    probe_total_loss(probe).total.backward()
    analytic = {
        name: (p.grad.detach().clone() if p.grad is not None
               else torch.zeros_like(p))
        for name, p in params
    }
    coord_gen = seeded_generator(derive_seed(seed, "gradcheck-coords"))
    per_group: dict[str, float] = {}
    checked = 0
    with torch.no_grad():
        for name, p in params:
            flat = p.data.view(-1)
            numel = flat.numel()
            if numel <= max_coords_per_tensor:
                coords = range(numel)
            else:
                coords = torch.randperm(numel, generator=coord_gen)[
                    :max_coords_per_tensor
                ].tolist()
            group = parameter_group(name)
            worst = per_group.get(group, 0.0)
            grads = analytic[name].view(-1)
            for i in coords:
                original = flat[i].item()
                flat[i] = original + epsilon
                f_plus = float(probe_total_loss(probe).total)
                flat[i] = original - epsilon
                f_minus = float(probe_total_loss(probe).total)
                flat[i] = original
                g_fd = (f_plus - f_minus) / (2.0 * epsilon)
                g_an = grads[i].item()
                rel = abs(g_an - g_fd) / max(abs(g_an), abs(g_fd), 1e-5)
                worst = max(worst, rel)
                checked += 1
            per_group[group] = worst
    return GradcheckReport(
        max_rel_error=max(per_group.values()),
        per_group=per_group,
        coords_checked=checked,
        resamples=probe.resamples,
    )
