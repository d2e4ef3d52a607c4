"""Supervised imitation: train steering nets on expert-labeled datasets and
run the architecture sweeps (input set x width x depth x activation x
dataset)."""

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .trajgen import Dataset

SWEEP_COLUMNS = (
    "input", "layers", "width", "activation", "dataset", "seed",
    "mse", "mean_cm", "max_cm", "std_cm", "latency_us",
)


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 64
    learning_rate: float = 1e-3
    seed: int = 0
    early_stop_patience: int = 20
    validation_fraction: float = 0.1

    def __post_init__(self):
        if min(self.epochs, self.batch_size, self.early_stop_patience) <= 0:
            raise ValueError("epochs, batch_size and patience must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 < self.validation_fraction <= 0.5:
            raise ValueError("validation_fraction must be in (0, 0.5]")


@dataclass
class TrainResult:
    net: nn.Mlp
    train_losses: list
    val_losses: list
    best_epoch: int
    best_val_loss: float


def train_supervised(
    dataset: Dataset,
    hidden: tuple,
    activation: str,
    output_scale: float,
    cfg: TrainConfig,
) -> TrainResult:
    """Adam on the batch MSE; returns the parameters from the epoch with
    the lowest validation loss, stopping early once validation stalls."""
    rng = np.random.default_rng(cfg.seed)
    n = len(dataset)
    perm = rng.permutation(n)
    n_val = max(1, int(round(n * cfg.validation_fraction)))
    val_idx = perm[:n_val]
    train_idx = perm[n_val:]
    if train_idx.size == 0:
        raise ValueError("dataset too small for the validation split")
    Xt, yt = dataset.features[train_idx], dataset.labels[train_idx]
    Xv, yv = dataset.features[val_idx], dataset.labels[val_idx]

    dims = [dataset.features.shape[1], *hidden, 1]
    net = nn.init_glorot(dims, activation, output_scale, seed=int(rng.integers(2**31)))
    opt = nn.adam_init(net, cfg.learning_rate)

    best = net.copy()
    best_val = nn.loss_mse(net, Xv, yv)
    best_epoch = -1
    train_losses, val_losses = [], []
    since_best = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(train_idx.size)
        epoch_loss = 0.0
        for lo in range(0, order.size, cfg.batch_size):
            sel = order[lo : lo + cfg.batch_size]
            gw, gb, loss = nn.backward(net, Xt[sel], yt[sel])
            if not math.isfinite(loss):
                raise TrainingDiverged(
                    f"loss became non-finite at epoch {epoch} (batch offset {lo})"
                )
            nn.adam_step(net, gw, gb, opt)
            epoch_loss += loss * sel.size
        train_losses.append(epoch_loss / order.size)
        val_loss = nn.loss_mse(net, Xv, yv)
        val_losses.append(val_loss)
        if val_loss < best_val:
            best_val = val_loss
            best = net.copy()
            best_epoch = epoch
            since_best = 0
        else:
            since_best += 1
            if since_best >= cfg.early_stop_patience:
                break
    return TrainResult(best, train_losses, val_losses, best_epoch, best_val)


@dataclass(frozen=True)
class SweepSpec:
    input_kinds: tuple = ("i3", "i21", "i40")
    hidden_layer_counts: tuple = (1, 2, 3)
    widths: tuple = (10, 20, 40)
    activations: tuple = ("relu", "tanh", "sigmoid")
    dataset_ids: tuple = (3,)
    seeds: tuple = (0, 1, 2)

    def __post_init__(self):
        for name in ("input_kinds", "hidden_layer_counts", "widths",
                     "activations", "dataset_ids", "seeds"):
            if not getattr(self, name):
                raise ValueError(f"{name} must be nonempty")

    def cells(self):
        for kind in self.input_kinds:
            for layers in self.hidden_layer_counts:
                for width in self.widths:
                    for act in self.activations:
                        for ds in self.dataset_ids:
                            for seed in self.seeds:
                                yield kind, layers, width, act, ds, seed


@dataclass
class SweepResult:
    rows: list = field(default_factory=list)   # dicts keyed by SWEEP_COLUMNS
    errors: list = field(default_factory=list)  # (cell, message)


def run_sweep(spec: SweepSpec, datasets, evaluate, base_cfg: TrainConfig,
              output_scale: float) -> SweepResult:
    """Train and closed-loop-evaluate every cell of the sweep.

    `datasets` maps (dataset_id, input_kind) to a Dataset; `evaluate` maps
    a trained net and its input kind to closed-loop numbers (a dict with
    mean_cm / max_cm / std_cm / latency_us). Per-cell failures are recorded
    and the sweep keeps going.
    """
    result = SweepResult()
    for cell in spec.cells():
        kind, layers, width, act, ds_id, seed = cell
        row = {
            "input": kind, "layers": layers, "width": width,
            "activation": act, "dataset": ds_id, "seed": seed,
            "mse": math.nan, "mean_cm": math.nan, "max_cm": math.nan,
            "std_cm": math.nan, "latency_us": math.nan,
        }
        try:
            dataset = datasets[(ds_id, kind)]
            cfg = TrainConfig(
                epochs=base_cfg.epochs,
                batch_size=base_cfg.batch_size,
                learning_rate=base_cfg.learning_rate,
                seed=seed,
                early_stop_patience=base_cfg.early_stop_patience,
                validation_fraction=base_cfg.validation_fraction,
            )
            trained = train_supervised(dataset, (width,) * layers, act, output_scale, cfg)
            row["mse"] = trained.best_val_loss
            row.update(evaluate(trained.net, kind))
        except Exception as exc:  # noqa: BLE001 - sweep must survive bad cells
            result.errors.append((cell, str(exc)))
        result.rows.append(row)
    return result


def save_sweep(result: SweepResult, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in result.rows:
            writer.writerow(row)
