"""Training loop: Adam at a constant learning rate, binary cross entropy,
periodic validation with early stopping, and optional affine augmentation
(rotation, scaling, translation)."""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .model import CavityNet, NetworkSpec


@dataclass(frozen=True)
class TrainSpec:
    learning_rate: float = 1e-4
    batch_size: int = 2
    max_iters: int = 20000
    eval_every: int = 500  # validation cadence in iterations
    patience: int = 10  # consecutive non-improving evaluations before stopping
    seed: int = 0
    augment: bool = True
    rotate_deg: float = 10.0
    scale_range: tuple[float, float] = (0.9, 1.1)
    translate_frac: float = 0.05

    def validate(self) -> None:
        if self.learning_rate <= 0 or self.batch_size < 1 or self.max_iters < 1:
            raise ValueError("learning_rate, batch_size and max_iters must be positive")
        if self.eval_every < 1 or self.patience < 1:
            raise ValueError("eval_every and patience must be >= 1")
        if self.scale_range[0] > self.scale_range[1]:
            raise ValueError("scale_range must be (lo, hi)")


class EarlyStopper:
    """Stop once the loss has not improved for `patience` consecutive
    evaluations; with cadence c, a flat curve stops patience * c iterations
    after the best one."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = math.inf
        self.bad_evals = 0

    def update(self, loss: float) -> bool:
        if loss < self.best:
            self.best = loss
            self.bad_evals = 0
        else:
            self.bad_evals += 1
        return self.bad_evals >= self.patience


@dataclass
class TrainResult:
    state_dict: dict  # best-validation weights
    history: list[dict] = field(default_factory=list)  # per-eval loss curve
    stopped_at: int = 0
    best_val_loss: float = math.inf

    def save_history(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.history, fh, indent=2)


def _augment(stacks: torch.Tensor, labels: torch.Tensor, spec: TrainSpec, gen: torch.Generator):
    """Random per-sample rotation, isotropic scaling and translation,
    applied identically to the stack and its label."""
    b = stacks.shape[0]

    def u(lo, hi):
        return torch.rand(b, generator=gen) * (hi - lo) + lo

    angle = u(-spec.rotate_deg, spec.rotate_deg) * math.pi / 180.0
    scale = u(*spec.scale_range)
    tx = u(-spec.translate_frac, spec.translate_frac)
    ty = u(-spec.translate_frac, spec.translate_frac)
    cos, sin = torch.cos(angle) / scale, torch.sin(angle) / scale
    theta = torch.zeros(b, 2, 3)
    theta[:, 0, 0] = cos
    theta[:, 0, 1] = -sin
    theta[:, 0, 2] = tx
    theta[:, 1, 0] = sin
    theta[:, 1, 1] = cos
    theta[:, 1, 2] = ty
    grid = F.affine_grid(theta, list(stacks.shape), align_corners=False)
    warped = F.grid_sample(stacks, grid, align_corners=False, padding_mode="zeros")
    warped_labels = F.grid_sample(labels, grid, align_corners=False, padding_mode="zeros")
    return warped, warped_labels


def _to_tensors(dataset):
    stacks = torch.stack([torch.from_numpy(np.asarray(s, np.float32)) for s, _ in dataset])
    labels = torch.stack(
        [torch.from_numpy(np.asarray(l, np.float32))[None] for _, l in dataset]
    )
    return stacks, labels


def train(
    model: CavityNet,
    dataset: list[tuple[np.ndarray, np.ndarray]],
    spec: TrainSpec | None = None,
    val_dataset: list[tuple[np.ndarray, np.ndarray]] | None = None,
) -> TrainResult:
    """Fit on (3-slice stack, centre-slice label) pairs.

    Stacks are (S, H, W) float arrays already normalized to [0, 1]; labels
    are (H, W) in {0, 1}. Validation defaults to the training set when no
    held-out cases are given (desk-scale overfit runs). Returns the
    best-validation weights and the loss curve; aborts with a diagnostic if
    the loss stops being finite.
    """
    spec = spec if spec is not None else TrainSpec()
    spec.validate()
    if not dataset:
        raise ValueError("training dataset is empty")
    torch.manual_seed(spec.seed)
    gen = torch.Generator().manual_seed(spec.seed + 1)

    stacks, labels = _to_tensors(dataset)
    val_stacks, val_labels = (
        _to_tensors(val_dataset) if val_dataset else (stacks, labels)
    )

    optimizer = torch.optim.Adam(model.parameters(), lr=spec.learning_rate)
    loss_fn = nn.BCELoss()
    stopper = EarlyStopper(spec.patience)
    result = TrainResult(state_dict={})
    n = stacks.shape[0]

    def validation_loss() -> float:
        model.eval()
        with torch.no_grad():
            total = 0.0
            for i in range(0, val_stacks.shape[0], spec.batch_size):
                batch = val_stacks[i : i + spec.batch_size]
                ref = val_labels[i : i + spec.batch_size]
                total += loss_fn(model(batch), ref).item() * batch.shape[0]
        model.train()
        return total / val_stacks.shape[0]

    model.train()
    for it in range(1, spec.max_iters + 1):
        idx = torch.randint(0, n, (min(spec.batch_size, n),), generator=gen)
        batch, ref = stacks[idx], labels[idx]
        if spec.augment:
            batch, ref = _augment(batch, ref, spec, gen)
        optimizer.zero_grad()
        loss = loss_fn(model(batch), ref.clamp(0.0, 1.0))
        if not torch.isfinite(loss):
            raise RuntimeError(f"training diverged: non-finite loss at iteration {it}")
        loss.backward()
        optimizer.step()

        if it % spec.eval_every == 0 or it == spec.max_iters:
            val = validation_loss()
            result.history.append(
                {"iteration": it, "train_loss": float(loss.item()), "val_loss": val}
            )
            if val < result.best_val_loss:
                result.best_val_loss = val
                result.state_dict = copy.deepcopy(model.state_dict())
            if stopper.update(val):
                result.stopped_at = it
                break
    else:
        result.stopped_at = spec.max_iters
    if not result.state_dict:
        result.state_dict = copy.deepcopy(model.state_dict())
    return result
