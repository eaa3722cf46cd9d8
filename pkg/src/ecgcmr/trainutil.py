"""Shared training helpers: seeded batch order, LR schedules, parameter
hashing, and early stopping.

Training loops iterate over seeded shuffles so batch order is a pure
function of (seed, epoch); freeze contracts are checked bit-for-bit via
parameter hashes.
"""

from __future__ import annotations

import hashlib
import math

import numpy as np
import torch

from .seeding import substream


class NumericError(RuntimeError):
    """Raised when a training loss becomes non-finite."""


def epoch_batches(ids, batch_size: int, seed: int, epoch: int):
    """Deterministic shuffled batches for one epoch."""
    order = substream(seed, "batches", epoch).permutation(len(ids))
    shuffled = [ids[i] for i in order]
    for i in range(0, len(shuffled), batch_size):
        yield shuffled[i:i + batch_size]


def warmup_constant_lr(epoch: float, warmup_epochs: float, peak: float) -> float:
    """Linear warm-up from 0 to peak, then constant."""
    if warmup_epochs > 0 and epoch < warmup_epochs:
        return peak * epoch / warmup_epochs
    return peak


def warmup_cosine_lr(epoch: float, warmup_epochs: float, total_epochs: float,
                     peak: float) -> float:
    """Linear warm-up to peak at `warmup_epochs`, cosine annealing to 0 at
    `total_epochs`."""
    if warmup_epochs > 0 and epoch < warmup_epochs:
        return peak * epoch / warmup_epochs
    if total_epochs <= warmup_epochs:
        return peak
    frac = (epoch - warmup_epochs) / (total_epochs - warmup_epochs)
    return peak * 0.5 * (1.0 + math.cos(math.pi * min(frac, 1.0)))


def set_lr(optimizer: torch.optim.Optimizer, lr: float):
    for group in optimizer.param_groups:
        group["lr"] = lr


def state_to_numpy(module: torch.nn.Module) -> dict:
    """State dict as float32/native numpy arrays keyed by parameter name."""
    return {k: v.detach().cpu().numpy().copy()
            for k, v in module.state_dict().items()}


def load_numpy_state(module: torch.nn.Module, params: dict):
    """Load named arrays into a module, refusing shape mismatches with a
    named diff."""
    state = module.state_dict()
    missing = sorted(set(state) - set(params))
    unexpected = sorted(set(params) - set(state))
    mismatched = [
        f"{k}: checkpoint {tuple(np.shape(params[k]))} vs model {tuple(state[k].shape)}"
        for k in state if k in params
        and tuple(np.shape(params[k])) != tuple(state[k].shape)
    ]
    if missing or unexpected or mismatched:
        lines = []
        if mismatched:
            lines.append("shape mismatches: " + "; ".join(mismatched))
        if missing:
            lines.append("missing from checkpoint: " + ", ".join(missing))
        if unexpected:
            lines.append("not in model: " + ", ".join(unexpected))
        raise ValueError("parameter container does not fit model -- "
                         + " | ".join(lines))
    module.load_state_dict({
        k: torch.as_tensor(v, dtype=state[k].dtype) for k, v in params.items()
    })
    return module


def params_hash(module: torch.nn.Module) -> str:
    """SHA-256 over the module's parameters and buffers, sorted by name."""
    digest = hashlib.sha256()
    state = module.state_dict()
    for name in sorted(state):
        digest.update(name.encode())
        digest.update(state[name].detach().cpu().numpy().tobytes())
    return digest.hexdigest()


def freeze(module: torch.nn.Module) -> torch.nn.Module:
    for p in module.parameters():
        p.requires_grad_(False)
    module.eval()
    return module


def check_finite(loss: torch.Tensor, context: str):
    if not torch.isfinite(loss):
        raise NumericError(f"non-finite loss in {context}: {loss.item()}")


class EarlyStopper:
    """Tracks a validation metric; `should_stop` after `patience` epochs
    without improvement. mode='max' for AUROC, 'min' for loss."""

    def __init__(self, patience: int, mode: str = "max"):
        self.patience = patience
        self.mode = mode
        self.best = -math.inf if mode == "max" else math.inf
        self.best_epoch = -1
        self.stale = 0

    def update(self, value: float, epoch: int) -> bool:
        improved = (value > self.best) if self.mode == "max" else (value < self.best)
        if improved:
            self.best = value
            self.best_epoch = epoch
            self.stale = 0
        else:
            self.stale += 1
        return improved

    @property
    def should_stop(self) -> bool:
        return self.stale > self.patience
