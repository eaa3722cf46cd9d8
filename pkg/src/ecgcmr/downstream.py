"""Downstream fine-tuning: classification / phenotype regression heads on
the aligned ECG encoder, covariate feature modulation, and Grad-CAM
saliency over the ECG token grid.

The whole encoder is unfrozen for fine-tuning. The LR schedule is linear
warm-up followed by cosine annealing to zero; classification checkpoints
are selected by highest validation AUROC, regression by lowest validation
loss. A from-scratch mode (random encoder init) supports the pretraining
comparison experiments.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .checkpoint import load_checkpoint, save_checkpoint
from .models.vit import EcgViT, EcgVitConfig, N_LEADS
from .seeding import subseed, substream
from .stats import one_vs_rest, roc_auc
from .trainutil import (
    EarlyStopper,
    check_finite,
    epoch_batches,
    set_lr,
    state_to_numpy,
    warmup_cosine_lr,
)

TASK_KINDS = ("binary_classification", "multiclass_classification",
              "regression")


@dataclass
class TaskSpec:
    kind: str = "binary_classification"
    label_field: str = "disease_binary"   # or "disease_class"
    phenotype_indices: tuple = ()
    covariates: tuple = ("sex", "age", "mean_heart_rate")
    train_fraction: float = 1.0
    balance: str = "none"                 # or "downsample"
    n_classes: int = 2

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ValueError(f"unknown task kind {self.kind!r}")
        if not 0.0 < self.train_fraction <= 1.0:
            raise ValueError("train_fraction must lie in (0, 1]")
        if self.kind == "regression" and not self.phenotype_indices:
            raise ValueError("regression tasks need phenotype indices")

    @property
    def n_outputs(self) -> int:
        if self.kind == "binary_classification":
            return 1
        if self.kind == "multiclass_classification":
            return self.n_classes
        return len(self.phenotype_indices)


class FilmModulator(nn.Module):
    """Scale-and-shift conditioning from standardized covariates:
    out = f * (1 + gamma(cov)) + beta(cov). The output layer is
    zero-initialized so modulation starts as the identity."""

    def __init__(self, cov_dim: int, feat_dim: int, hidden: int = 16):
        super().__init__()
        self.net = nn.Sequential(nn.Linear(cov_dim, hidden), nn.GELU(),
                                 nn.Linear(hidden, 2 * feat_dim))
        nn.init.zeros_(self.net[-1].weight)
        nn.init.zeros_(self.net[-1].bias)
        self.feat_dim = feat_dim

    def forward(self, features: torch.Tensor, covariates: torch.Tensor):
        gamma, beta = self.net(covariates).split(self.feat_dim, dim=-1)
        return features * (1.0 + gamma) + beta


def feature_modulation(features: torch.Tensor, covariates: torch.Tensor,
                       film: FilmModulator) -> torch.Tensor:
    """Apply the learned scale-shift conditioning."""
    if covariates.shape[-1] != film.net[0].in_features:
        raise ValueError("missing or extra covariate entries")
    return film(features, covariates)


class DownstreamModel(nn.Module):
    def __init__(self, vit_cfg: EcgVitConfig, task: TaskSpec):
        super().__init__()
        self.task = task
        self.encoder = EcgViT(vit_cfg)
        self.film = FilmModulator(len(task.covariates), vit_cfg.dim)
        self.head = nn.Linear(vit_cfg.dim, task.n_outputs)

    def forward(self, ecg: torch.Tensor, covariates: torch.Tensor):
        feats = self.encoder(ecg)
        return self.head(feature_modulation(feats, covariates, self.film))


@dataclass
class FinetuneConfig:
    max_epochs: int = 40
    warmup_epochs: int = 10
    peak_lr: float = 1e-4
    batch_size: int = 10
    patience: int = 20
    seed: int = 0


def nested_fraction_ids(ids, fraction: float, seed: int) -> list:
    """Prefix of a seeded permutation: smaller fractions are subsets of
    larger ones for the same seed."""
    order = substream(seed, "fraction").permutation(len(ids))
    n_keep = max(1, int(round(fraction * len(ids))))
    return [ids[i] for i in order[:n_keep]]


def _balance_downsample(ids, labels, seed: int) -> list:
    by_class = {}
    for sid, lab in zip(ids, labels):
        by_class.setdefault(int(lab), []).append(sid)
    smallest = min(len(v) for v in by_class.values())
    rng = substream(seed, "balance")
    out = []
    for lab in sorted(by_class):
        members = by_class[lab]
        pick = rng.permutation(len(members))[:smallest]
        out.extend(members[i] for i in pick)
    return sorted(out)


def task_targets(dataset, task: TaskSpec, ids) -> np.ndarray:
    if task.kind == "binary_classification":
        return np.array([dataset.binary_label(s) for s in ids])
    if task.kind == "multiclass_classification":
        return np.array([dataset.label_index(s) for s in ids])
    phen = np.stack([dataset.phenotypes(s) for s in ids])
    return phen[:, list(task.phenotype_indices)]


def _loss_fn(task: TaskSpec, logits: torch.Tensor, targets: torch.Tensor):
    if task.kind == "binary_classification":
        return F.binary_cross_entropy_with_logits(logits.squeeze(-1),
                                                  targets.float())
    if task.kind == "multiclass_classification":
        return F.cross_entropy(logits, targets.long())
    return F.mse_loss(logits, targets.float())


def _metric_mode(task: TaskSpec) -> str:
    return "min" if task.kind == "regression" else "max"


def _val_metric(task: TaskSpec, scores: np.ndarray, targets: np.ndarray):
    """Validation AUROC for classification (0.5 when degenerate), mean
    squared error for regression."""
    if task.kind == "binary_classification":
        try:
            return roc_auc(scores[:, 1], targets)
        except ValueError:
            return 0.5
    if task.kind == "multiclass_classification":
        binary = one_vs_rest(targets.astype(int), task.n_classes)
        aucs = [roc_auc(scores[:, k], binary[k])
                for k in range(task.n_classes)
                if binary[k].sum() not in (0, len(targets))]
        return float(np.mean(aucs)) if aucs else 0.5
    return float(np.mean((scores - targets) ** 2))


def finetune(task: TaskSpec, align_ckpt_path, batch_source, dataset,
             cfg: FinetuneConfig, out_path, scratch: bool = False) -> dict:
    """Fine-tune the ECG encoder (entirely unfrozen) for one task.

    batch_source(ids, mode, epoch) -> (ecg, covariates) float tensors.
    scratch=True ignores the alignment checkpoint and starts from random
    initialization (the unaligned baseline).
    """
    from .alignment import load_align_model

    kind, meta, params = load_checkpoint(align_ckpt_path)
    if kind != "align":
        raise ValueError(f"expected align checkpoint, got {kind!r}")
    align = load_align_model(meta, params)
    vit_cfg = align.cfg.vit()

    torch.manual_seed(subseed(cfg.seed, "finetune-init", task.kind, scratch))
    model = DownstreamModel(vit_cfg, task)
    if not scratch:
        model.encoder.load_state_dict(align.ecg.state_dict())

    train_ids = nested_fraction_ids(dataset.ids("train"), task.train_fraction,
                                    cfg.seed)
    if task.balance == "downsample" and task.kind != "regression":
        labels = task_targets(dataset, task, train_ids)
        train_ids = _balance_downsample(train_ids, labels, cfg.seed)
    val_ids = dataset.ids("val")
    val_targets = task_targets(dataset, task, val_ids)

    opt = torch.optim.Adam(model.parameters(), lr=cfg.peak_lr)
    mode = _metric_mode(task)
    stopper = EarlyStopper(cfg.patience, mode=mode)
    best_state = state_to_numpy(model)
    history = []
    for epoch in range(cfg.max_epochs):
        set_lr(opt, warmup_cosine_lr(epoch, cfg.warmup_epochs,
                                     cfg.max_epochs, cfg.peak_lr))
        model.train()
        for ids in epoch_batches(train_ids, cfg.batch_size, cfg.seed, epoch):
            ecg, cov = batch_source(ids, "train", epoch)
            targets = torch.as_tensor(task_targets(dataset, task, ids))
            loss = _loss_fn(task, model(ecg, cov), targets)
            check_finite(loss, "finetune training")
            opt.zero_grad()
            loss.backward()
            opt.step()
        scores = _predict_ids(model, batch_source, val_ids, cfg.batch_size)
        metric = _val_metric(task, scores, val_targets)
        history.append({"epoch": epoch, "val_metric": metric})
        if stopper.update(metric, epoch):
            best_state = state_to_numpy(model)
        if stopper.should_stop:
            break

    meta_out = {
        "task": asdict(task), "config": asdict(cfg),
        "vit": asdict(vit_cfg), "scratch": scratch,
        "best_val_metric": stopper.best, "best_epoch": stopper.best_epoch,
        "metric_mode": mode, "history": history,
        "align_ref": str(align_ckpt_path),
    }
    save_checkpoint(out_path, "finetune", meta_out, best_state)
    return {"path": str(out_path), "best_val_metric": stopper.best,
            "best_epoch": stopper.best_epoch, "history": history}


def _predict_ids(model, batch_source, ids, batch_size: int) -> np.ndarray:
    outs = []
    model.eval()
    with torch.no_grad():
        for i in range(0, len(ids), batch_size):
            chunk = ids[i:i + batch_size]
            ecg, cov = batch_source(chunk, "eval", 0)
            outs.append(predict_scores(model, ecg, cov))
    return np.concatenate(outs, axis=0)


def predict_scores(model: DownstreamModel, ecg: torch.Tensor,
                   cov: torch.Tensor) -> np.ndarray:
    """Per-class probabilities (columns sum to 1) or regression estimates."""
    model.eval()
    with torch.no_grad():
        logits = model(ecg, cov)
        if model.task.kind == "binary_classification":
            p = torch.sigmoid(logits.squeeze(-1))
            return torch.stack([1.0 - p, p], dim=1).numpy()
        if model.task.kind == "multiclass_classification":
            return torch.softmax(logits, dim=-1).numpy()
        return logits.numpy()


def load_finetuned(path) -> "DownstreamModel":
    from .trainutil import load_numpy_state
    kind, meta, params = load_checkpoint(path)
    if kind != "finetune":
        raise ValueError(f"expected finetune checkpoint, got {kind!r}")
    task = TaskSpec(**{**meta["task"],
                       "phenotype_indices": tuple(meta["task"]["phenotype_indices"]),
                       "covariates": tuple(meta["task"]["covariates"])})
    model = DownstreamModel(EcgVitConfig(**meta["vit"]), task)
    load_numpy_state(model, params)
    return model


# ---------------------------------------------------------------------------
# Grad-CAM
# ---------------------------------------------------------------------------

@dataclass
class Heatmap:
    """Nonnegative saliency over the 12 x L input grid, max-normalized."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2 or self.values.shape[0] != N_LEADS:
            raise ValueError("heatmap must be [12, L]")
        if self.values.min() < 0 or self.values.max() > 1.0 + 1e-9:
            raise ValueError("heatmap values must lie in [0, 1]")


def grad_cam_ecg(model: DownstreamModel, ecg: torch.Tensor,
                 cov: torch.Tensor, target_class: int) -> Heatmap:
    """Saliency from the last transformer block's token activations.

    Channel weights are the token-averaged gradients of the target-class
    logit; the weighted activation map is rectified, reshaped to the
    (lead, time-patch) grid, upsampled along time, and max-normalized.
    An all-zero map is returned as zeros (no division by zero).
    """
    if model.task.kind == "regression":
        raise ValueError("Grad-CAM is defined for classification heads only")
    model.eval()
    captured = {}

    def hook(_module, _inp, out):
        captured["tokens"] = out
        out.retain_grad()

    handle = model.encoder.blocks[-1].register_forward_hook(hook)
    try:
        logits = model(ecg.unsqueeze(0) if ecg.ndim == 2 else ecg,
                       cov.unsqueeze(0) if cov.ndim == 1 else cov)
        if model.task.kind == "binary_classification":
            target = logits[:, 0] if target_class == 1 else -logits[:, 0]
        else:
            target = logits[:, target_class]
        model.zero_grad()
        target.sum().backward()
        tokens = captured["tokens"][:, 1:]          # drop class token
        grads = captured["tokens"].grad[:, 1:]
    finally:
        handle.remove()

    weights = grads.mean(dim=1, keepdim=True)       # [B, 1, D]
    cam = torch.relu((weights * tokens).sum(dim=-1))[0]
    pw = model.encoder.cfg.patch_width
    length = model.encoder.cfg.length
    grid = cam.detach().numpy().reshape(N_LEADS, length // pw)
    full = np.repeat(grid, pw, axis=1)
    peak = full.max()
    if peak > 0:
        full = full / peak
    return Heatmap(values=full)
