"""Contrastive ECG-CMR alignment.

An ECG transformer learns to match the frozen CMR encoders' pooled
embeddings. The loss is the sum of two InfoNCE terms (ECG vs long-axis
and ECG vs short-axis); each InfoNCE averages its two softmax directions.
Only ECG-side parameters and the projection heads are ever updated; the
CMR encoder is referenced by checkpoint hash and must remain bit-identical
through training.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from .checkpoint import load_checkpoint, save_checkpoint
from .models.vit import EcgViT, EcgVitConfig
from .seeding import subseed
from .trainutil import (
    check_finite,
    epoch_batches,
    freeze,
    params_hash,
    set_lr,
    state_to_numpy,
    warmup_constant_lr,
)


def info_nce(a: torch.Tensor, b: torch.Tensor, temperature: float) -> torch.Tensor:
    """Symmetric InfoNCE: 0.5 * [CE over rows + CE over columns] of
    a @ b.T / temperature with diagonal targets. N=1 returns 0 (a single
    positive has no negatives)."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    if a.shape != b.shape:
        raise ValueError("embedding batches must share shape")
    n = a.shape[0]
    if n < 1:
        raise ValueError("empty batch")
    if n == 1:
        return a.new_zeros(())
    logits = a @ b.T / temperature
    targets = torch.arange(n, device=a.device)
    return 0.5 * (F.cross_entropy(logits, targets)
                  + F.cross_entropy(logits.T, targets))


@dataclass
class EmbeddingBatch:
    """Unit-norm projected embeddings for the three modalities."""

    ecg_proj: torch.Tensor
    cmr_la_proj: torch.Tensor
    cmr_sa_proj: torch.Tensor
    temperature: float

    def __post_init__(self):
        if not (self.ecg_proj.shape == self.cmr_la_proj.shape
                == self.cmr_sa_proj.shape):
            raise ValueError("modalities must share batch size and dim")
        for name in ("ecg_proj", "cmr_la_proj", "cmr_sa_proj"):
            norms = getattr(self, name).norm(dim=-1)
            if not torch.allclose(norms, torch.ones_like(norms), atol=1e-5):
                raise ValueError(f"{name} rows are not unit-norm")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")


def align_loss(batch: EmbeddingBatch):
    """Sum of the ECG<->LA and ECG<->SA InfoNCE comparisons."""
    la = info_nce(batch.ecg_proj, batch.cmr_la_proj, batch.temperature)
    sa = info_nce(batch.ecg_proj, batch.cmr_sa_proj, batch.temperature)
    return la + sa, {"ecg_la": float(la), "ecg_sa": float(sa)}


@dataclass
class AlignConfig:
    ecg_length: int = 1000
    patch_width: int = 50
    depth: int = 4
    dim: int = 128
    heads: int = 4
    proj_dim: int = 128
    temperature: float = 0.07

    def vit(self) -> EcgVitConfig:
        return EcgVitConfig(length=self.ecg_length,
                            patch_width=self.patch_width, depth=self.depth,
                            dim=self.dim, heads=self.heads)


class AlignModel(nn.Module):
    """Trainable side of alignment: ECG encoder plus all projections.

    The frozen CMR encoders live outside this module so checkpoints only
    reference them (by hash), never duplicate them.
    """

    def __init__(self, cfg: AlignConfig, cmr_out_dim: int):
        super().__init__()
        self.cfg = cfg
        self.ecg = EcgViT(cfg.vit())
        self.ecg_proj = nn.Linear(cfg.dim, cfg.proj_dim)
        self.proj_la = nn.Linear(cmr_out_dim, cfg.proj_dim)
        self.proj_sa = nn.Linear(cmr_out_dim, cfg.proj_dim)
        self.cmr_out_dim = cmr_out_dim

    def embed_ecg(self, x: torch.Tensor) -> torch.Tensor:
        return F.normalize(self.ecg_proj(self.ecg(x)), dim=-1)

    def embed_cmr(self, pooled: torch.Tensor, view: str) -> torch.Tensor:
        proj = self.proj_la if view == "long_axis" else self.proj_sa
        return F.normalize(proj(pooled), dim=-1)


@dataclass
class AlignTrainConfig:
    epochs: int = 10
    batch_size: int = 8
    peak_lr: float = 1e-4
    warmup_frac: float = 0.1
    seed: int = 0
    model: AlignConfig = field(default_factory=AlignConfig)


def train_alignment(batch_source, train_ids, val_ids, ssl_ckpt_path,
                    cfg: AlignTrainConfig, out_path) -> dict:
    """Train ECG-side parameters against the frozen CMR encoders.

    batch_source(ids, mode, epoch) must return (ecg [B,12,L],
    la [B,T,H,W], sa [B,T,H,W]) float tensors with the mode's transform
    applied. The checkpoint with the lowest validation loss is saved; the
    frozen encoders' hash is verified identical before and after.
    """
    from .ssl import load_ssl_model

    kind, ssl_meta, ssl_params = load_checkpoint(ssl_ckpt_path)
    if kind != "ssl":
        raise ValueError(f"expected an ssl checkpoint, got {kind!r}")
    ssl_model = load_ssl_model(ssl_meta, ssl_params)
    freeze(ssl_model)
    frozen_before = params_hash(ssl_model)

    torch.manual_seed(subseed(cfg.seed, "align-init"))
    model = AlignModel(cfg.model, cmr_out_dim=ssl_model.cfg.swin().out_dim)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.peak_lr)
    warmup = cfg.warmup_frac * cfg.epochs

    best = {"val_loss": float("inf"), "state": None, "epoch": -1}
    curve = []
    for epoch in range(cfg.epochs):
        set_lr(opt, warmup_constant_lr(epoch, warmup, cfg.peak_lr))
        model.train()
        train_loss, n_batches = 0.0, 0
        for ids in epoch_batches(train_ids, cfg.batch_size, cfg.seed, epoch):
            ecg, la, sa = batch_source(ids, "train", epoch)
            loss = _alignment_step_loss(model, ssl_model, ecg, la, sa)
            check_finite(loss, "alignment training")
            opt.zero_grad()
            loss.backward()
            opt.step()
            train_loss += loss.detach().item()
            n_batches += 1
        val_loss = _alignment_val_loss(model, ssl_model, batch_source,
                                       val_ids, cfg)
        curve.append({"epoch": epoch, "train_loss": train_loss / max(n_batches, 1),
                      "val_loss": val_loss})
        if val_loss < best["val_loss"]:
            best = {"val_loss": val_loss, "state": state_to_numpy(model),
                    "epoch": epoch}

    frozen_after = params_hash(ssl_model)
    if frozen_after != frozen_before:
        raise RuntimeError("frozen CMR encoder parameters changed during "
                           "alignment training")
    meta = {
        "config": asdict(cfg), "curve": curve,
        "best_val_loss": best["val_loss"], "best_epoch": best["epoch"],
        "cmr_out_dim": ssl_model.cfg.swin().out_dim,
        "ssl_ref": {"path": str(ssl_ckpt_path), "params_hash": frozen_before},
    }
    save_checkpoint(out_path, "align", meta, best["state"])
    return {"path": str(out_path), "curve": curve,
            "best_val_loss": best["val_loss"], "frozen_hash": frozen_before}


def _alignment_step_loss(model, ssl_model, ecg, la, sa):
    with torch.no_grad():
        pooled_la = ssl_model.encoder("long_axis").pooled(la)
        pooled_sa = ssl_model.encoder("short_axis").pooled(sa)
    batch = EmbeddingBatch(
        ecg_proj=model.embed_ecg(ecg),
        cmr_la_proj=model.embed_cmr(pooled_la, "long_axis"),
        cmr_sa_proj=model.embed_cmr(pooled_sa, "short_axis"),
        temperature=model.cfg.temperature)
    loss, _ = align_loss(batch)
    return loss


def _alignment_val_loss(model, ssl_model, batch_source, val_ids, cfg) -> float:
    model.eval()
    total, count = 0.0, 0
    with torch.no_grad():
        for ids in epoch_batches(val_ids, cfg.batch_size, cfg.seed, 10_000):
            ecg, la, sa = batch_source(ids, "eval", 0)
            total += float(_alignment_step_loss(model, ssl_model, ecg, la, sa))
            count += 1
    return total / max(count, 1)


def load_align_model(meta: dict, params: dict) -> AlignModel:
    from .trainutil import load_numpy_state
    mc = dict(meta["config"]["model"])
    model = AlignModel(AlignConfig(**mc), cmr_out_dim=meta["cmr_out_dim"])
    load_numpy_state(model, params)
    return model


def retrieval_top1(ecg_emb: torch.Tensor, cmr_emb: torch.Tensor) -> float:
    """Fraction of ECG embeddings whose nearest CMR embedding is their pair."""
    sim = ecg_emb @ cmr_emb.T
    hits = (sim.argmax(dim=1) == torch.arange(sim.shape[0])).float()
    return float(hits.mean())
