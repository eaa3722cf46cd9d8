"""Masked self-supervised CMR pretraining.

A hierarchical windowed-attention encoder sees only visible patches; a
small per-patch MLP decoder predicts the pixels of masked patches from the
pooled visible embedding plus a learned position embedding. The loss is
reconstruction (masked positions only, both views) plus a long-axis <->
short-axis contrastive term summed over both softmax directions.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn as nn

from .alignment import info_nce
from .checkpoint import save_checkpoint
from .models.swin import SwinEncoder, SwinStyleConfig
from .seeding import subseed, substream
from .trainutil import (
    check_finite,
    epoch_batches,
    set_lr,
    state_to_numpy,
    warmup_constant_lr,
)


# ---------------------------------------------------------------------------
# mask plans
# ---------------------------------------------------------------------------

@dataclass
class MaskPlan:
    total_patches: int
    masked_indices: np.ndarray
    visible_indices: np.ndarray
    mask_ratio: float

    def __post_init__(self):
        self.masked_indices = np.asarray(self.masked_indices, dtype=np.int64)
        self.visible_indices = np.asarray(self.visible_indices, dtype=np.int64)
        union = np.union1d(self.masked_indices, self.visible_indices)
        if (self.masked_indices.size + self.visible_indices.size
                != self.total_patches or union.size != self.total_patches):
            raise ValueError("masked/visible must partition all patches")
        if self.masked_indices.size == 0 or self.visible_indices.size == 0:
            raise ValueError("mask plan needs both masked and visible patches")


def make_mask_plan(total_patches: int, mask_ratio: float, seed: int) -> MaskPlan:
    """Uniform random subset without replacement;
    |masked| = round(mask_ratio * total)."""
    if not 0.0 < mask_ratio < 1.0:
        raise ValueError("mask_ratio must lie strictly inside (0, 1)")
    n_masked = int(round(mask_ratio * total_patches))
    if n_masked == 0 or n_masked == total_patches:
        raise ValueError(
            f"mask_ratio {mask_ratio} leaves no masked or no visible patches")
    perm = np.random.default_rng(seed).permutation(total_patches)
    return MaskPlan(total_patches=total_patches,
                    masked_indices=np.sort(perm[:n_masked]),
                    visible_indices=np.sort(perm[n_masked:]),
                    mask_ratio=mask_ratio)


def make_unit_mask_plan(grid_size: int, mask_ratio: float, seed: int,
                        unit: int) -> MaskPlan:
    """Sample the mask in unit x unit patch blocks so that hierarchical
    2x2 merges always see fully visible groups. unit=1 is the plain plan."""
    if unit == 1:
        return make_mask_plan(grid_size * grid_size, mask_ratio, seed)
    if grid_size % unit:
        raise ValueError("grid_size must be divisible by the mask unit")
    ug = grid_size // unit
    unit_plan = make_mask_plan(ug * ug, mask_ratio, seed)

    def expand(unit_idx):
        out = []
        for u in unit_idx:
            r, c = u // ug, u % ug
            block_r = np.repeat(np.arange(r * unit, (r + 1) * unit), unit)
            block_c = np.tile(np.arange(c * unit, (c + 1) * unit), unit)
            out.append(block_r * grid_size + block_c)
        return np.sort(np.concatenate(out)) if out else np.array([], dtype=int)

    return MaskPlan(total_patches=grid_size * grid_size,
                    masked_indices=expand(unit_plan.masked_indices),
                    visible_indices=expand(unit_plan.visible_indices),
                    mask_ratio=mask_ratio)


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------

class MaskedPatchDecoder(nn.Module):
    """Two-layer MLP predicting a masked patch's pixels from the pooled
    visible embedding and the patch's learned position embedding."""

    def __init__(self, embed_dim: int, hidden: int, patch_pixels: int,
                 total_patches: int):
        super().__init__()
        self.pool_proj = nn.Linear(embed_dim, hidden)
        self.pos = nn.Parameter(torch.zeros(total_patches, hidden))
        nn.init.trunc_normal_(self.pos, std=0.02)
        self.mlp = nn.Sequential(nn.GELU(), nn.Linear(hidden, hidden),
                                 nn.GELU(), nn.Linear(hidden, patch_pixels))

    def forward(self, pooled: torch.Tensor, masked_idx: torch.Tensor):
        # pooled: [B, D]; masked_idx: [B, K] -> [B, K, patch_pixels]
        h = self.pool_proj(pooled).unsqueeze(1) + self.pos[masked_idx]
        return self.mlp(h)


def reconstruct_masked(embeddings: torch.Tensor, masked_idx: torch.Tensor,
                       decoder: MaskedPatchDecoder) -> torch.Tensor:
    """Predict pixels of masked patches from visible-token embeddings."""
    if masked_idx.numel() == 0:
        return embeddings.new_zeros(embeddings.shape[0], 0, 1)
    return decoder(embeddings.mean(dim=1), masked_idx)


def masked_recon_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean squared error over masked patches only; zero if none."""
    if pred.shape[1] == 0:
        return pred.new_zeros(())
    return ((pred - target) ** 2).mean()


@dataclass
class SslConfig:
    image_size: int = 64
    patch_size: int = 4
    window_size: int = 4
    frames: int = 12
    depths: tuple = (2,)
    dims: tuple = (96,)
    heads: tuple = (4,)
    mask_ratio: float = 0.75
    temperature: float = 0.1
    contrast_weight: float = 1.0
    proj_dim: int = 64
    decoder_hidden: int = 128
    share_weights: bool = False

    def swin(self) -> SwinStyleConfig:
        return SwinStyleConfig(
            image_size=self.image_size, patch_size=self.patch_size,
            window_size=self.window_size, in_channels=self.frames,
            depths=tuple(self.depths), dims=tuple(self.dims),
            heads=tuple(self.heads))


class SslModel(nn.Module):
    """LA and SA encoders (shared weights optional), per-view decoders and
    contrastive projection heads."""

    def __init__(self, cfg: SslConfig):
        super().__init__()
        self.cfg = cfg
        swin_cfg = cfg.swin()
        self.encoder_la = SwinEncoder(swin_cfg)
        self.encoder_sa = (self.encoder_la if cfg.share_weights
                           else SwinEncoder(swin_cfg))
        pp = cfg.frames * cfg.patch_size ** 2
        self.decoder_la = MaskedPatchDecoder(swin_cfg.out_dim,
                                             cfg.decoder_hidden, pp,
                                             swin_cfg.total_patches)
        self.decoder_sa = MaskedPatchDecoder(swin_cfg.out_dim,
                                             cfg.decoder_hidden, pp,
                                             swin_cfg.total_patches)
        self.proj_la = nn.Linear(swin_cfg.out_dim, cfg.proj_dim)
        self.proj_sa = nn.Linear(swin_cfg.out_dim, cfg.proj_dim)

    def encoder(self, view: str) -> SwinEncoder:
        return self.encoder_la if view == "long_axis" else self.encoder_sa


def _stack_plans(plans) -> tuple:
    vis = torch.as_tensor(np.stack([p.visible_indices for p in plans]))
    masked = torch.as_tensor(np.stack([p.masked_indices for p in plans]))
    return vis, masked


def _view_losses(model: SslModel, clips: torch.Tensor, view: str, plans):
    encoder = model.encoder(view)
    decoder = model.decoder_la if view == "long_axis" else model.decoder_sa
    proj = model.proj_la if view == "long_axis" else model.proj_sa
    vis_idx, masked_idx = _stack_plans(plans)
    tokens, _, _ = encoder.encode_visible(clips, vis_idx)
    pred = reconstruct_masked(tokens, masked_idx, decoder)
    patches = encoder.patchify(clips)
    bidx = torch.arange(clips.shape[0]).unsqueeze(1)
    target = patches[bidx, masked_idx]
    recon = masked_recon_loss(pred, target)
    pooled = tokens.mean(dim=1)
    z = torch.nn.functional.normalize(proj(pooled), dim=-1)
    return recon, z


def ssl_loss(la_batch: torch.Tensor, sa_batch: torch.Tensor, model: SslModel,
             seed: int = 0):
    """recon_la + recon_sa + weight * (both-direction LA<->SA InfoNCE).

    The contrastive term sums the two cross-entropy directions (one
    comparison per direction); a batch of one pair contributes zero.
    Returns (total, components dict).
    """
    if la_batch.shape[0] != sa_batch.shape[0]:
        raise ValueError("LA and SA batches must pair by subject")
    cfg = model.cfg
    grid = cfg.swin().grid_size
    unit = cfg.swin().mask_unit
    n = la_batch.shape[0]
    plans_la = [make_unit_mask_plan(grid, cfg.mask_ratio,
                                    subseed(seed, "la", i), unit)
                for i in range(n)]
    plans_sa = [make_unit_mask_plan(grid, cfg.mask_ratio,
                                    subseed(seed, "sa", i), unit)
                for i in range(n)]
    recon_la, z_la = _view_losses(model, la_batch, "long_axis", plans_la)
    recon_sa, z_sa = _view_losses(model, sa_batch, "short_axis", plans_sa)
    # info_nce averages the two directions; the SSL term uses their sum
    contrast = 2.0 * info_nce(z_la, z_sa, cfg.temperature)
    total = recon_la + recon_sa + cfg.contrast_weight * contrast
    return total, {"recon_la": recon_la.detach().item(),
                   "recon_sa": recon_sa.detach().item(),
                   "contrast": contrast.detach().item()}


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class SslTrainConfig:
    epochs: int = 8
    batch_size: int = 32
    peak_lr: float = 1e-4
    warmup_frac: float = 0.1
    seed: int = 0
    model: SslConfig = field(default_factory=SslConfig)


def _load_clip_batch(loader, ids, view: str) -> torch.Tensor:
    return torch.stack([torch.as_tensor(loader(sid, view), dtype=torch.float32)
                        for sid in ids])


def train_ssl(clip_loader, train_ids, val_ids, cfg: SslTrainConfig,
              out_path) -> dict:
    """Train the masked SSL model; saves the final-epoch checkpoint.

    clip_loader(sid, view) must return a normalized [T, H, W] array.
    Returns {"path", "curve", "val_loss"}.
    """
    torch.manual_seed(subseed(cfg.seed, "ssl-init"))
    model = SslModel(cfg.model)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.peak_lr)
    warmup = cfg.warmup_frac * cfg.epochs
    curve = []
    for epoch in range(cfg.epochs):
        set_lr(opt, warmup_constant_lr(epoch, warmup, cfg.peak_lr))
        model.train()
        epoch_loss, n_batches = 0.0, 0
        for step, batch_ids in enumerate(
                epoch_batches(train_ids, cfg.batch_size, cfg.seed, epoch)):
            la = _load_clip_batch(clip_loader, batch_ids, "long_axis")
            sa = _load_clip_batch(clip_loader, batch_ids, "short_axis")
            loss, _ = ssl_loss(la, sa, model,
                               seed=subseed(cfg.seed, "plan", epoch, step))
            check_finite(loss, "ssl training")
            opt.zero_grad()
            loss.backward()
            opt.step()
            epoch_loss += loss.detach().item()
            n_batches += 1
        val = _ssl_val_loss(model, clip_loader, val_ids, cfg)
        curve.append({"epoch": epoch, "train_loss": epoch_loss / max(n_batches, 1),
                      "val_loss": val})
    meta = {"config": asdict(cfg), "curve": curve,
            "val_loss": curve[-1]["val_loss"] if curve else None}
    save_checkpoint(out_path, "ssl", meta, state_to_numpy(model))
    return {"path": str(out_path), "curve": curve,
            "val_loss": meta["val_loss"]}


def _ssl_val_loss(model: SslModel, clip_loader, val_ids,
                  cfg: SslTrainConfig) -> float:
    model.eval()
    total, count = 0.0, 0
    with torch.no_grad():
        for step, ids in enumerate(epoch_batches(val_ids, cfg.batch_size,
                                                 cfg.seed, 10_000)):
            la = _load_clip_batch(clip_loader, ids, "long_axis")
            sa = _load_clip_batch(clip_loader, ids, "short_axis")
            loss, _ = ssl_loss(la, sa, model,
                               seed=subseed(cfg.seed, "val-plan", step))
            total += float(loss)
            count += 1
    return total / max(count, 1)


def load_ssl_model(meta: dict, params: dict) -> SslModel:
    from .trainutil import load_numpy_state
    model_cfg = meta["config"]["model"]
    model_cfg = SslConfig(**{**model_cfg,
                             "depths": tuple(model_cfg["depths"]),
                             "dims": tuple(model_cfg["dims"]),
                             "heads": tuple(model_cfg["heads"])})
    model = SslModel(model_cfg)
    load_numpy_state(model, params)
    return model
