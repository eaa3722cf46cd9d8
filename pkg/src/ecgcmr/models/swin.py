"""Hierarchical windowed-attention encoder with a sparse visible-token path.

Two forward routes share all weights:

* ``forward_dense``  -- the standard route (roll, partition into windows,
  attend, merge 2x2 neighborhoods between stages) used at inference and
  alignment time.
* ``encode_visible`` -- masked-pretraining route: only visible patches are
  embedded and flow through attention. Tokens are bucketed by window id
  (windows may be partially occupied), attention is computed inside each
  bucket with padding masks, and shifted blocks add the usual band labels
  that stop tokens from attending across rolled boundaries.

For hierarchical configs the mask must be sampled in units of
2^(n_merges) patches per side so that every 2x2 merge group is either
fully visible or fully masked.

Positional information uses a learned absolute embedding per patch (no
relative position bias), which keeps single-window attention exactly
equal to unmasked full attention.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn as nn

NEG = -1e4  # additive mask value; exp underflows to 0 in float32 and float64


@dataclass
class SwinStyleConfig:
    image_size: int = 64
    patch_size: int = 4
    window_size: int = 4
    in_channels: int = 12          # clip frames enter as channels
    depths: tuple = (2,)
    dims: tuple = (96,)
    heads: tuple = (4,)
    mlp_ratio: float = 4.0

    def __post_init__(self):
        if self.image_size % self.patch_size:
            raise ValueError("image_size must be divisible by patch_size")
        if not (len(self.depths) == len(self.dims) == len(self.heads)):
            raise ValueError("depths/dims/heads must have equal length")
        for d, h in zip(self.dims, self.heads):
            if d % h:
                raise ValueError(f"dim {d} not divisible by heads {h}")
        grid = self.grid_size
        for _ in range(len(self.depths) - 1):
            if grid % 2:
                raise ValueError("patch grid must stay even across merges")
            grid //= 2

    @property
    def grid_size(self) -> int:
        return self.image_size // self.patch_size

    @property
    def total_patches(self) -> int:
        return self.grid_size ** 2

    @property
    def mask_unit(self) -> int:
        """Mask sampling unit (patches per side) keeping merges aligned."""
        return 2 ** (len(self.depths) - 1)

    @property
    def out_dim(self) -> int:
        return self.dims[-1]


class WindowAttention(nn.Module):
    """Multi-head attention over a padded bucket of tokens."""

    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.scale = (dim // heads) ** -0.5
        self.qkv = nn.Linear(dim, dim * 3)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor, allowed: torch.Tensor | None = None):
        # x: [G, M, C]; allowed: [G, M, M] bool, True where attention may flow
        g, m, c = x.shape
        qkv = self.qkv(x).reshape(g, m, 3, self.heads, c // self.heads)
        q, k, v = qkv.permute(2, 0, 3, 1, 4)
        attn = (q @ k.transpose(-2, -1)) * self.scale
        if allowed is not None:
            attn = attn.masked_fill(~allowed.unsqueeze(1), NEG)
        attn = attn.softmax(dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(g, m, c)
        return self.proj(out)


class SwinBlock(nn.Module):
    def __init__(self, dim: int, heads: int, window: int, shift: int,
                 mlp_ratio: float):
        super().__init__()
        self.window = window
        self.shift = shift
        self.norm1 = nn.LayerNorm(dim)
        self.attn = WindowAttention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        hidden = int(dim * mlp_ratio)
        self.mlp = nn.Sequential(nn.Linear(dim, hidden), nn.GELU(),
                                 nn.Linear(hidden, dim))


def _bands(coord: torch.Tensor, size: int, window: int, shift: int):
    """Swin boundary bands in rolled coordinates: [0, size-window),
    [size-window, size-shift), [size-shift, size)."""
    b = torch.zeros_like(coord)
    b = torch.where(coord >= size - window, torch.ones_like(b), b)
    b = torch.where(coord >= size - shift, torch.full_like(b, 2), b)
    return b


def _window_ids(rows, cols, hp, wp, window, shift):
    """(window id, band label) per token from original grid coordinates."""
    if shift:
        r2 = (rows - shift) % hp
        c2 = (cols - shift) % wp
    else:
        r2, c2 = rows, cols
    per_row = (wp + window - 1) // window
    win = (r2 // window) * per_row + (c2 // window)
    if shift:
        label = _bands(r2, hp, window, shift) * 3 + _bands(c2, wp, window, shift)
    else:
        label = torch.zeros_like(win)
    return win, label


def _bucketed_attention(attn: WindowAttention, x, win, label):
    """Group tokens by (sample, window id), pad, attend, scatter back."""
    bsz, n, c = x.shape
    n_win = int(win.max().item()) + 1
    g = (torch.arange(bsz, device=x.device).unsqueeze(1) * n_win + win).reshape(-1)
    order = torch.argsort(g, stable=True)
    counts = torch.unique_consecutive(g[order], return_counts=True)[1]
    n_groups = counts.numel()
    width = int(counts.max().item())
    offsets = torch.cumsum(counts, 0) - counts
    pos = torch.arange(g.numel(), device=x.device) - offsets.repeat_interleave(counts)
    grp = torch.arange(n_groups, device=x.device).repeat_interleave(counts)

    flat = x.reshape(-1, c)[order]
    padded = x.new_zeros(n_groups, width, c)
    padded[grp, pos] = flat
    real = torch.zeros(n_groups, width, dtype=torch.bool, device=x.device)
    real[grp, pos] = True
    lab = torch.zeros(n_groups, width, dtype=torch.long, device=x.device)
    lab[grp, pos] = label.reshape(-1)[order]
    allowed = (real.unsqueeze(1) & real.unsqueeze(2)
               & (lab.unsqueeze(1) == lab.unsqueeze(2)))

    y = attn(padded, allowed)[grp, pos]
    out = torch.empty_like(flat)
    out[order] = y
    return out.reshape(bsz, n, c)


def _block_sparse(block: SwinBlock, x, rows, cols, hp, wp):
    shift = block.shift if min(hp, wp) > block.window else 0
    win, label = _window_ids(rows, cols, hp, wp, block.window, shift)
    x = x + _bucketed_attention(block.attn, block.norm1(x), win, label)
    return x + block.mlp(block.norm2(x))


class PatchMerge(nn.Module):
    def __init__(self, dim_in: int, dim_out: int):
        super().__init__()
        self.norm = nn.LayerNorm(4 * dim_in)
        self.reduce = nn.Linear(4 * dim_in, dim_out)


def _merge_sparse(merge: PatchMerge, x, rows, cols, hp, wp):
    """2x2 neighborhood merge on sparse tokens (children must be present)."""
    bsz, n, c = x.shape
    tok = torch.arange(n, device=x.device).unsqueeze(0).expand(bsz, n)
    posmap = torch.full((bsz, hp * wp), -1, dtype=torch.long, device=x.device)
    posmap.scatter_(1, rows * wp + cols, tok)
    anchor = (rows % 2 == 0) & (cols % 2 == 0)
    per_sample = anchor.sum(dim=1)
    if not bool((per_sample == per_sample[0]).all()) or int(per_sample[0]) * 4 != n:
        raise ValueError("mask plan is not aligned to 2x2 merge units")
    a = int(per_sample[0])
    a_rows = rows[anchor].reshape(bsz, a)
    a_cols = cols[anchor].reshape(bsz, a)
    bidx = torch.arange(bsz, device=x.device).unsqueeze(1).expand(bsz, a)

    def child(dr, dc):
        t = torch.gather(posmap, 1, (a_rows + dr) * wp + (a_cols + dc))
        if bool((t < 0).any()):
            raise ValueError("mask plan is not aligned to 2x2 merge units")
        return x[bidx, t]

    merged = torch.cat([child(0, 0), child(0, 1), child(1, 0), child(1, 1)],
                       dim=-1)
    return merge.reduce(merge.norm(merged)), a_rows // 2, a_cols // 2


class SwinEncoder(nn.Module):
    def __init__(self, cfg: SwinStyleConfig):
        super().__init__()
        self.cfg = cfg
        p = cfg.patch_size
        self.embed = nn.Linear(cfg.in_channels * p * p, cfg.dims[0])
        self.pos = nn.Parameter(torch.zeros(cfg.total_patches, cfg.dims[0]))
        nn.init.trunc_normal_(self.pos, std=0.02)

        self.stages = nn.ModuleList()
        self.merges = nn.ModuleList()
        for s, depth in enumerate(cfg.depths):
            blocks = nn.ModuleList()
            for i in range(depth):
                shift = 0 if i % 2 == 0 else cfg.window_size // 2
                blocks.append(SwinBlock(cfg.dims[s], cfg.heads[s],
                                        cfg.window_size, shift, cfg.mlp_ratio))
            self.stages.append(blocks)
            if s + 1 < len(cfg.depths):
                self.merges.append(PatchMerge(cfg.dims[s], cfg.dims[s + 1]))
        self.norm = nn.LayerNorm(cfg.out_dim)

    # -- shared pieces ----------------------------------------------------
    def patchify(self, x: torch.Tensor) -> torch.Tensor:
        """[B, C, H, W] -> [B, n_patches, C*p*p], row-major patch order."""
        b, c, h, w = x.shape
        p = self.cfg.patch_size
        gh, gw = h // p, w // p
        x = x.reshape(b, c, gh, p, gw, p).permute(0, 2, 4, 1, 3, 5)
        return x.reshape(b, gh * gw, c * p * p)

    # -- sparse route -----------------------------------------------------
    def encode_visible(self, x: torch.Tensor, visible_idx: torch.Tensor):
        """Embed and encode only the listed patches.

        x: [B, C, H, W]; visible_idx: [B, M] patch indices (row-major).
        Returns (normed tokens [B, M', C_out], rows, cols) at the final
        stage resolution.
        """
        bsz = x.shape[0]
        gw = self.cfg.grid_size
        patches = self.patchify(x)
        bidx = torch.arange(bsz, device=x.device).unsqueeze(1)
        tokens = self.embed(patches[bidx, visible_idx])
        tokens = tokens + self.pos[visible_idx]
        rows = torch.div(visible_idx, gw, rounding_mode="floor")
        cols = visible_idx % gw
        hp = wp = gw
        for s, blocks in enumerate(self.stages):
            for block in blocks:
                tokens = _block_sparse(block, tokens, rows, cols, hp, wp)
            if s < len(self.merges):
                tokens, rows, cols = _merge_sparse(self.merges[s], tokens,
                                                   rows, cols, hp, wp)
                hp, wp = hp // 2, wp // 2
        return self.norm(tokens), rows, cols

    # -- dense route --------------------------------------------------------
    def _dense_block(self, block: SwinBlock, grid: torch.Tensor):
        bsz, hp, wp, c = grid.shape
        w = block.window
        shift = block.shift if min(hp, wp) > w else 0
        x = block.norm1(grid)
        if shift:
            x = torch.roll(x, (-shift, -shift), dims=(1, 2))
        xw = (x.reshape(bsz, hp // w, w, wp // w, w, c)
               .permute(0, 1, 3, 2, 4, 5).reshape(-1, w * w, c))
        allowed = None
        if shift:
            rr = torch.arange(hp, device=grid.device)
            cc = torch.arange(wp, device=grid.device)
            lab = (_bands((rr - 0) % hp, hp, w, shift)[:, None] * 3
                   + _bands((cc - 0) % wp, wp, w, shift)[None, :])
            labw = (lab.reshape(hp // w, w, wp // w, w)
                       .permute(0, 2, 1, 3).reshape(-1, w * w))
            allowed = (labw.unsqueeze(1) == labw.unsqueeze(2)).repeat(bsz, 1, 1)
        y = block.attn(xw, allowed)
        y = (y.reshape(bsz, hp // w, wp // w, w, w, c)
              .permute(0, 1, 3, 2, 4, 5).reshape(bsz, hp, wp, c))
        if shift:
            y = torch.roll(y, (shift, shift), dims=(1, 2))
        grid = grid + y
        return grid + block.mlp(block.norm2(grid))

    def forward_dense(self, x: torch.Tensor) -> torch.Tensor:
        """Standard full-grid forward; [B, C, H, W] -> [B, N_final, C_out].

        Grids that do not divide by the window size fall back to the
        bucketed sparse route with all patches visible (same math).
        """
        gw = self.cfg.grid_size
        grid_ok = all((gw // 2 ** s) % self.cfg.window_size == 0
                      or (gw // 2 ** s) <= self.cfg.window_size
                      for s in range(len(self.cfg.depths)))
        if not grid_ok:
            full = torch.arange(self.cfg.total_patches, device=x.device)
            tokens, _, _ = self.encode_visible(
                x, full.unsqueeze(0).expand(x.shape[0], -1))
            return tokens
        bsz = x.shape[0]
        tokens = self.embed(self.patchify(x)) + self.pos
        grid = tokens.reshape(bsz, gw, gw, -1)
        for s, blocks in enumerate(self.stages):
            for block in blocks:
                grid = self._dense_block(block, grid)
            if s < len(self.merges):
                m = self.merges[s]
                merged = torch.cat([grid[:, 0::2, 0::2], grid[:, 0::2, 1::2],
                                    grid[:, 1::2, 0::2], grid[:, 1::2, 1::2]],
                                   dim=-1)
                grid = m.reduce(m.norm(merged))
        bsz, hf, wf, c = grid.shape
        return self.norm(grid.reshape(bsz, hf * wf, c))

    def pooled(self, x: torch.Tensor) -> torch.Tensor:
        """Global average over final-stage tokens of the dense route."""
        return self.forward_dense(x).mean(dim=1)
