"""ECG transformer encoder.

The 12-lead record is treated as a one-channel 12 x L image and split into
(1, patch_width) patches, lead-major then time, giving
12 * (L / patch_width) tokens. A class token pools the global embedding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

N_LEADS = 12


def ecg_patchify(samples: np.ndarray, patch_shape=(1, 100)) -> np.ndarray:
    """Tokenize [leads, L] row-major (lead-major, then time).

    Patch height must be 1; returns [n_tokens, patch_width].
    """
    ph, pw = patch_shape
    if ph != 1:
        raise ValueError("lead-axis patch height must be 1")
    samples = np.asarray(samples)
    leads, length = samples.shape
    if length % pw:
        raise ValueError(f"record length {length} not divisible by patch "
                         f"width {pw}")
    return samples.reshape(leads * (length // pw), pw)


@dataclass
class EcgVitConfig:
    length: int = 1000
    patch_width: int = 50
    depth: int = 4
    dim: int = 128
    heads: int = 4
    mlp_ratio: float = 4.0

    def __post_init__(self):
        if self.length % self.patch_width:
            raise ValueError("length must be divisible by patch_width")
        if self.dim % self.heads:
            raise ValueError("dim must be divisible by heads")

    @property
    def n_tokens(self) -> int:
        return N_LEADS * (self.length // self.patch_width)


class SelfAttention(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.scale = (dim // heads) ** -0.5
        self.qkv = nn.Linear(dim, dim * 3)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x):
        b, n, c = x.shape
        qkv = self.qkv(x).reshape(b, n, 3, self.heads, c // self.heads)
        q, k, v = qkv.permute(2, 0, 3, 1, 4)
        attn = ((q @ k.transpose(-2, -1)) * self.scale).softmax(dim=-1)
        return self.proj((attn @ v).transpose(1, 2).reshape(b, n, c))


class TransformerBlock(nn.Module):
    def __init__(self, dim: int, heads: int, mlp_ratio: float):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = SelfAttention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        hidden = int(dim * mlp_ratio)
        self.mlp = nn.Sequential(nn.Linear(dim, hidden), nn.GELU(),
                                 nn.Linear(hidden, dim))

    def forward(self, x):
        x = x + self.attn(self.norm1(x))
        return x + self.mlp(self.norm2(x))


class EcgViT(nn.Module):
    def __init__(self, cfg: EcgVitConfig):
        super().__init__()
        self.cfg = cfg
        self.embed = nn.Linear(cfg.patch_width, cfg.dim)
        self.cls = nn.Parameter(torch.zeros(1, 1, cfg.dim))
        self.pos = nn.Parameter(torch.zeros(1, cfg.n_tokens + 1, cfg.dim))
        nn.init.trunc_normal_(self.pos, std=0.02)
        nn.init.trunc_normal_(self.cls, std=0.02)
        self.blocks = nn.ModuleList([
            TransformerBlock(cfg.dim, cfg.heads, cfg.mlp_ratio)
            for _ in range(cfg.depth)
        ])
        self.norm = nn.LayerNorm(cfg.dim)

    def tokens(self, x: torch.Tensor) -> torch.Tensor:
        """[B, 12, L] -> [B, 1 + n_tokens, dim] after all blocks + norm."""
        b = x.shape[0]
        pw = self.cfg.patch_width
        patches = x.reshape(b, N_LEADS, x.shape[2] // pw, pw)
        patches = patches.reshape(b, -1, pw)
        seq = torch.cat([self.cls.expand(b, -1, -1), self.embed(patches)],
                        dim=1)
        seq = seq + self.pos
        for block in self.blocks:
            seq = block(seq)
        return self.norm(seq)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """Class-token embedding, [B, dim]."""
        return self.tokens(x)[:, 0]
