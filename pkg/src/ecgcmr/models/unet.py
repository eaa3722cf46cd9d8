"""Noise-prediction U-Net conditioned on ECG tokens.

Structure: initial projection block, down-sampling blocks, spatiotemporal
blocks (cross-attention on the condition tokens plus attention across the
frame axis), and up-sampling blocks with skip connections. Output shape
always equals the input latent shape (noise prediction).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn


@dataclass
class UNetConfig:
    latent_channels: int = 4
    base_channels: int = 32
    channel_mults: tuple = (1, 2)
    cond_dim: int = 128            # width of incoming condition tokens
    attn_dim: int = 32
    heads: int = 4
    time_dim: int = 64


def timestep_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Sinusoidal embedding of (possibly fractional) step indices."""
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0)
                      * torch.arange(half, dtype=t.dtype, device=t.device) / half)
    args = t[:, None] * freqs[None, :]
    return torch.cat([torch.cos(args), torch.sin(args)], dim=-1)


class ResBlock(nn.Module):
    def __init__(self, ch_in: int, ch_out: int, time_dim: int):
        super().__init__()
        groups = math.gcd(8, ch_in)
        self.norm1 = nn.GroupNorm(groups, ch_in)
        self.conv1 = nn.Conv2d(ch_in, ch_out, 3, padding=1)
        self.time_proj = nn.Linear(time_dim, ch_out)
        self.norm2 = nn.GroupNorm(math.gcd(8, ch_out), ch_out)
        self.conv2 = nn.Conv2d(ch_out, ch_out, 3, padding=1)
        self.skip = (nn.Conv2d(ch_in, ch_out, 1) if ch_in != ch_out
                     else nn.Identity())
        self.act = nn.SiLU()

    def forward(self, x, temb):
        # x: [BT, C, h, w]; temb: [BT, time_dim]
        h = self.conv1(self.act(self.norm1(x)))
        h = h + self.time_proj(temb)[:, :, None, None]
        h = self.conv2(self.act(self.norm2(h)))
        return h + self.skip(x)


class CrossAttention(nn.Module):
    """Spatial tokens attend to condition tokens (per frame)."""

    def __init__(self, channels: int, cond_dim: int, attn_dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.scale = (attn_dim // heads) ** -0.5
        self.norm = nn.GroupNorm(math.gcd(8, channels), channels)
        self.to_q = nn.Linear(channels, attn_dim)
        self.to_k = nn.Linear(cond_dim, attn_dim)
        self.to_v = nn.Linear(cond_dim, attn_dim)
        self.to_out = nn.Linear(attn_dim, channels)

    def forward(self, x, cond, frames_per_item: int):
        # x: [B*T, C, h, w]; cond: [B, S, cond_dim]
        bt, c, h, w = x.shape
        q_in = self.norm(x).reshape(bt, c, h * w).transpose(1, 2)
        q = self.to_q(q_in)
        cond_rep = cond.repeat_interleave(frames_per_item, dim=0)
        k, v = self.to_k(cond_rep), self.to_v(cond_rep)

        def split(z):
            return z.reshape(z.shape[0], z.shape[1], self.heads, -1).transpose(1, 2)

        attn = (split(q) @ split(k).transpose(-2, -1)) * self.scale
        out = (attn.softmax(dim=-1) @ split(v)).transpose(1, 2)
        out = self.to_out(out.reshape(bt, h * w, -1))
        return x + out.transpose(1, 2).reshape(bt, c, h, w)


class TemporalAttention(nn.Module):
    """Self-attention across the frame axis at each spatial location."""

    def __init__(self, channels: int, heads: int):
        super().__init__()
        self.heads = heads
        self.scale = (channels // heads) ** -0.5
        self.norm = nn.GroupNorm(math.gcd(8, channels), channels)
        self.qkv = nn.Linear(channels, channels * 3)
        self.proj = nn.Linear(channels, channels)

    def forward(self, x, frames_per_item: int):
        bt, c, h, w = x.shape
        t = frames_per_item
        b = bt // t
        seq = (self.norm(x).reshape(b, t, c, h * w)
               .permute(0, 3, 1, 2).reshape(b * h * w, t, c))
        qkv = self.qkv(seq).reshape(b * h * w, t, 3, self.heads, c // self.heads)
        q, k, v = qkv.permute(2, 0, 3, 1, 4)
        attn = ((q @ k.transpose(-2, -1)) * self.scale).softmax(dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b * h * w, t, c)
        out = self.proj(out)
        out = (out.reshape(b, h * w, t, c).permute(0, 2, 3, 1)
               .reshape(bt, c, h, w))
        return x + out


class SpatioTemporalBlock(nn.Module):
    def __init__(self, channels: int, cfg: UNetConfig):
        super().__init__()
        self.cross = CrossAttention(channels, cfg.cond_dim, cfg.attn_dim,
                                    cfg.heads)
        self.temporal = TemporalAttention(channels, cfg.heads)

    def forward(self, x, cond, frames_per_item):
        x = self.cross(x, cond, frames_per_item)
        return self.temporal(x, frames_per_item)


class CondUNet(nn.Module):
    def __init__(self, cfg: UNetConfig):
        super().__init__()
        self.cfg = cfg
        base = cfg.base_channels
        widths = [base * m for m in cfg.channel_mults]

        self.time_mlp = nn.Sequential(
            nn.Linear(cfg.time_dim, cfg.time_dim * 2), nn.SiLU(),
            nn.Linear(cfg.time_dim * 2, cfg.time_dim))
        self.init_conv = nn.Conv2d(cfg.latent_channels, widths[0], 3, padding=1)

        self.down_res = nn.ModuleList()
        self.down_attn = nn.ModuleList()
        self.downsamplers = nn.ModuleList()
        ch = widths[0]
        for i, w in enumerate(widths):
            self.down_res.append(ResBlock(ch, w, cfg.time_dim))
            self.down_attn.append(SpatioTemporalBlock(w, cfg))
            ch = w
            if i + 1 < len(widths):
                self.downsamplers.append(nn.Conv2d(ch, ch, 3, stride=2,
                                                   padding=1))

        self.mid1 = ResBlock(ch, ch, cfg.time_dim)
        self.mid_attn = SpatioTemporalBlock(ch, cfg)
        self.mid2 = ResBlock(ch, ch, cfg.time_dim)

        self.up_res = nn.ModuleList()
        self.up_attn = nn.ModuleList()
        self.upsamplers = nn.ModuleList()
        for i, w in reversed(list(enumerate(widths))):
            self.up_res.append(ResBlock(ch + w, w, cfg.time_dim))
            self.up_attn.append(SpatioTemporalBlock(w, cfg))
            ch = w
            if i > 0:
                self.upsamplers.append(nn.Sequential(
                    nn.Upsample(scale_factor=2, mode="nearest"),
                    nn.Conv2d(ch, ch, 3, padding=1)))

        self.out_norm = nn.GroupNorm(math.gcd(8, ch), ch)
        self.out_conv = nn.Conv2d(ch, cfg.latent_channels, 3, padding=1)
        nn.init.zeros_(self.out_conv.weight)
        nn.init.zeros_(self.out_conv.bias)

    def forward(self, z: torch.Tensor, t: torch.Tensor,
                cond: torch.Tensor) -> torch.Tensor:
        """z: [B, T, C, h, w]; t: [B] step indices; cond: [B, S, cond_dim]."""
        b, frames = z.shape[:2]
        x = z.reshape(b * frames, *z.shape[2:])
        temb = self.time_mlp(timestep_embedding(t.to(z.dtype), self.cfg.time_dim))
        temb = temb.repeat_interleave(frames, dim=0)

        x = self.init_conv(x)
        skips = []
        for i, (res, attn) in enumerate(zip(self.down_res, self.down_attn)):
            x = res(x, temb)
            x = attn(x, cond, frames)
            skips.append(x)
            if i < len(self.downsamplers):
                x = self.downsamplers[i](x)

        x = self.mid1(x, temb)
        x = self.mid_attn(x, cond, frames)
        x = self.mid2(x, temb)

        for i, (res, attn) in enumerate(zip(self.up_res, self.up_attn)):
            x = torch.cat([x, skips[len(skips) - 1 - i]], dim=1)
            x = res(x, temb)
            x = attn(x, cond, frames)
            if i < len(self.upsamplers):
                x = self.upsamplers[i](x)

        x = self.out_conv(torch.nn.functional.silu(self.out_norm(x)))
        return x.reshape(b, frames, *x.shape[1:])
