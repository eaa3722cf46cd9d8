"""Convolutional latent autoencoder for CMR frames.

Frames are encoded independently (the clip's temporal axis is handled by
the denoiser, not here). decode(encode(x)) restores the spatial shape for
any supported downsample factor.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn


@dataclass
class AutoencoderConfig:
    downsample: int = 4            # 1, 2, or 4
    latent_channels: int = 4
    base_channels: int = 32

    def __post_init__(self):
        if self.downsample not in (1, 2, 4, 8):
            raise ValueError("downsample must be a power of two in 1..8")


class ConvAutoencoder(nn.Module):
    def __init__(self, cfg: AutoencoderConfig):
        super().__init__()
        self.cfg = cfg
        ch = cfg.base_channels
        n_halvings = cfg.downsample.bit_length() - 1

        enc = [nn.Conv2d(1, ch, 3, padding=1), nn.SiLU()]
        for _ in range(n_halvings):
            enc += [nn.Conv2d(ch, ch, 3, stride=2, padding=1), nn.SiLU()]
        enc += [nn.Conv2d(ch, cfg.latent_channels, 3, padding=1)]
        self.encoder = nn.Sequential(*enc)

        dec = [nn.Conv2d(cfg.latent_channels, ch, 3, padding=1), nn.SiLU()]
        for _ in range(n_halvings):
            dec += [nn.Upsample(scale_factor=2, mode="nearest"),
                    nn.Conv2d(ch, ch, 3, padding=1), nn.SiLU()]
        dec += [nn.Conv2d(ch, 1, 3, padding=1)]
        self.decoder = nn.Sequential(*dec)

    def encode(self, frames: torch.Tensor) -> torch.Tensor:
        """[B, T, H, W] -> [B, T, C_lat, h, w]."""
        b, t, h, w = frames.shape
        z = self.encoder(frames.reshape(b * t, 1, h, w))
        return z.reshape(b, t, *z.shape[1:])

    def decode(self, z: torch.Tensor) -> torch.Tensor:
        """[B, T, C_lat, h, w] -> [B, T, H, W]."""
        b, t = z.shape[:2]
        x = self.decoder(z.reshape(b * t, *z.shape[2:]))
        return x.reshape(b, t, *x.shape[2:]).squeeze(2)
