from .swin import SwinStyleConfig, SwinEncoder
from .vit import EcgVitConfig, EcgViT, ecg_patchify
from .autoencoder import AutoencoderConfig, ConvAutoencoder
from .unet import UNetConfig, CondUNet

__all__ = [
    "SwinStyleConfig", "SwinEncoder",
    "EcgVitConfig", "EcgViT", "ecg_patchify",
    "AutoencoderConfig", "ConvAutoencoder",
    "UNetConfig", "CondUNet",
]
