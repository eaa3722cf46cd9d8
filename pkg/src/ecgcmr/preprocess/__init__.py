from .ecg import (
    EcgRecord,
    PreprocessConfig,
    AugmentPolicy,
    remove_baseline,
    wavelet_denoise,
    savgol_smooth,
    minmax_scale,
    augment_ecg,
    preprocess_ecg,
    ecg_transform,
)
from .cmr import (
    CmrClip,
    HeartMask,
    CmrAugmentPolicy,
    select_mid_slice,
    crop_to_heart,
    augment_cmr,
    normalize_resize,
    cmr_transform,
)

__all__ = [
    "EcgRecord", "PreprocessConfig", "AugmentPolicy",
    "remove_baseline", "wavelet_denoise", "savgol_smooth", "minmax_scale",
    "augment_ecg", "preprocess_ecg", "ecg_transform",
    "CmrClip", "HeartMask", "CmrAugmentPolicy",
    "select_mid_slice", "crop_to_heart", "augment_cmr", "normalize_resize",
    "cmr_transform",
]
