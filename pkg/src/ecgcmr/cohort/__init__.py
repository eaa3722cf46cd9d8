from .latents import (
    DISEASE_CLASSES,
    LabelThresholds,
    LatentCardiacState,
    derive_label,
)
from .generate import GeneratorConfig, generate_cohort
from .dataset import (
    CohortDataset,
    CohortManifest,
    CovariateVector,
    PairedSample,
    load_manifest,
    split_cohort,
)

__all__ = [
    "DISEASE_CLASSES", "LabelThresholds", "LatentCardiacState", "derive_label",
    "GeneratorConfig", "generate_cohort",
    "CohortDataset", "CohortManifest", "CovariateVector", "PairedSample",
    "load_manifest", "split_cohort",
]
