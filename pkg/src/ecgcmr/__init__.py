"""Cross-modal ECG-CMR learning on a synthetic paired cohort.

Pipeline stages: synthetic cohort generation -> signal/image preprocessing ->
masked self-supervised CMR pretraining -> contrastive ECG-CMR alignment ->
{ECG-conditioned latent diffusion, downstream fine-tuning} -> evaluation.
"""

__version__ = "0.1.0"
