"""Uncertainty-guided progressive GANs for paired image-to-image translation.

A cascade of generators predicts per-pixel generalized-Gaussian residual
parameters (mean, scale, shape); each refinement stage is steered by an
attention feature built from the previous stage's uncertainty map. Training
is progressive: phases are initialized one at a time with frozen
predecessors, then fine-tuned jointly at a reduced learning rate.
"""

from .cascade import CascadeState, PhaseOutput, attention_feature, cascade_input, upgan_forward
from .dataset import DatasetManifest, PairedSample, procedural_pairs, subset_supervision
from .degrade import MotionSeverity, simulate_motion, undersample_kspace
from .ggd import GGDPrediction, ggd_nll, ggd_sample, ggd_sigma, log_gamma
from .metrics import EvalReport, mae, paired_significance, psnr, ssim
from .networks import (
    DiscriminatorConfig,
    GeneratorConfig,
    PatchDiscriminator,
    UncertaintyGenerator,
)
from .objectives import LossWeights, disc_loss, gen_adv_loss, gen_total_loss
from .trainer import (
    TrainConfig,
    TrainState,
    cosine_lr,
    finetune_all,
    init_phase,
    restore_best,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "CascadeState",
    "DatasetManifest",
    "DiscriminatorConfig",
    "EvalReport",
    "GGDPrediction",
    "GeneratorConfig",
    "LossWeights",
    "MotionSeverity",
    "PairedSample",
    "PatchDiscriminator",
    "PhaseOutput",
    "TrainConfig",
    "TrainState",
    "UncertaintyGenerator",
    "attention_feature",
    "cascade_input",
    "cosine_lr",
    "disc_loss",
    "finetune_all",
    "gen_adv_loss",
    "gen_total_loss",
    "ggd_nll",
    "ggd_sample",
    "ggd_sigma",
    "init_phase",
    "log_gamma",
    "mae",
    "paired_significance",
    "procedural_pairs",
    "psnr",
    "restore_best",
    "ssim",
    "subset_supervision",
    "simulate_motion",
    "train",
    "undersample_kspace",
    "upgan_forward",
]
