from .config import LADDER, LawConfig
from .denoiser import SurrogateDenoiser, timestep_embedding
from .losses import LawBatch, LossComponents, dice_regularizer, total_loss, weighted_mse
from .schedule import NoiseSchedule, forward_diffuse
from .train import (
    LawRun,
    NonFiniteLossError,
    OptimSettings,
    build_models,
    delta_alignment,
    latents,
    region_mse,
    train_law,
    train_uniform_baseline,
)
from .weights import (
    DegenerateWeightsError,
    DeltaNet,
    WeightMaps,
    compute_weights,
    delta_map,
    finalize_weights,
    modulate,
    ratio_prior,
)

__all__ = [
    "LADDER", "DegenerateWeightsError", "DeltaNet", "LawBatch", "LawConfig", "LawRun",
    "LossComponents", "NoiseSchedule", "NonFiniteLossError", "OptimSettings",
    "SurrogateDenoiser", "WeightMaps", "build_models", "compute_weights", "delta_alignment",
    "delta_map", "dice_regularizer", "finalize_weights", "forward_diffuse", "latents",
    "modulate", "ratio_prior", "region_mse", "timestep_embedding", "total_loss",
    "train_law", "train_uniform_baseline", "weighted_mse",
]
