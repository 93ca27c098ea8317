"""dgmmkit: deep generative multiview model for reconstructing images from voxel responses."""
from .models import FittedModel, TwoViewDataset, VbState
from .engine import TrainConfig, VBEngine, train
from .predictor import reconstruct, reconstruct_many, select_rho
from .metrics import pcc, mse, ssim, screen_voxels, evaluate_reconstructions
from .io import load_dataset, save_dataset, zscore_voxels
from .synthetic import SyntheticConfig, generate_synthetic
from .checkpoint import load_model, save_model

__all__ = [
    "FittedModel",
    "TwoViewDataset",
    "VbState",
    "TrainConfig",
    "VBEngine",
    "train",
    "reconstruct", "reconstruct_many", "select_rho",
    "pcc", "mse", "ssim", "screen_voxels", "evaluate_reconstructions",
    "load_dataset", "save_dataset", "zscore_voxels",
    "SyntheticConfig", "generate_synthetic",
    "load_model", "save_model",
]

__version__ = "0.1.0"
