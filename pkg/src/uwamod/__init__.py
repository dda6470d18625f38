"""Learned unitary modulation for underwater acoustic multicarrier links."""
from .channel import (
    ChannelDataset,
    PathSet,
    SystemConfig,
    build_channel_matrix,
    generate_dataset,
    load_dataset,
    raised_cosine,
    sample_paths,
    save_dataset,
)
from .modem import ber_sweep, dft_matrix, identity_matrix, lmmse_equalize
from .numerics import hermitian_solve, householder_qr
from .objective import error_correlation, fairness_objective, mse_profile, optimal_profile
from .training import TrainConfig, finalize_modulation, train

__all__ = [
    "ChannelDataset",
    "PathSet",
    "SystemConfig",
    "TrainConfig",
    "ber_sweep",
    "build_channel_matrix",
    "dft_matrix",
    "error_correlation",
    "fairness_objective",
    "finalize_modulation",
    "generate_dataset",
    "hermitian_solve",
    "householder_qr",
    "identity_matrix",
    "lmmse_equalize",
    "load_dataset",
    "mse_profile",
    "optimal_profile",
    "raised_cosine",
    "sample_paths",
    "save_dataset",
    "train",
]

__version__ = "0.1.0"
