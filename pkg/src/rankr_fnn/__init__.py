"""Rank-R feedforward networks: CP-factorized input weights for tensor-valued inputs."""
from .data import (
    HsiCube,
    LabeledPatchSet,
    add_noise,
    extract_patches,
    load_cube,
    save_cube,
    split_per_class,
    synth,
)
from .equivalence import Fcfnn, fcfnn_forward, fcfnn_to_rankr, rank_upper_bound, verify_equivalence
from .experiment import ExperimentSpec, compare_models, param_table, run_experiment
from .model import ModelConfig, RankRModel, forward, hidden_preactivation, param_count, predict, z_excluding
from .serialize import load_model, save_model
from .stats import mann_whitney_u, welch_t
from .tensor_core import CpFactors, cp_reconstruct, inner, khatri_rao, matricize, ten, vec
from .training import TrainConfig, TrainingDiverged, grad_factor, grad_output, init_weights, nll, train

__version__ = "0.1.0"

__all__ = [
    "CpFactors", "cp_reconstruct", "inner", "khatri_rao", "matricize", "ten", "vec",
    "ModelConfig", "RankRModel", "forward", "hidden_preactivation", "param_count", "predict", "z_excluding",
    "TrainConfig", "TrainingDiverged", "grad_factor", "grad_output", "init_weights", "nll", "train",
    "Fcfnn", "fcfnn_forward", "fcfnn_to_rankr", "rank_upper_bound", "verify_equivalence",
    "HsiCube", "LabeledPatchSet", "add_noise", "extract_patches", "load_cube", "save_cube",
    "split_per_class", "synth",
    "ExperimentSpec", "compare_models", "param_table", "run_experiment",
    "load_model", "save_model", "mann_whitney_u", "welch_t",
]
