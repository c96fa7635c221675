"""Conserved-quantity corrections for autoregressive neural PDE operators."""
from .correction import CorrectionSpec, apply_correction, conservation_drift, correct_tensor, magnitude_correct, shift_correct
from .field import ConservedState, Grid2D, PrimitiveState, Trajectory
from .models import OperatorConfig, build_operator
from .training import TrainConfig, evaluate, rollout, rollout_loss, train

__version__ = "0.1.0"

__all__ = [
    "ConservedState",
    "CorrectionSpec",
    "Grid2D",
    "OperatorConfig",
    "PrimitiveState",
    "TrainConfig",
    "Trajectory",
    "apply_correction",
    "build_operator",
    "conservation_drift",
    "correct_tensor",
    "evaluate",
    "magnitude_correct",
    "rollout",
    "rollout_loss",
    "shift_correct",
    "train",
]
