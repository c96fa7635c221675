"""Hard conservation corrections applied to a step operator's raw output.

Nonnegative channels (density) are rescaled so their l1 mass matches the
reference frame; signed channels (momentum components) receive a uniform
additive shift so their cell sum matches.  Everything is plain torch so
gradients flow through the scale and shift terms.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional

import numpy as np
import torch

from .field import CONSERVED_CHANNELS, ConservedState, Grid2D, Trajectory, total_quantity

MODES = ("magnitude", "shift", "none")


@dataclass
class CorrectionSpec:
    """Per-channel correction mode, keyed by conserved channel name."""

    modes: Dict[str, str] = field(
        default_factory=lambda: {"rho": "magnitude", "mom_x": "shift", "mom_y": "shift", "E": "none"}
    )
    denominator_epsilon: float = 1e-12
    reference_frame: str = "most_recent"
    # False: correction is skipped inside the training rollout and only used at inference.
    in_training: bool = True

    def __post_init__(self):
        missing = set(CONSERVED_CHANNELS) - set(self.modes)
        extra = set(self.modes) - set(CONSERVED_CHANNELS)
        if missing or extra:
            raise ValueError(f"correction modes must cover exactly {CONSERVED_CHANNELS}; missing={sorted(missing)} extra={sorted(extra)}")
        for ch, mode in self.modes.items():
            if mode not in MODES:
                raise ValueError(f"channel {ch}: unknown correction mode {mode!r}")
        if self.reference_frame != "most_recent":
            raise ValueError("only the 'most_recent' reference frame is supported")
        if not self.denominator_epsilon > 0:
            raise ValueError("denominator_epsilon must be positive")

    @classmethod
    def navier_stokes(cls, **kw) -> "CorrectionSpec":
        return cls(**kw)

    @classmethod
    def mass_only(cls, **kw) -> "CorrectionSpec":
        return cls({"rho": "magnitude", "mom_x": "none", "mom_y": "none", "E": "none"}, **kw)

    @classmethod
    def disabled(cls, **kw) -> "CorrectionSpec":
        return cls({c: "none" for c in CONSERVED_CHANNELS}, **kw)

    @property
    def active(self) -> bool:
        return any(m != "none" for m in self.modes.values())

    def to_dict(self):
        return {
            "modes": dict(self.modes),
            "denominator_epsilon": self.denominator_epsilon,
            "reference_frame": self.reference_frame,
            "in_training": self.in_training,
        }


def _as_tensor(x):
    return torch.from_numpy(np.asarray(x)) if not torch.is_tensor(x) else x


def magnitude_correct(pred, ref, eps: float = 1e-12, events: Optional[list] = None):
    """Rescale ``pred`` so its l1 norm over the last two axes equals that of ``ref``.

    Leading axes are treated as a batch.  Where ``l1(pred) < eps`` the output
    falls back to the uniform field carrying ``l1(ref)``.
    """
    pred, ref = _as_tensor(pred), _as_tensor(ref)
    # sums in double: single-precision totals drift visibly over long rollouts
    num = ref.abs().sum(dim=(-2, -1), keepdim=True, dtype=torch.float64)
    den = pred.abs().sum(dim=(-2, -1), keepdim=True, dtype=torch.float64)
    degenerate = den < eps
    scale = (num / torch.where(degenerate, torch.ones_like(den), den)).to(pred.dtype)
    out = pred * scale
    if bool(degenerate.any()):
        n_cells = pred.shape[-1] * pred.shape[-2]
        uniform = (num / n_cells).to(pred.dtype).expand_as(pred)
        out = torch.where(degenerate, uniform, out)
        if events is not None:
            events.append({"kind": "magnitude_zero_denominator", "count": int(degenerate.sum())})
    return out


def shift_correct(pred, ref, grid: Optional[Grid2D] = None):
    """Add the uniform offset that makes the domain integral of ``pred`` match ``ref``.

    The offset is (int ref - int pred) / A; with uniform cells the dx*dy
    factors cancel against A, leaving (sum ref - sum pred) / (nx * ny).
    ``grid`` is accepted for shape checking only.
    """
    pred, ref = _as_tensor(pred), _as_tensor(ref)
    if grid is not None and tuple(pred.shape[-2:]) != grid.shape:
        raise ValueError(f"field shape {tuple(pred.shape[-2:])} does not match grid {grid.shape}")
    n_cells = pred.shape[-1] * pred.shape[-2]
    diff = ref.sum(dim=(-2, -1), keepdim=True, dtype=torch.float64) - pred.sum(
        dim=(-2, -1), keepdim=True, dtype=torch.float64
    )
    return pred + (diff / n_cells).to(pred.dtype)


def correct_tensor(raw, ref, spec: CorrectionSpec, events: Optional[list] = None):
    """Route each channel of ``(..., 4, nx, ny)`` tensors through its correction."""
    chans = []
    for i, name in enumerate(CONSERVED_CHANNELS):
        mode = spec.modes[name]
        if mode == "magnitude":
            chans.append(magnitude_correct(raw[..., i, :, :], ref[..., i, :, :], spec.denominator_epsilon, events))
        elif mode == "shift":
            chans.append(shift_correct(raw[..., i, :, :], ref[..., i, :, :]))
        else:
            chans.append(raw[..., i, :, :])
    return torch.stack(chans, dim=-3)


def apply_correction(
    pred: ConservedState, ref: ConservedState, spec: CorrectionSpec, events: Optional[list] = None
) -> ConservedState:
    if pred.grid != ref.grid:
        raise ValueError("pred and ref must share a grid")
    out = correct_tensor(
        torch.from_numpy(pred.to_array()), torch.from_numpy(ref.to_array()), spec, events
    )
    return ConservedState.from_array(pred.grid, out.numpy())


def conservation_drift(traj: Trajectory, eps: float = 1e-12, channels=None) -> Dict[str, np.ndarray]:
    """Per-channel drift of domain totals relative to frame 0.

    Relative ``|Q_t - Q_0| / |Q_0|``, or absolute ``|Q_t - Q_0|`` when
    ``|Q_0| < eps`` (e.g. zero net momentum).
    """
    traj = traj.to_conserved()
    channels = channels or CONSERVED_CHANNELS
    out = {}
    for name in channels:
        q = total_quantity(traj.channel(name).astype(np.float64), traj.grid)
        q0 = q[0]
        out[name] = np.abs(q - q0) / (abs(q0) if abs(q0) >= eps else 1.0)
    return out


def write_drift_csv(drift: Dict[str, np.ndarray], path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "channel", "drift"])
        n = len(next(iter(drift.values())))
        for t in range(n):
            for name, series in drift.items():
                w.writerow([t, name, repr(float(series[t]))])
    return path

