"""Desk-scale experiments shared by the scripts and the acceptance suite."""
from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np

from .correction import CorrectionSpec
from .data import SolverConfig, generate_dataset
from .field import Grid2D
from .metrics import summarize
from .models import OperatorConfig, build_operator
from .training import TrainConfig, evaluate, train

logger = logging.getLogger(__name__)


@dataclass
class DirectionCheckConfig:
    """Small FNO on a self-generated 64x64, Mach 0.1 dataset."""

    n_train: int = 32
    n_test: int = 4
    grid: int = 64
    mach: float = 0.1
    n_frames: int = 24
    save_every: int = 10
    frame_dt: float = 0.05
    test_seed_offset: int = 10_000
    operator: dict = field(default_factory=lambda: dict(arch="fno", modes=8, width=24, depth=3))
    epochs: int = 20
    warmup_epochs: int = 4
    batch_size: int = 4
    peak_lr: float = 5e-3
    rollout_steps: int = 5
    seeds: List[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    seed_time: int = 1
    horizon: int = 20


def _datasets(cfg: DirectionCheckConfig):
    solver = SolverConfig(grid=Grid2D(cfg.grid, cfg.grid), mach_target=cfg.mach, save_every=cfg.save_every,
                          n_frames=cfg.n_frames, frame_dt=cfg.frame_dt)
    train_set = generate_dataset(solver, cfg.n_train, seed=0)
    test_set = generate_dataset(solver, cfg.n_test, seed=cfg.test_seed_offset)
    return train_set, test_set


def _fit(cfg: DirectionCheckConfig, train_set, spec, seed):
    op = OperatorConfig(nx=cfg.grid, ny=cfg.grid, **cfg.operator)
    tc = TrainConfig(rollout_steps=cfg.rollout_steps, epochs=cfg.epochs, warmup_epochs=cfg.warmup_epochs,
                     batch_size=cfg.batch_size, peak_lr=cfg.peak_lr, seed=seed)
    return train(build_operator(op, seed=seed), train_set, tc, spec)


def direction_check(cfg: Optional[DirectionCheckConfig] = None, out_dir=None) -> dict:
    """Train corrected and uncorrected models per seed; report held-out rollout error.

    Returns the loss ratio (last / first epoch) of the first corrected run
    and the per-seed mean relative error over ``horizon`` steps.
    """
    cfg = cfg or DirectionCheckConfig()
    train_set, test_set = _datasets(cfg)
    rows, ratio = [], None
    errs = {"corrected": [], "uncorrected": []}
    for seed in cfg.seeds:
        for label, spec in (("corrected", CorrectionSpec()), ("uncorrected", CorrectionSpec.disabled())):
            model, hist = _fit(cfg, train_set, spec, seed)
            if ratio is None:
                ratio = hist[-1]["loss"] / hist[0]["loss"]
            report = summarize(evaluate(model, spec, test_set, cfg.seed_time, cfg.horizon), (1, 5, 10, cfg.horizon))
            errs[label].append(report.avg_error)
            rows.append({"seed": seed, "model": label, "first_loss": hist[0]["loss"], "last_loss": hist[-1]["loss"],
                         "avg_error": report.avg_error, "error_at_horizon": report.error_at[cfg.horizon],
                         "corr_duration": report.mean_correlation_duration})
            logger.info("seed %d %s: loss %.4f -> %.4f, eval error %.4f", seed, label,
                        hist[0]["loss"], hist[-1]["loss"], report.avg_error)
    out = {
        "loss_ratio": ratio,
        "corrected": [round(e, 5) for e in errs["corrected"]],
        "uncorrected": [round(e, 5) for e in errs["uncorrected"]],
        "corrected_mean": float(np.mean(errs["corrected"])),
        "uncorrected_mean": float(np.mean(errs["uncorrected"])),
        "config": asdict(cfg),
    }
    if out_dir is not None:
        path = Path(out_dir)
        path.mkdir(parents=True, exist_ok=True)
        with (path / "direction_check.csv").open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)
    return out
