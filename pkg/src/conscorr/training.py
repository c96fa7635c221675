"""Autoregressive rollouts, the summed relative-L2 rollout loss, and training."""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import torch

from .correction import CorrectionSpec, correct_tensor
from .field import ConservedState, Trajectory, conserved_array_to_primitive
from .models import StepOperator, clip_nonnegative, save_checkpoint

logger = logging.getLogger(__name__)

LOSS_EPS = 1e-12


class NumericalDivergenceError(RuntimeError):
    def __init__(self, message, snapshot=None):
        super().__init__(message)
        self.snapshot = snapshot or {}


@dataclass
class TrainConfig:
    rollout_steps: int = 5
    epochs: int = 100
    warmup_epochs: int = 20
    peak_lr: float = 1e-3
    betas: tuple = (0.9, 0.999)
    batch_size: int = 16
    seed: int = 0
    precision: str = "single"
    # one-cycle shape: start at peak/div_factor, anneal to final_lr_fraction * peak
    div_factor: float = 25.0
    final_lr_fraction: float = 1e-2
    windows_per_trajectory: int = 1
    checkpoint_every: int = 0

    def __post_init__(self):
        self.betas = tuple(self.betas)
        if self.rollout_steps < 1:
            raise ValueError("rollout_steps must be >= 1")
        if not 0 <= self.warmup_epochs < self.epochs:
            raise ValueError("warmup_epochs must be in [0, epochs)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.precision not in ("single", "double"):
            raise ValueError("precision must be 'single' or 'double'")

    @property
    def dtype(self):
        return torch.float32 if self.precision == "single" else torch.float64


def one_cycle_lr(step: int, total_steps: int, warmup_steps: int, peak: float, div_factor=25.0, final_fraction=1e-2) -> float:
    """Cosine warm-up from ``peak/div_factor`` to ``peak``, then cosine anneal to ``final_fraction*peak``."""
    start, end = peak / div_factor, peak * final_fraction
    if step < warmup_steps:
        frac = step / warmup_steps
        return start + (peak - start) * 0.5 * (1 - math.cos(math.pi * frac))
    span = max(total_steps - warmup_steps, 1)
    frac = min((step - warmup_steps) / span, 1.0)
    return end + (peak - end) * 0.5 * (1 + math.cos(math.pi * frac))


# ---------------------------------------------------------------- rollouts


def step(model: StepOperator, window, spec: Optional[CorrectionSpec], events=None):
    """One corrected step: raw prediction -> clip -> correct against the newest frame."""
    raw = clip_nonnegative(model(window), model.config.clip_floor)
    if spec is None or not spec.active:
        return raw
    return correct_tensor(raw, window[:, -1], spec, events)


def rollout_tensor(model, window, n: int, spec: Optional[CorrectionSpec], events=None):
    """Differentiable rollout; returns the ``(B, n, 4, nx, ny)`` predicted frames."""
    preds = []
    for _ in range(n):
        nxt = step(model, window, spec, events)
        preds.append(nxt)
        window = torch.cat([window[:, 1:], nxt[:, None]], dim=1)
    return torch.stack(preds, dim=1)


@dataclass
class RolloutOutput:
    trajectory: Trajectory
    events: list = field(default_factory=list)
    diverged_at: Optional[int] = None
    n_seed: int = 1

    @property
    def n_predicted(self):
        return 0 if self.trajectory is None else len(self.trajectory) - self.n_seed


def rollout(model: StepOperator, spec: Optional[CorrectionSpec], seed_states: Sequence[ConservedState], n: int, dt: float = 1.0) -> RolloutOutput:
    """Roll ``model`` forward ``n`` steps from ``seed_states`` (oldest first).

    A non-finite prediction stops the rollout; the trajectory then holds only
    the finite frames and ``diverged_at`` names the failing step (1-based).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    h = model.config.history
    if len(seed_states) < h:
        raise ValueError(f"need {h} seed states, got {len(seed_states)}")
    grid = seed_states[0].grid
    params = list(model.parameters())
    dtype = params[0].dtype if params else torch.float64
    frames = [s.to_array() for s in seed_states]
    window = torch.from_numpy(np.stack(frames[-h:])).to(dtype)[None]
    events: list = []
    diverged = None
    model.eval()
    with torch.no_grad():
        for k in range(1, n + 1):
            nxt = step(model, window, spec, events)
            if not torch.isfinite(nxt).all():
                diverged = k
                events.append({"kind": "diverged", "step": k})
                logger.warning("rollout diverged at step %d", k)
                break
            frames.append(nxt[0].double().numpy())
            window = torch.cat([window[:, 1:], nxt[:, None]], dim=1)
    traj = Trajectory(grid, dt, np.stack(frames), "conserved", {"generator": "rollout"}) if len(frames) >= 2 else None
    return RolloutOutput(traj, events, diverged, n_seed=len(seed_states))


# ---------------------------------------------------------------- loss


def rollout_loss(pred, truth, eps: float = LOSS_EPS, flags: Optional[list] = None):
    """Sum over timesteps of ``||pred_t - truth_t||_2 / ||truth_t||_2``.

    Accepts ``Trajectory`` objects or arrays/tensors shaped ``(T, ...)`` or
    ``(B, T, ...)``; batched inputs return the batch mean.  Norms run over
    all channels and cells of a timestep.
    """
    if isinstance(pred, Trajectory):
        pred = torch.from_numpy(pred.data)
    if isinstance(truth, Trajectory):
        truth = torch.from_numpy(truth.data)
    pred, truth = torch.as_tensor(pred), torch.as_tensor(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"pred {tuple(pred.shape)} and truth {tuple(truth.shape)} differ")
    batched = pred.ndim == 5
    if not batched:
        pred, truth = pred[None], truth[None]
    dims = tuple(range(2, pred.ndim))
    num = torch.sqrt(((pred - truth) ** 2).sum(dim=dims))
    den = torch.sqrt((truth**2).sum(dim=dims))
    if flags is not None and bool((den < eps).any()):
        flags.append({"kind": "zero_norm_truth", "count": int((den < eps).sum())})
    loss = (num / torch.clamp(den, min=eps)).sum(dim=1)
    return loss.mean() if batched else loss[0]


# ---------------------------------------------------------------- training


def _stack(dataset: Sequence[Trajectory], dtype):
    return torch.from_numpy(np.stack([t.to_conserved().data for t in dataset])).to(dtype)


def train(
    model: StepOperator,
    dataset: Sequence[Trajectory],
    cfg: TrainConfig,
    spec: Optional[CorrectionSpec],
    log_path=None,
    checkpoint_dir=None,
    on_epoch: Optional[Callable] = None,
):
    """Autoregressive training with the rollout loss; returns ``(model, history)``.

    Each epoch draws ``windows_per_trajectory`` uniformly random start
    indices per trajectory; each sample seeds a ``rollout_steps`` rollout
    whose loss includes the (zero) i=0 term.
    """
    h = model.config.history
    tau = cfg.rollout_steps
    data = _stack(dataset, cfg.dtype)
    n_traj, n_frames = data.shape[:2]
    if n_frames < h + tau:
        raise ValueError(f"trajectories need >= {h + tau} frames, have {n_frames}")
    model = model.to(cfg.dtype)
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.peak_lr, betas=cfg.betas)
    n_samples = n_traj * cfg.windows_per_trajectory
    steps_per_epoch = math.ceil(n_samples / cfg.batch_size)
    total = steps_per_epoch * cfg.epochs
    warm = steps_per_epoch * cfg.warmup_epochs
    train_spec = spec if (spec is not None and spec.in_training) else None
    history = []
    t0 = time.perf_counter()
    global_step = 0
    for epoch in range(cfg.epochs):
        model.train()
        starts = rng.integers(0, n_frames - (h + tau) + 1, size=n_samples)
        traj_idx = np.repeat(np.arange(n_traj), cfg.windows_per_trajectory)
        order = rng.permutation(n_samples)
        losses, lr = [], None
        for b in range(steps_per_epoch):
            sel = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            lr = one_cycle_lr(global_step, total, warm, cfg.peak_lr, cfg.div_factor, cfg.final_lr_fraction)
            for group in opt.param_groups:
                group["lr"] = lr
            windows = torch.stack([data[traj_idx[i], starts[i]:starts[i] + h + tau] for i in sel])
            seed, truth = windows[:, :h], windows[:, h - 1:]
            preds = rollout_tensor(model, seed, tau, train_spec)
            pred = torch.cat([seed[:, -1:], preds], dim=1)
            loss = rollout_loss(pred, truth)
            if not torch.isfinite(loss):
                pnorm = math.sqrt(sum(float((p.detach() ** 2).sum()) for p in model.parameters()))
                snap = {"epoch": epoch, "batch": b, "starts": starts[sel].tolist(), "trajectories": traj_idx[sel].tolist(), "param_norm": pnorm}
                raise NumericalDivergenceError(f"non-finite loss at epoch {epoch}, batch {b}", snap)
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
            global_step += 1
        rec = {"epoch": epoch + 1, "loss": float(np.mean(losses)), "lr": lr, "wall_time": time.perf_counter() - t0}
        history.append(rec)
        logger.info("epoch %d loss %.5f lr %.2e", rec["epoch"], rec["loss"], lr)
        if log_path is not None:
            write_history_csv(history, log_path)
        if checkpoint_dir is not None and cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
            save_checkpoint(model, Path(checkpoint_dir) / f"epoch_{epoch + 1:04d}.npz", {"epoch": epoch + 1})
        if on_epoch is not None:
            on_epoch(rec)
    return model, history


def write_history_csv(history, path):
    with Path(path).open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["epoch", "loss", "lr", "wall_time"])
        w.writeheader()
        for rec in history:
            w.writerow(rec)


# ---------------------------------------------------------------- evaluation


def evaluate(model: StepOperator, spec: Optional[CorrectionSpec], dataset: Sequence[Trajectory], seed_time: int, horizon: int, threshold: float = 0.9):
    """Corrected rollout from frame ``seed_time`` of every sample; metrics on primitives."""
    from .metrics import compute_rollout_result

    h = model.config.history
    results = []
    for i, traj in enumerate(dataset):
        traj = traj.to_conserved()
        if seed_time - h + 1 < 0 or seed_time + horizon >= len(traj):
            raise ValueError(
                f"sample {i}: seed_time={seed_time} horizon={horizon} needs frames "
                f"{seed_time - h + 1}..{seed_time + horizon}, trajectory has {len(traj)}"
            )
        seeds = [traj[t] for t in range(seed_time - h + 1, seed_time + 1)]
        out = rollout(model, spec, seeds, horizon, traj.dt)
        truth = Trajectory(traj.grid, traj.dt, traj.data[seed_time:seed_time + horizon + 1], "conserved")
        pred_frames = out.trajectory.data[h - 1:] if out.trajectory is not None else traj.data[seed_time:seed_time + 1]
        results.append(
            compute_rollout_result(
                sample_id=i,
                pred=conserved_array_to_primitive(pred_frames),
                truth=truth.to_primitive().data,
                grid=traj.grid,
                dt=traj.dt,
                horizon=horizon,
                events=out.events,
                diverged_at=out.diverged_at,
                threshold=threshold,
            )
        )
    return results


__all__ = [
    "NumericalDivergenceError",
    "RolloutOutput",
    "TrainConfig",
    "evaluate",
    "one_cycle_lr",
    "rollout",
    "rollout_loss",
    "rollout_tensor",
    "step",
    "train",
    "write_history_csv",
]
