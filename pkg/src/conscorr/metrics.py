"""Error and correlation diagnostics over rollouts, computed on primitive variables."""
from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .field import Grid2D, PrimitiveState

ERROR_CHANNELS = {"all": (0, 1, 2, 3), "rho": (0,), "p": (1,), "u": (2, 3)}
CORR_CHANNELS = {"rho": 0, "p": 1, "u_x": 2, "u_y": 3}
EPS = 1e-12


class EmptyReportError(ValueError):
    pass


def _as_primitive_array(state) -> np.ndarray:
    if isinstance(state, PrimitiveState):
        return state.to_array()
    return np.asarray(state, dtype=np.float64)


def relative_error(pred, truth, channels: str = "all", flags: Optional[list] = None) -> float:
    """``l2(pred - truth) / l2(truth)`` over a channel set; velocity counts as one 2-vector channel."""
    p = _as_primitive_array(pred)[list(ERROR_CHANNELS[channels])]
    t = _as_primitive_array(truth)[list(ERROR_CHANNELS[channels])]
    den = math.sqrt(float(np.sum(t * t)))
    if den < EPS:
        if flags is not None:
            flags.append({"kind": "zero_norm_truth", "channels": channels})
        den = EPS
    return math.sqrt(float(np.sum((p - t) ** 2))) / den


def pearson_r(pred, truth, channel: str, flags: Optional[list] = None) -> Optional[float]:
    """Pearson correlation over cells of one primitive channel; ``None`` if either field is constant."""
    i = CORR_CHANNELS[channel]
    a = _as_primitive_array(pred)[i].ravel()
    b = _as_primitive_array(truth)[i].ravel()
    if a.size < 2:
        raise ValueError("pearson_r needs at least 2 cells")
    a = a - a.mean()
    b = b - b.mean()
    sa, sb = math.sqrt(float(a @ a)), math.sqrt(float(b @ b))
    # constant up to round-off of the mean subtraction
    if sa <= EPS * max(1.0, a.size) or sb <= EPS * max(1.0, b.size):
        if flags is not None:
            flags.append({"kind": "zero_variance", "channel": channel})
        return None
    return float(np.clip((a @ b) / (sa * sb), -1.0, 1.0))


def mean_correlation(corr: Dict[str, np.ndarray]) -> np.ndarray:
    """Unweighted mean of the per-channel correlation series (NaN entries skipped)."""
    return _nanmean(np.stack([np.asarray(v, dtype=float) for v in corr.values()]))


def _nanmean(stacked, axis=0):
    # all-NaN columns (diverged steps) stay NaN without a RuntimeWarning
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return np.nanmean(stacked, axis=axis)


def duration_above(series, threshold: float = 0.9) -> int:
    """Largest n with ``series[k] >= threshold`` for every k < n (first-crossing semantics)."""
    n = 0
    for r in series:
        if not (r >= threshold):  # NaN counts as a crossing
            break
        n += 1
    return n


@dataclass
class RolloutResult:
    sample_id: int
    pred: np.ndarray  # (horizon+1, 4, nx, ny) primitives, frame 0 is the seed
    truth: np.ndarray
    errors: np.ndarray  # (horizon,) overall relative error
    channel_errors: Dict[str, np.ndarray]
    correlations: Dict[str, np.ndarray]
    events: list = field(default_factory=list)
    diverged_at: Optional[int] = None
    threshold: float = 0.9

    @property
    def horizon(self):
        return len(self.errors)

    @property
    def mean_correlation(self):
        return mean_correlation(self.correlations)


def compute_rollout_result(sample_id, pred, truth, grid: Grid2D, dt, horizon, events=None, diverged_at=None, threshold=0.9) -> RolloutResult:
    """Per-step metrics for one rollout; steps past a divergence are NaN."""
    errors = np.full(horizon, np.nan)
    ch_err = {c: np.full(horizon, np.nan) for c in ("rho", "p", "u")}
    corr = {c: np.full(horizon, np.nan) for c in CORR_CHANNELS}
    flags = list(events or [])
    for k in range(1, min(len(pred), horizon + 1)):
        errors[k - 1] = relative_error(pred[k], truth[k], "all", flags)
        for c in ch_err:
            ch_err[c][k - 1] = relative_error(pred[k], truth[k], c, flags)
        for c in corr:
            r = pearson_r(pred[k], truth[k], c, flags)
            corr[c][k - 1] = np.nan if r is None else r
    return RolloutResult(sample_id, pred, truth, errors, ch_err, corr, flags, diverged_at, threshold)


def high_correlation_duration(result, threshold: float = 0.9) -> int:
    """Steps before the channel-mean correlation first drops below ``threshold``.

    ``result`` may be a :class:`RolloutResult` or a bare correlation series.
    """
    series = result.mean_correlation if isinstance(result, RolloutResult) else result
    return duration_above(series, threshold)


@dataclass
class Report:
    n_samples: int
    horizons: List[int]
    avg_error: float
    error_at: Dict[int, float]
    channel_avg_error: Dict[str, float]
    error_growth_per_step: float
    mean_correlation_duration: float
    per_step: Dict[str, np.ndarray]

    def to_dict(self):
        return {
            "n_samples": self.n_samples,
            "horizons": self.horizons,
            "avg_error": self.avg_error,
            "error_at": {str(k): v for k, v in self.error_at.items()},
            "channel_avg_error": self.channel_avg_error,
            "error_growth_per_step": self.error_growth_per_step,
            "mean_correlation_duration": self.mean_correlation_duration,
            "per_step": {k: [float(x) for x in v] for k, v in self.per_step.items()},
        }


def summarize(results: Sequence[RolloutResult], horizons=(1, 5, 10), threshold: float = 0.9) -> Report:
    """Sample means of the error/correlation series in the layout of the result tables."""
    if not results:
        raise EmptyReportError("no rollout results to summarize")
    horizon = min(r.horizon for r in results)
    errs = np.stack([r.errors[:horizon] for r in results])
    mean_err = _nanmean(errs)
    per_step = {"error": mean_err}
    for c in ("rho", "p", "u"):
        per_step[f"error_{c}"] = _nanmean(np.stack([r.channel_errors[c][:horizon] for r in results]))
    for c in CORR_CHANNELS:
        per_step[f"r_{c}"] = _nanmean(np.stack([r.correlations[c][:horizon] for r in results]))
    per_step["r_mean"] = _nanmean(np.stack([r.mean_correlation[:horizon] for r in results]))
    steps = np.arange(1, horizon + 1)
    ok = np.isfinite(mean_err)
    slope = float(np.polyfit(steps[ok], mean_err[ok], 1)[0]) if ok.sum() >= 2 else float("nan")
    return Report(
        n_samples=len(results),
        horizons=[h for h in horizons if h <= horizon],
        avg_error=float(_nanmean(np.stack([r.errors[:horizon] for r in results]), axis=None)),
        error_at={h: float(mean_err[h - 1]) for h in horizons if h <= horizon},
        channel_avg_error={c: float(_nanmean(per_step[f"error_{c}"])) for c in ("rho", "p", "u")},
        error_growth_per_step=slope,
        mean_correlation_duration=float(np.mean([high_correlation_duration(r, threshold) for r in results])),
        per_step=per_step,
    )


def _fmt(x) -> str:
    return repr(float(x))


def write_report(report: Report, out_dir, prefix: str = "") -> Dict[str, Path]:
    """Emit table1.csv (overall), table2.csv (per channel), per_step.csv and report.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    p = out / f"{prefix}table1.csv"
    with p.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["avg_err"] + [f"T={h}" for h in report.horizons] + ["growth_per_step", "corr_duration"])
        w.writerow([_fmt(report.avg_error)] + [_fmt(report.error_at[h]) for h in report.horizons]
                   + [_fmt(report.error_growth_per_step), _fmt(report.mean_correlation_duration)])
    paths["table1"] = p
    p = out / f"{prefix}table2.csv"
    with p.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["rho", "p", "u"])
        w.writerow([_fmt(report.channel_avg_error[c]) for c in ("rho", "p", "u")])
    paths["table2"] = p
    p = out / f"{prefix}per_step.csv"
    with p.open("w", newline="") as fh:
        w = csv.writer(fh)
        keys = list(report.per_step)
        w.writerow(["t"] + keys)
        for t in range(len(report.per_step["error"])):
            w.writerow([t + 1] + [_fmt(report.per_step[k][t]) for k in keys])
    paths["per_step"] = p
    p = out / f"{prefix}report.json"
    p.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    paths["json"] = p
    return paths


def write_sample_csv(results: Sequence[RolloutResult], path) -> Path:
    """Long-format per-sample series: sample, t, error, per-channel errors and correlations."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample", "t", "error", "error_rho", "error_p", "error_u", "r_rho", "r_p", "r_u_x", "r_u_y", "r_mean"])
        for r in results:
            rm = r.mean_correlation
            for t in range(r.horizon):
                w.writerow([r.sample_id, t + 1, _fmt(r.errors[t])]
                           + [_fmt(r.channel_errors[c][t]) for c in ("rho", "p", "u")]
                           + [_fmt(r.correlations[c][t]) for c in CORR_CHANNELS] + [_fmt(rm[t])])
    return path
