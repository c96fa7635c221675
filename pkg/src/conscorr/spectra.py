"""Radial power spectra and spectral-cutoff diagnostics.

Binning: each coefficient of the full 2-D FFT goes to shell
``round(sqrt(kx^2 + ky^2))`` over signed integer wavenumbers; shells above
``k_max = min(nx, ny) // 2`` (grid corners) go to a separate overflow bin.
Normalisation: ``|F|^2 / (nx*ny)^2`` so that shells plus overflow sum to the
spatial mean of ``field**2``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np

from .field import PrimitiveState, Trajectory

NORMALIZATION = "sum(shells) + overflow = mean(field**2); |F|^2/(nx*ny)^2; shell = rint(|k|)"
LOG_FLOOR = 1e-20


@dataclass
class SpectrumResult:
    k: np.ndarray
    density: np.ndarray
    overflow: float
    channel: str = ""
    timestep: Optional[int] = None
    normalization: str = NORMALIZATION

    @property
    def k_max(self) -> int:
        return int(self.k[-1])

    @property
    def total(self) -> float:
        return float(self.density.sum() + self.overflow)


def tke_field(state) -> np.ndarray:
    """Turbulent kinetic energy density ``rho |u|^2 / 2``."""
    if isinstance(state, PrimitiveState):
        rho, u = state.rho, state.u
    else:
        arr = np.asarray(state)
        rho, u = arr[0], arr[2:4]
    return 0.5 * rho * (u[0] ** 2 + u[1] ** 2)


def _shells(nx: int, ny: int) -> np.ndarray:
    kx = np.fft.fftfreq(nx, 1.0 / nx)[:, None]
    ky = np.fft.fftfreq(ny, 1.0 / ny)[None, :]
    return np.rint(np.sqrt(kx**2 + ky**2)).astype(int)


def radial_spectrum(f, channel: str = "", timestep: Optional[int] = None) -> SpectrumResult:
    f = np.asarray(f, dtype=np.float64)
    nx, ny = f.shape
    power = np.abs(np.fft.fft2(f)) ** 2 / (nx * ny) ** 2
    shells = _shells(nx, ny)
    k_max = min(nx, ny) // 2
    inside = shells <= k_max
    density = np.bincount(shells[inside], weights=power[inside], minlength=k_max + 1)
    return SpectrumResult(np.arange(k_max + 1), density, float(power[~inside].sum()), channel, timestep)


def channel_field(frame_primitive: np.ndarray, channel: str) -> np.ndarray:
    """Select ``rho``, ``p``, ``u_x``, ``u_y`` or derived ``tke`` from a primitive frame."""
    names = {"rho": 0, "p": 1, "u_x": 2, "u_y": 3}
    if channel == "tke":
        return tke_field(frame_primitive)
    if channel not in names:
        raise ValueError(f"unknown spectrum channel {channel!r}")
    return frame_primitive[names[channel]]


def spectrum_vs_time(traj: Trajectory, channel: str = "rho") -> List[SpectrumResult]:
    prim = traj.to_primitive().data
    return [radial_spectrum(channel_field(prim[t], channel), channel, t) for t in range(len(prim))]


def spectrum_matrix(spectra: List[SpectrumResult]) -> np.ndarray:
    """``(time, k)`` density matrix for heat-map plotting."""
    return np.stack([s.density for s in spectra])


def cutoff_shell(spec: SpectrumResult, fraction: float = 1e-6) -> int:
    """Smallest shell c with density above c (overflow included) <= ``fraction * total``.

    Power in the grid corners beyond ``k_max`` cannot be resolved by a shell,
    so a field that never meets the threshold reports ``k_max``.
    """
    total = spec.total
    # tail[c] = sum of shells > c, plus overflow
    tail = np.concatenate([np.cumsum(spec.density[::-1])[::-1][1:], [0.0]]) + spec.overflow
    ok = np.nonzero(tail <= fraction * total)[0]
    return int(ok[0]) if ok.size else spec.k_max


def fraction_above(spec: SpectrumResult, shell: int, exclude_mean: bool = False) -> float:
    """Share of density in shells strictly above ``shell`` (overflow included).

    With ``exclude_mean`` the share is taken of the fluctuation power only,
    i.e. shell 0 is dropped from the denominator.
    """
    total = spec.total - (spec.density[0] if exclude_mean else 0.0)
    if total <= 0:
        return 0.0
    return float((spec.density[shell + 1:].sum() + spec.overflow) / total)


@dataclass
class CutoffReport:
    channel: str
    fraction: float
    pred_cutoffs: np.ndarray
    truth_cutoffs: np.ndarray
    extra: dict = field(default_factory=dict)

    def rows(self):
        for t, (a, b) in enumerate(zip(self.pred_cutoffs, self.truth_cutoffs)):
            yield t, int(a), int(b)


def spectral_cutoff_report(pred_traj: Trajectory, truth_traj: Trajectory, channel: str = "rho", fraction: float = 1e-6) -> CutoffReport:
    sp = spectrum_vs_time(pred_traj, channel)
    st = spectrum_vs_time(truth_traj, channel)
    n = min(len(sp), len(st))
    return CutoffReport(
        channel,
        fraction,
        np.array([cutoff_shell(s, fraction) for s in sp[:n]]),
        np.array([cutoff_shell(s, fraction) for s in st[:n]]),
    )


def write_matrix_csv(spectra: List[SpectrumResult], path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"k{k}" for k in spectra[0].k] + ["overflow"])
        for s in spectra:
            w.writerow([s.timestep] + [repr(float(x)) for x in s.density] + [repr(float(s.overflow))])
    return path


def write_cutoff_csv(report: CutoffReport, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "pred_cutoff", "truth_cutoff"])
        for row in report.rows():
            w.writerow(row)
    return path


def plot_spectra(curves: dict, path, title: str = "") -> Path:
    """Log-log shell spectra, one curve per label (layout of a TKE comparison plot)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 4))
    for label, spec in curves.items():
        ax.loglog(spec.k[1:], np.maximum(spec.density[1:], LOG_FLOOR), label=label)
    ax.set_xlabel("wavenumber shell k")
    ax.set_ylabel("spectral density")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_time_frequency(matrices: dict, path, dt: float = 1.0) -> Path:
    """Heat maps of log10 density over (time, shell), one panel per label."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(1, len(matrices), figsize=(4 * len(matrices), 3.5), squeeze=False)
    for ax, (label, mat) in zip(axes[0], matrices.items()):
        im = ax.imshow(np.log10(np.maximum(mat.T, LOG_FLOOR)), origin="lower", aspect="auto",
                       extent=[0, mat.shape[0] * dt, 0, mat.shape[1]], vmin=-20)
        ax.set_title(label)
        ax.set_xlabel("time")
        ax.set_ylabel("shell k")
        fig.colorbar(im, ax=ax)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)
