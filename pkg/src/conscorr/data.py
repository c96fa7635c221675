"""Reference data: periodic compressible-flow finite-volume solver, random
initial conditions, dataset directories and the PDEBench HDF5 importer.

The solver advances conserved variables ``(rho, rho u, rho v, E)`` with
``E = p / (gamma - 1) + rho |u|^2 / 2`` and ``gamma = 5/3``.  Spatial scheme:
MUSCL (minmod-limited primitive slopes) with Rusanov face fluxes, central
differences for the viscous stress; time scheme: two-stage SSP Runge-Kutta.
"""
from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from .field import (
    CONSERVED_CHANNELS,
    Grid2D,
    PrimitiveState,
    Trajectory,
    TrajectoryFormatError,
    primitive_to_conserved,
)

logger = logging.getLogger(__name__)

GAMMA = 5.0 / 3.0
MAX_HALVINGS = 5


class SolverError(RuntimeError):
    """Raised when the solver cannot keep density and pressure positive."""


@dataclass
class SolverConfig:
    grid: Grid2D = field(default_factory=lambda: Grid2D(64, 64))
    gamma: float = GAMMA
    eta: float = 1e-8
    zeta: float = 1e-8
    cfl: float = 0.4
    mach_target: float = 0.1
    save_every: int = 10
    n_frames: int = 60
    reconstruction: str = "muscl"
    # fixed time between saved frames; None derives it from the initial CFL limit
    frame_dt: Optional[float] = None

    def __post_init__(self):
        if isinstance(self.grid, dict):
            self.grid = Grid2D(**self.grid)
        if not 0 < self.cfl <= 0.5:
            raise ValueError(f"cfl must be in (0, 0.5], got {self.cfl}")
        if not self.gamma > 1:
            raise ValueError("gamma must exceed 1")
        # the conserved layout fixes E = 3/2 p + kinetic, i.e. a monatomic gas
        if abs(self.gamma - GAMMA) > 1e-12:
            raise ValueError("gamma must be 5/3 to match the E = 3/2 p + rho u^2/2 energy convention")
        if self.eta < 0 or self.zeta < 0:
            raise ValueError("viscosities must be nonnegative")
        if self.save_every < 1 or self.n_frames < 2:
            raise ValueError("save_every >= 1 and n_frames >= 2 required")
        if self.reconstruction not in ("muscl", "constant"):
            raise ValueError(f"unknown reconstruction {self.reconstruction!r}")
        if self.frame_dt is not None and not self.frame_dt > 0:
            raise ValueError("frame_dt must be positive")

    def to_dict(self):
        d = asdict(self)
        d["grid"] = self.grid.to_dict()
        return d


@dataclass
class ICSampler:
    seed: int = 0
    k_max: float = 4.0
    base_density: float = 1.0
    base_pressure: float = 1.0
    density_amplitude: float = 0.2
    pressure_amplitude: float = 0.2


# ---------------------------------------------------------------- numerics


def _primitive(U, gamma):
    rho = U[0]
    u = U[1] / rho
    v = U[2] / rho
    p = (gamma - 1.0) * (U[3] - 0.5 * rho * (u * u + v * v))
    return rho, u, v, p


def _minmod(a, b):
    return np.where(a * b > 0, np.sign(a) * np.minimum(np.abs(a), np.abs(b)), 0.0)


def _euler_flux(rho, un, ut, p, gamma, axis):
    """Flux normal to ``axis`` in the conserved ordering."""
    E = p / (gamma - 1.0) + 0.5 * rho * (un * un + ut * ut)
    mass = rho * un
    f_n = mass * un + p
    f_t = mass * ut
    f_e = (E + p) * un
    if axis == 0:
        return np.stack([mass, f_n, f_t, f_e])
    return np.stack([mass, f_t, f_n, f_e])


def _face_flux(W, gamma, axis, muscl):
    """Rusanov flux at faces i+1/2 along ``axis`` (array index i)."""
    ax = axis + 1  # W is (4, nx, ny)
    if muscl:
        slope = _minmod(W - np.roll(W, 1, ax), np.roll(W, -1, ax) - W)
        WL = W + 0.5 * slope
        WR = np.roll(W - 0.5 * slope, -1, ax)
    else:
        WL, WR = W, np.roll(W, -1, ax)
    n, t = (1, 2) if axis == 0 else (2, 1)
    FL = _euler_flux(WL[0], WL[n], WL[t], WL[3], gamma, axis)
    FR = _euler_flux(WR[0], WR[n], WR[t], WR[3], gamma, axis)
    UL = _to_conserved(WL, gamma)
    UR = _to_conserved(WR, gamma)
    cL = np.sqrt(gamma * WL[3] / WL[0])
    cR = np.sqrt(gamma * WR[3] / WR[0])
    smax = np.maximum(np.abs(WL[n]) + cL, np.abs(WR[n]) + cR)
    return 0.5 * (FL + FR) - 0.5 * smax * (UR - UL)


def _to_conserved(W, gamma):
    rho, u, v, p = W
    return np.stack([rho, rho * u, rho * v, p / (gamma - 1.0) + 0.5 * rho * (u * u + v * v)])


def _ddx(f, h, axis):
    return (np.roll(f, -1, axis) - np.roll(f, 1, axis)) / (2.0 * h)


def _rhs(U, cfg: SolverConfig):
    g = cfg.grid
    rho, u, v, p = _primitive(U, cfg.gamma)
    W = np.stack([rho, u, v, p])
    muscl = cfg.reconstruction == "muscl"
    Fx = _face_flux(W, cfg.gamma, 0, muscl)
    Fy = _face_flux(W, cfg.gamma, 1, muscl)
    dU = -(Fx - np.roll(Fx, 1, 1)) / g.dx - (Fy - np.roll(Fy, 1, 2)) / g.dy
    if cfg.eta > 0 or cfg.zeta > 0:
        dudx, dudy = _ddx(u, g.dx, 0), _ddx(u, g.dy, 1)
        dvdx, dvdy = _ddx(v, g.dx, 0), _ddx(v, g.dy, 1)
        div = dudx + dvdy
        sxx = cfg.eta * (2 * dudx - 2.0 / 3.0 * div) + cfg.zeta * div
        syy = cfg.eta * (2 * dvdy - 2.0 / 3.0 * div) + cfg.zeta * div
        sxy = cfg.eta * (dudy + dvdx)
        dU[1] += _ddx(sxx, g.dx, 0) + _ddx(sxy, g.dy, 1)
        dU[2] += _ddx(sxy, g.dx, 0) + _ddx(syy, g.dy, 1)
        dU[3] += _ddx(u * sxx + v * sxy, g.dx, 0) + _ddx(u * sxy + v * syy, g.dy, 1)
    return dU


def stable_dt(U, cfg: SolverConfig) -> float:
    g = cfg.grid
    rho, u, v, p = _primitive(U, cfg.gamma)
    c = np.sqrt(cfg.gamma * np.maximum(p, 0.0) / rho)
    rate = np.max(np.abs(u) + c) / g.dx + np.max(np.abs(v) + c) / g.dy
    dt = cfg.cfl / rate
    nu = (4.0 / 3.0) * cfg.eta + cfg.zeta
    if nu > 0:
        dt = min(dt, 0.25 * min(g.dx, g.dy) ** 2 * float(rho.min()) / nu)
    return float(dt)


def _admissible(U, gamma):
    if not np.all(np.isfinite(U)):
        return False
    rho, _, _, p = _primitive(U, gamma)
    return bool(rho.min() > 0 and p.min() > 0)


def rk2_step(U, dt, cfg: SolverConfig):
    U1 = U + dt * _rhs(U, cfg)
    if not _admissible(U1, cfg.gamma):
        return U1
    return 0.5 * U + 0.5 * (U1 + dt * _rhs(U1, cfg))


def _advance(U, dt, cfg, depth=0):
    """One step of size ``dt``, retried as two half steps on loss of positivity."""
    U_new = rk2_step(U, dt, cfg)
    if _admissible(U_new, cfg.gamma):
        return U_new
    if depth >= MAX_HALVINGS:
        rho, _, _, p = _primitive(U_new, cfg.gamma)
        raise SolverError(
            f"nonpositive state after {MAX_HALVINGS} dt halvings (dt={dt:.3e}, "
            f"min rho={np.nanmin(rho):.3e}, min p={np.nanmin(p):.3e})"
        )
    logger.debug("positivity loss at dt=%.3e, halving", dt)
    half = _advance(U, 0.5 * dt, cfg, depth + 1)
    return _advance(half, 0.5 * dt, cfg, depth + 1)


def solve(cfg: SolverConfig, ic: PrimitiveState, provenance: Optional[dict] = None) -> Trajectory:
    """Integrate from ``ic`` and return ``cfg.n_frames`` equally spaced conserved frames.

    The nominal step is ``frame_dt / save_every`` when set, else the initial
    CFL limit, so saved frames are uniform in time.  A nominal step is split
    into equal substeps whenever the current state needs a smaller one.
    """
    if ic.grid != cfg.grid:
        raise ValueError("initial condition grid does not match solver grid")
    U = primitive_to_conserved(ic).to_array().astype(np.float64)
    dt = stable_dt(U, cfg) if cfg.frame_dt is None else cfg.frame_dt / cfg.save_every
    frames = [U.copy()]
    steps = 0
    for _ in range(cfg.n_frames - 1):
        for _ in range(cfg.save_every):
            n_sub = max(1, math.ceil(dt / stable_dt(U, cfg) - 1e-12))
            for _ in range(n_sub):
                U = _advance(U, dt / n_sub, cfg)
            steps += 1
        frames.append(U.copy())
    prov = {
        "generator": "conscorr.data.solve",
        "scheme": f"{cfg.reconstruction}+rusanov, ssp-rk2",
        "solver_dt": dt,
        "solver_steps": steps,
        "solver": cfg.to_dict(),
    }
    prov.update(provenance or {})
    return Trajectory(cfg.grid, dt * cfg.save_every, np.stack(frames), "conserved", prov)


# ---------------------------------------------------------------- initial conditions


def _band_field(rng, grid: Grid2D, k_max: float) -> np.ndarray:
    kx = np.fft.fftfreq(grid.nx, 1.0 / grid.nx)[:, None]
    ky = np.fft.fftfreq(grid.ny, 1.0 / grid.ny)[None, :]
    k = np.sqrt(kx**2 + ky**2)
    band = (k > 0) & (k <= k_max)
    spec = (rng.standard_normal(k.shape) + 1j * rng.standard_normal(k.shape)) * band
    f = np.fft.ifft2(spec).real
    return f / np.abs(f).max()


def sample_ic(sampler: ICSampler, cfg: SolverConfig) -> PrimitiveState:
    """Band-limited random periodic fields with velocity scaled to the target rms Mach."""
    rng = np.random.default_rng(sampler.seed)
    g = cfg.grid
    rho = sampler.base_density * (1.0 + sampler.density_amplitude * _band_field(rng, g, sampler.k_max))
    p = sampler.base_pressure * (1.0 + sampler.pressure_amplitude * _band_field(rng, g, sampler.k_max))
    floor = 1e-3 * min(sampler.base_density, sampler.base_pressure)
    rho, p = np.maximum(rho, floor), np.maximum(p, floor)
    u = np.stack([_band_field(rng, g, sampler.k_max), _band_field(rng, g, sampler.k_max)])
    u *= cfg.mach_target / rms_mach(rho, p, u, cfg.gamma)
    return PrimitiveState(g, rho, p, u)


def rms_mach(rho, p, u, gamma=GAMMA) -> float:
    c2 = gamma * p / rho
    return float(np.sqrt(np.mean((u[0] ** 2 + u[1] ** 2) / c2)))


def _generate_one(args):
    cfg, sampler = args
    ic = sample_ic(sampler, cfg)
    return solve(cfg, ic, {"ic_seed": sampler.seed, "ic": asdict(sampler)})


def generate_dataset(cfg: SolverConfig, n_samples: int, seed: int = 0, workers: int = 1, sampler_kw=None) -> List[Trajectory]:
    """Independent trajectories with IC seeds ``seed, seed+1, ...``."""
    jobs = [(cfg, ICSampler(seed=seed + i, **(sampler_kw or {}))) for i in range(n_samples)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            return list(pool.map(_generate_one, jobs))
    out = []
    for i, job in enumerate(jobs):
        out.append(_generate_one(job))
        logger.info("generated sample %d/%d", i + 1, n_samples)
    return out


# ---------------------------------------------------------------- dataset io


def save_dataset(trajs: Sequence[Trajectory], path, precision="double", meta=None) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    names = []
    for i, traj in enumerate(trajs):
        name = f"sample_{i:04d}"
        traj.save(path / name, precision)
        names.append(name)
    index = {"n_samples": len(names), "samples": names, "meta": meta or {}}
    (path / "dataset.json").write_text(json.dumps(index, indent=2, sort_keys=True))
    return path


def load_dataset(path) -> List[Trajectory]:
    path = Path(path)
    index_file = path / "dataset.json"
    if index_file.exists():
        names = json.loads(index_file.read_text())["samples"]
        return [Trajectory.load(path / n) for n in names]
    if (path / "meta.json").exists():
        return [Trajectory.load(path)]
    raise TrajectoryFormatError(f"{path}: neither a dataset nor a trajectory directory")


PDEBENCH_FIELDS = ("density", "pressure", "Vx", "Vy")


def write_pdebench(path, trajs: Sequence[Trajectory]) -> Path:
    """Export trajectories in the PDEBench compressible-NS HDF5 layout."""
    import h5py

    prims = [t.to_primitive() for t in trajs]
    if any(abs(p.dt - prims[0].dt) > 1e-12 * prims[0].dt for p in prims):
        raise ValueError("the PDEBench layout needs one frame interval; generate with a fixed frame_dt")
    stacked = np.stack([p.data for p in prims])  # (N, T, 4, nx, ny)
    g = prims[0].grid
    with h5py.File(path, "w") as f:
        for i, name in enumerate(PDEBENCH_FIELDS):
            f.create_dataset(name, data=stacked[:, :, i])
        f.create_dataset("t-coordinate", data=np.arange(stacked.shape[1] + 1) * prims[0].dt)
        f.create_dataset("x-coordinate", data=(np.arange(g.nx) + 0.5) * g.dx)
        f.create_dataset("y-coordinate", data=(np.arange(g.ny) + 0.5) * g.dy)
    return Path(path)


def load_pdebench(path, sample_range=None, downsample_to=None) -> List[Trajectory]:
    """Read PDEBench-style HDF5 primitives as primitive trajectories, stride-subsampled.

    Values are kept exactly as stored; consumers convert with ``to_conserved``.
    """
    import h5py

    with h5py.File(path, "r") as f:
        for name in PDEBENCH_FIELDS:
            if name not in f:
                raise TrajectoryFormatError(f"{path}: missing dataset {name!r}")
        shape = f["density"].shape
        for name in PDEBENCH_FIELDS:
            if f[name].ndim != 4 or f[name].shape != shape:
                raise TrajectoryFormatError(f"{path}: dataset {name!r} has shape {f[name].shape}, expected {shape} (N, T, nx, ny)")
        lo, hi = sample_range if sample_range is not None else (0, shape[0])
        nx, ny = shape[2:]
        tx, ty = (downsample_to, downsample_to) if isinstance(downsample_to, int) else (downsample_to or (nx, ny))
        if nx % tx or ny % ty:
            raise TrajectoryFormatError(f"{path}: cannot stride-downsample {nx}x{ny} to {tx}x{ty}")
        sx, sy = nx // tx, ny // ty
        prim = np.stack([f[name][lo:hi, :, ::sx, ::sy] for name in PDEBENCH_FIELDS], axis=2)
        dt = float(np.diff(f["t-coordinate"][:2])[0]) if "t-coordinate" in f else 1.0
        lx = float(nx * np.diff(f["x-coordinate"][:2])[0]) if "x-coordinate" in f else 1.0
        ly = float(ny * np.diff(f["y-coordinate"][:2])[0]) if "y-coordinate" in f else 1.0
    grid = Grid2D(tx, ty, lx, ly)
    prov = {"generator": "pdebench-import", "source": str(path), "stride": [sx, sy]}
    return [
        Trajectory(grid, dt, prim[i].astype(np.float64), "primitive", dict(prov, sample=lo + i))
        for i in range(len(prim))
    ]


def split(items, fractions=(0.8, 0.1, 0.1), seed=0):
    """Seeded disjoint train/val/test partition by sample index."""
    if len(fractions) != 3 or any(f < 0 for f in fractions) or abs(sum(fractions) - 1) > 1e-9:
        raise ValueError("fractions must be three nonnegative numbers summing to 1")
    items = list(items)
    n = len(items)
    order = np.random.default_rng(seed).permutation(n)
    n_val = int(round(fractions[1] * n))
    n_test = int(round(fractions[2] * n))
    n_train = n - n_val - n_test
    parts = np.split(order, [n_train, n_train + n_val])
    return tuple([items[i] for i in part] for part in parts)


__all__ = [
    "CONSERVED_CHANNELS",
    "ICSampler",
    "SolverConfig",
    "SolverError",
    "generate_dataset",
    "load_dataset",
    "load_pdebench",
    "rms_mach",
    "sample_ic",
    "save_dataset",
    "solve",
    "split",
    "write_pdebench",
]
