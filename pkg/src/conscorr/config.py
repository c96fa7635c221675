"""Run configuration: one YAML file, strictly validated, resolved with defaults."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import yaml

from .correction import CorrectionSpec
from .data import ICSampler, SolverConfig
from .field import Grid2D
from .models import OperatorConfig
from .training import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class SolverSection:
    nx: int = 64
    ny: int = 64
    lx: float = 1.0
    ly: float = 1.0
    eta: float = 1e-8
    zeta: float = 1e-8
    cfl: float = 0.4
    mach_target: float = 0.1
    save_every: int = 20
    n_frames: int = 60
    reconstruction: str = "muscl"
    frame_dt: Optional[float] = None

    def build(self) -> SolverConfig:
        return SolverConfig(
            grid=Grid2D(self.nx, self.ny, self.lx, self.ly), eta=self.eta, zeta=self.zeta, cfl=self.cfl,
            mach_target=self.mach_target, save_every=self.save_every, n_frames=self.n_frames,
            reconstruction=self.reconstruction, frame_dt=self.frame_dt,
        )


@dataclass
class ICSection:
    k_max: float = 4.0
    base_density: float = 1.0
    base_pressure: float = 1.0
    density_amplitude: float = 0.2
    pressure_amplitude: float = 0.2


@dataclass
class DataSection:
    n_samples: int = 32
    split: List[float] = field(default_factory=lambda: [0.8, 0.1, 0.1])
    workers: int = 1
    # "dir" (our trajectory directories) or "pdebench" (HDF5 file)
    format: str = "dir"
    sample_range: Optional[List[int]] = None
    downsample_to: Optional[int] = None

    def __post_init__(self):
        if self.format not in ("dir", "pdebench"):
            raise ValueError(f"format must be 'dir' or 'pdebench', got {self.format!r}")
        if len(self.split) != 3:
            raise ValueError("split needs three fractions")


@dataclass
class OperatorSection:
    arch: str = "fno"
    modes: int = 12
    width: int = 32
    depth: int = 4
    patch_size: int = 4
    history: int = 2
    clip_floor: float = 1e-8
    normalization: str = "internal"
    heads: int = 4
    mode_mask: str = "radial"

    def build(self, grid: Grid2D) -> OperatorConfig:
        return OperatorConfig(nx=grid.nx, ny=grid.ny, **dataclasses.asdict(self))


@dataclass
class TrainingSection:
    rollout_steps: int = 5
    epochs: int = 100
    warmup_epochs: int = 20
    peak_lr: float = 1e-3
    betas: List[float] = field(default_factory=lambda: [0.9, 0.999])
    batch_size: int = 16
    div_factor: float = 25.0
    final_lr_fraction: float = 1e-2
    windows_per_trajectory: int = 1
    checkpoint_every: int = 0

    def build(self, seed: int, precision: str) -> TrainConfig:
        d = dataclasses.asdict(self)
        d["betas"] = tuple(d["betas"])
        return TrainConfig(seed=seed, precision=precision, **d)


@dataclass
class CorrectionSection:
    rho: str = "magnitude"
    mom_x: str = "shift"
    mom_y: str = "shift"
    E: str = "none"
    denominator_epsilon: float = 1e-12
    in_training: bool = True

    def build(self) -> CorrectionSpec:
        return CorrectionSpec(
            {"rho": self.rho, "mom_x": self.mom_x, "mom_y": self.mom_y, "E": self.E},
            denominator_epsilon=self.denominator_epsilon, in_training=self.in_training,
        )


@dataclass
class MetricsSection:
    seed_time: int = 10
    horizon: int = 10
    horizons: List[int] = field(default_factory=lambda: [1, 5, 10])
    threshold: float = 0.9
    split: str = "test"

    def __post_init__(self):
        if self.split not in ("train", "val", "test", "all"):
            raise ValueError(f"split must be train/val/test/all, got {self.split!r}")


@dataclass
class SpectraSection:
    channel: str = "rho"
    fraction: float = 1e-6


@dataclass
class RunConfig:
    seed: int = 0
    precision: str = "single"
    device: str = "auto"
    solver: SolverSection = field(default_factory=SolverSection)
    ic: ICSection = field(default_factory=ICSection)
    data: DataSection = field(default_factory=DataSection)
    operator: OperatorSection = field(default_factory=OperatorSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    correction: CorrectionSection = field(default_factory=CorrectionSection)
    metrics: MetricsSection = field(default_factory=MetricsSection)
    spectra: SpectraSection = field(default_factory=SpectraSection)

    def __post_init__(self):
        if self.precision not in ("single", "double"):
            raise ValueError(f"precision must be 'single' or 'double', got {self.precision!r}")
        if self.device not in ("auto", "cpu"):
            raise ValueError(f"device must be 'auto' or 'cpu', got {self.device!r}")

    def ic_sampler(self, seed: int) -> ICSampler:
        return ICSampler(seed=seed, **dataclasses.asdict(self.ic))

    def to_dict(self):
        return dataclasses.asdict(self)


_SECTIONS = {f.name: f.type for f in dataclasses.fields(RunConfig)}


def _build(cls, data, where):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(data).__name__}")
    names = {f.name: f for f in dataclasses.fields(cls)}
    for key in data:
        if key not in names:
            raise ConfigError(f"{where}.{key}: unknown key" if where else f"{key}: unknown key")
    kwargs = {}
    for key, value in data.items():
        sub = _section_class(cls, key)
        kwargs[key] = _build(sub, value, f"{where}.{key}" if where else key) if sub else value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where or 'config'}: {exc}") from exc


def _section_class(cls, key):
    if cls is not RunConfig:
        return None
    t = _SECTIONS[key]
    t = globals().get(t, t) if isinstance(t, str) else t
    return t if dataclasses.is_dataclass(t) else None


def config_from_dict(data: dict) -> RunConfig:
    return _build(RunConfig, data, "")


def load_config(path=None, overrides: Optional[dict] = None) -> RunConfig:
    data = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            data = yaml.safe_load(path.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    data = dict(data)
    for key, value in (overrides or {}).items():
        if value is not None:
            data[key] = value
    return config_from_dict(data)


def write_resolved(cfg: RunConfig, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "resolved_config.yaml"
    path.write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=True))
    return path
