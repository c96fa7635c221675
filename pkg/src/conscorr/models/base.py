from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .layers import InternalNorm, OperatorConfigError

CHECKPOINT_SCHEMA = 1
ARCHES = ("fno", "dpot", "identity")


@dataclass
class OperatorConfig:
    arch: str = "fno"
    nx: int = 64
    ny: int = 64
    modes: int = 12
    width: int = 32
    depth: int = 4
    patch_size: int = 4
    history: int = 2
    channels: int = 4
    clip_floor: float = 1e-8
    normalization: str = "internal"
    heads: int = 4
    # fno only: "radial" keeps modes whose rounded |k| <= modes, "square" the full block
    mode_mask: str = "radial"

    def __post_init__(self):
        if self.arch not in ARCHES:
            raise OperatorConfigError(f"arch must be one of {ARCHES}, got {self.arch!r}")
        if self.history not in (1, 2):
            raise OperatorConfigError("history must be 1 or 2")
        if self.channels != 4:
            raise OperatorConfigError("only the 4-channel conserved layout is supported")
        if self.normalization not in ("internal", "none"):
            raise OperatorConfigError(f"normalization must be 'internal' or 'none', got {self.normalization!r}")
        if self.mode_mask not in ("radial", "square"):
            raise OperatorConfigError(f"mode_mask must be 'radial' or 'square', got {self.mode_mask!r}")
        if self.depth < 1 or self.width < 1:
            raise OperatorConfigError("depth and width must be positive")
        if self.arch == "fno":
            if self.modes > self.nx // 2 or self.modes > self.ny // 2 or self.modes < 1:
                raise OperatorConfigError(f"modes={self.modes} exceeds Nyquist of a {self.nx}x{self.ny} grid")
        elif self.arch == "dpot":
            p = self.patch_size
            if p < 1 or self.nx % p or self.ny % p:
                raise OperatorConfigError(f"patch_size {p} must divide grid {self.nx}x{self.ny}")
            tx, ty = self.nx // p, self.ny // p
            if self.modes > tx // 2 or self.modes > ty // 2 or self.modes < 1:
                raise OperatorConfigError(f"modes={self.modes} exceeds Nyquist of the {tx}x{ty} token grid")
            if self.width % self.heads:
                raise OperatorConfigError(f"width {self.width} not divisible by heads {self.heads}")

    @property
    def in_channels(self) -> int:
        return self.history * self.channels

    def to_dict(self):
        return asdict(self)


class StepOperator(nn.Module):
    """Raw learned step map: ``(B, h, 4, nx, ny)`` window -> ``(B, 4, nx, ny)``.

    Inputs are standardised per channel (when enabled), normalised cell
    coordinates are appended, and the output is mapped back to the scale
    of the most recent input frame.
    """

    def __init__(self, config: OperatorConfig):
        super().__init__()
        self.config = config
        self.norm = InternalNorm(config.in_channels) if config.normalization == "internal" else None
        x = (torch.arange(config.nx, dtype=torch.float64) + 0.5) / config.nx
        y = (torch.arange(config.ny, dtype=torch.float64) + 0.5) / config.ny
        self.register_buffer("coords", torch.stack(torch.meshgrid(x, y, indexing="ij")), persistent=False)

    def core(self, x):
        raise NotImplementedError

    def forward(self, window):
        cfg = self.config
        if window.ndim != 5 or tuple(window.shape[1:]) != (cfg.history, cfg.channels, cfg.nx, cfg.ny):
            raise OperatorConfigError(
                f"expected window (B, {cfg.history}, {cfg.channels}, {cfg.nx}, {cfg.ny}), got {tuple(window.shape)}"
            )
        b = window.shape[0]
        x = window.reshape(b, cfg.in_channels, cfg.nx, cfg.ny)
        if self.norm is not None:
            x, mean, std = self.norm(x)
        coords = self.coords.to(x.dtype).expand(b, -1, -1, -1)
        y = self.core(torch.cat([x, coords], dim=1))
        if self.norm is not None:
            y = y * std[:, -cfg.channels:] + mean[:, -cfg.channels:]
        return y


class IdentityOperator(StepOperator):
    """Persistence baseline: returns the most recent frame unchanged."""

    def __init__(self, config: OperatorConfig):
        nn.Module.__init__(self)
        self.config = config
        self.norm = None

    def forward(self, window):
        return window[:, -1]


def build_operator(config: OperatorConfig, seed=None, dtype=torch.float32) -> StepOperator:
    from .dpot import DPOT
    from .fno import FNO

    if seed is not None:
        torch.manual_seed(seed)
    cls = {"fno": FNO, "dpot": DPOT, "identity": IdentityOperator}[config.arch]
    return cls(config).to(dtype)


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def save_checkpoint(model: StepOperator, path, extra=None) -> Path:
    """Single ``.npz`` archive: JSON metadata plus one array per named parameter."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    dtype = next(iter(model.parameters()), torch.zeros(0, dtype=torch.float64)).dtype
    meta = {
        "schema": CHECKPOINT_SCHEMA,
        "config": model.config.to_dict(),
        "dtype": str(dtype).replace("torch.", ""),
        "extra": extra or {},
    }
    arrays = {f"param/{k}": v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    with path.open("wb") as fh:
        np.savez(fh, __meta__=np.array(json.dumps(meta, sort_keys=True)), **arrays)
    return path


def load_checkpoint(path):
    """Returns ``(model, meta)``."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["__meta__"]))
        if meta.get("schema") != CHECKPOINT_SCHEMA:
            raise ValueError(f"{path}: unsupported checkpoint schema {meta.get('schema')!r}")
        state = {k[len("param/"):]: torch.from_numpy(data[k]) for k in data.files if k.startswith("param/")}
    config = OperatorConfig(**meta["config"])
    model = build_operator(config, dtype=getattr(torch, meta["dtype"]))
    model.load_state_dict(state)
    return model, meta
