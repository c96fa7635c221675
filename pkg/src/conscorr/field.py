"""Grid-aware field containers, primitive/conserved conversion and discrete integrals.

Conserved channels are ordered ``(rho, mom_x, mom_y, E)`` and primitive
channels ``(rho, p, u_x, u_y)``.  Arrays are laid out ``(..., nx, ny)``.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, List, Optional, Sequence, Union

import numpy as np

logger = logging.getLogger(__name__)

CONSERVED_CHANNELS = ("rho", "mom_x", "mom_y", "E")
PRIMITIVE_CHANNELS = ("rho", "p", "u_x", "u_y")

# Shared floor for density/pressure, matching the model output clipping value.
FLOOR = 1e-8
TRAJECTORY_SCHEMA = 1


class InvalidFieldError(ValueError):
    """Raised for non-finite or mis-shaped field data."""


class TrajectoryFormatError(ValueError):
    """Raised when a trajectory directory or import file is malformed."""


@dataclass(frozen=True)
class Grid2D:
    nx: int
    ny: int
    lx: float = 1.0
    ly: float = 1.0

    def __post_init__(self):
        if int(self.nx) != self.nx or int(self.ny) != self.ny:
            raise ValueError("grid cell counts must be integers")
        if self.nx < 4 or self.ny < 4:
            raise ValueError(f"grid must be at least 4x4, got {self.nx}x{self.ny}")
        if not (self.lx > 0 and self.ly > 0):
            raise ValueError("domain lengths must be positive")

    @property
    def dx(self) -> float:
        return self.lx / self.nx

    @property
    def dy(self) -> float:
        return self.ly / self.ny

    @property
    def area(self) -> float:
        return self.lx * self.ly

    @property
    def shape(self):
        return (self.nx, self.ny)

    def coordinates(self):
        """Cell-centre coordinates normalised to [0, 1), shape (2, nx, ny)."""
        x = (np.arange(self.nx) + 0.5) / self.nx
        y = (np.arange(self.ny) + 0.5) / self.ny
        return np.stack(np.meshgrid(x, y, indexing="ij"))

    def to_dict(self):
        return {"nx": self.nx, "ny": self.ny, "lx": self.lx, "ly": self.ly}


def _check(name, arr, shape):
    arr = np.asarray(arr)
    if arr.shape != tuple(shape):
        raise InvalidFieldError(f"{name}: expected shape {tuple(shape)}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidFieldError(f"{name}: contains non-finite values")
    return arr


@dataclass(frozen=True)
class PrimitiveState:
    grid: Grid2D
    rho: np.ndarray
    p: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        shape = self.grid.shape
        object.__setattr__(self, "rho", _check("rho", self.rho, shape))
        object.__setattr__(self, "p", _check("p", self.p, shape))
        object.__setattr__(self, "u", _check("u", self.u, (2, *shape)))
        if np.any(self.rho <= 0):
            raise InvalidFieldError("rho must be strictly positive")
        if np.any(self.p <= 0):
            raise InvalidFieldError("p must be strictly positive")

    def to_array(self) -> np.ndarray:
        return np.stack([self.rho, self.p, self.u[0], self.u[1]])

    @classmethod
    def from_array(cls, grid: Grid2D, arr) -> "PrimitiveState":
        arr = np.asarray(arr)
        return cls(grid, arr[0], arr[1], arr[2:4])


@dataclass(frozen=True)
class ConservedState:
    grid: Grid2D
    rho: np.ndarray
    mom: np.ndarray
    E: np.ndarray

    def __post_init__(self):
        shape = self.grid.shape
        object.__setattr__(self, "rho", _check("rho", self.rho, shape))
        object.__setattr__(self, "mom", _check("mom", self.mom, (2, *shape)))
        object.__setattr__(self, "E", _check("E", self.E, shape))
        if np.any(self.rho < 0):
            raise InvalidFieldError("rho must be nonnegative")
        if np.any(self.E < 0):
            raise InvalidFieldError("E must be nonnegative")

    def to_array(self) -> np.ndarray:
        return np.stack([self.rho, self.mom[0], self.mom[1], self.E])

    @classmethod
    def from_array(cls, grid: Grid2D, arr) -> "ConservedState":
        arr = np.asarray(arr)
        return cls(grid, arr[0], arr[1:3], arr[3])


State = Union[PrimitiveState, ConservedState]


def primitive_to_conserved(s: PrimitiveState) -> ConservedState:
    mom = s.rho[None] * s.u
    E = 1.5 * s.p + 0.5 * s.rho * (s.u[0] ** 2 + s.u[1] ** 2)
    return ConservedState(s.grid, s.rho.copy(), mom, E)


def conserved_to_primitive(
    c: ConservedState, floor: float = FLOOR, events: Optional[list] = None
) -> PrimitiveState:
    """Invert the conserved map, clamping degenerate density/pressure to ``floor``.

    Clamps are appended to ``events`` (when given) and logged; the conversion
    never aborts on a degenerate cell so long rollouts stay evaluable.
    """
    rho = c.rho
    low_rho = rho < floor
    if low_rho.any():
        _flag(events, "rho_floor", int(low_rho.sum()))
        rho = np.where(low_rho, floor, rho)
    u = c.mom / rho[None]
    p = (2.0 / 3.0) * (c.E - 0.5 * (c.mom[0] ** 2 + c.mom[1] ** 2) / rho)
    low_p = p < floor
    if low_p.any():
        _flag(events, "p_floor", int(low_p.sum()))
        p = np.where(low_p, floor, p)
    return PrimitiveState(c.grid, rho, p, u)


def _flag(events, kind, count):
    logger.debug("degenerate state: %s clamped in %d cells", kind, count)
    if events is not None:
        events.append({"kind": kind, "cells": count})


def conserved_array_to_primitive(arr: np.ndarray, floor: float = FLOOR) -> np.ndarray:
    """Vectorised conversion of stacked ``(..., 4, nx, ny)`` conserved arrays."""
    rho = np.maximum(arr[..., 0, :, :], floor)
    mx, my, E = arr[..., 1, :, :], arr[..., 2, :, :], arr[..., 3, :, :]
    p = np.maximum((2.0 / 3.0) * (E - 0.5 * (mx**2 + my**2) / rho), floor)
    return np.stack([rho, p, mx / rho, my / rho], axis=-3)


def primitive_array_to_conserved(arr: np.ndarray) -> np.ndarray:
    rho, p, ux, uy = (arr[..., i, :, :] for i in range(4))
    return np.stack(
        [rho, rho * ux, rho * uy, 1.5 * p + 0.5 * rho * (ux**2 + uy**2)], axis=-3
    )


def total_quantity(f, grid: Grid2D) -> float:
    """Discrete integral of ``f`` over the domain: cell sum times ``dx * dy``."""
    f = np.asarray(f)
    if not np.all(np.isfinite(f)):
        raise InvalidFieldError("total_quantity of non-finite field")
    total = f.sum(axis=(-2, -1)) * grid.dx * grid.dy
    return float(total) if f.ndim == 2 else total


def l1_norm(f) -> float:
    return float(np.abs(np.asarray(f)).sum())


def l2_norm(f) -> float:
    return float(np.sqrt(np.square(np.asarray(f)).sum()))


@dataclass
class Trajectory:
    """Time-ordered frames on one grid, stored as a ``(T+1, 4, nx, ny)`` array.

    ``kind`` selects the channel layout ("conserved" or "primitive").
    """

    grid: Grid2D
    dt: float
    data: np.ndarray
    kind: str = "conserved"
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.kind not in ("conserved", "primitive"):
            raise ValueError(f"unknown trajectory kind {self.kind!r}")
        if self.data.ndim != 4 or self.data.shape[1:] != (4, *self.grid.shape):
            raise InvalidFieldError(
                f"trajectory data must be (T+1, 4, {self.grid.nx}, {self.grid.ny}), got {self.data.shape}"
            )
        if len(self.data) < 2:
            raise InvalidFieldError("trajectory needs at least 2 frames")
        if not self.dt > 0:
            raise ValueError("dt must be positive")

    @property
    def channels(self):
        return CONSERVED_CHANNELS if self.kind == "conserved" else PRIMITIVE_CHANNELS

    def __len__(self):
        return len(self.data)

    def __getitem__(self, t) -> State:
        cls = ConservedState if self.kind == "conserved" else PrimitiveState
        return cls.from_array(self.grid, self.data[t])

    def __iter__(self) -> Iterator[State]:
        for t in range(len(self)):
            yield self[t]

    @property
    def states(self) -> List[State]:
        return list(self)

    def channel(self, name: str) -> np.ndarray:
        return self.data[:, self.channels.index(name)]

    @classmethod
    def from_states(cls, states: Sequence[State], dt: float, provenance=None) -> "Trajectory":
        grid = states[0].grid
        if any(s.grid != grid for s in states):
            raise InvalidFieldError("all states must share a grid")
        kind = "conserved" if isinstance(states[0], ConservedState) else "primitive"
        data = np.stack([s.to_array() for s in states])
        return cls(grid, dt, data, kind, dict(provenance or {}))

    def to_primitive(self) -> "Trajectory":
        if self.kind == "primitive":
            return self
        return Trajectory(self.grid, self.dt, conserved_array_to_primitive(self.data), "primitive", dict(self.provenance))

    def to_conserved(self) -> "Trajectory":
        if self.kind == "conserved":
            return self
        return Trajectory(self.grid, self.dt, primitive_array_to_conserved(self.data), "conserved", dict(self.provenance))

    def save(self, path, precision: str = "double") -> Path:
        """Write the directory format: ``meta.json`` plus one raw LE file per channel."""
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        dtype = "<f8" if precision == "double" else "<f4"
        meta = {
            "schema": TRAJECTORY_SCHEMA,
            "kind": self.kind,
            "grid": self.grid.to_dict(),
            "dt": self.dt,
            "n_frames": len(self),
            "channels": list(self.channels),
            "precision": precision,
            "dtype": dtype,
            "layout": "C",
            "provenance": self.provenance,
        }
        for i, name in enumerate(self.channels):
            np.ascontiguousarray(self.data[:, i], dtype=dtype).tofile(path / f"{name}.bin")
        (path / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
        return path

    @classmethod
    def load(cls, path) -> "Trajectory":
        path = Path(path)
        meta_file = path / "meta.json"
        if not meta_file.exists():
            raise TrajectoryFormatError(f"{path}: missing meta.json")
        meta = json.loads(meta_file.read_text())
        if meta.get("schema") != TRAJECTORY_SCHEMA:
            raise TrajectoryFormatError(f"{path}: unsupported schema {meta.get('schema')!r}")
        grid = Grid2D(**meta["grid"])
        shape = (meta["n_frames"], grid.nx, grid.ny)
        chans = []
        for name in meta["channels"]:
            f = path / f"{name}.bin"
            if not f.exists():
                raise TrajectoryFormatError(f"{path}: missing channel file {f.name}")
            raw = np.fromfile(f, dtype=meta["dtype"])
            if raw.size != np.prod(shape):
                raise TrajectoryFormatError(f"{f}: expected {np.prod(shape)} values, found {raw.size}")
            chans.append(raw.reshape(shape).astype(np.float64))
        return cls(grid, meta["dt"], np.stack(chans, axis=1), meta["kind"], meta.get("provenance", {}))
