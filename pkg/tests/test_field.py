import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from conscorr.field import (
    ConservedState,
    Grid2D,
    InvalidFieldError,
    PrimitiveState,
    Trajectory,
    TrajectoryFormatError,
    conserved_array_to_primitive,
    conserved_to_primitive,
    l1_norm,
    l2_norm,
    primitive_array_to_conserved,
    primitive_to_conserved,
    total_quantity,
)
from helpers import loop_sum, random_conserved, random_primitive

G = Grid2D(4, 4)


def full(v, g=G):
    return np.full(g.shape, float(v))


def test_zero_velocity_energy_is_three_halves_p():
    c = primitive_to_conserved(PrimitiveState(G, full(1), full(1), np.zeros((2, 4, 4))))
    assert np.all(c.mom == 0)
    assert np.allclose(c.E, 1.5)


def test_moving_state_by_hand():
    u = np.stack([full(1), full(0)])
    c = primitive_to_conserved(PrimitiveState(G, full(2), full(1), u))
    assert np.allclose(c.mom[0], 2) and np.allclose(c.mom[1], 0)
    assert np.allclose(c.E, 2.5)


def test_inverse_examples():
    s = conserved_to_primitive(ConservedState(G, full(1), np.zeros((2, 4, 4)), full(1.5)))
    assert np.allclose(s.p, 1) and np.all(s.u == 0)
    s = conserved_to_primitive(ConservedState(G, full(2), np.stack([full(2), full(0)]), full(2.5)))
    assert np.allclose(s.u[0], 1) and np.allclose(s.p, 1)


def test_purely_kinetic_energy_clamps_pressure():
    events = []
    s = conserved_to_primitive(ConservedState(G, full(2), np.stack([full(2), full(0)]), full(1.0)), events=events)
    assert np.all(s.p == 1e-8)
    assert events[0]["kind"] == "p_floor" and events[0]["cells"] == 16


def test_zero_density_clamped_and_flagged():
    events = []
    rho = full(1)
    rho[0, 0] = 0.0
    conserved_to_primitive(ConservedState(G, rho, np.zeros((2, 4, 4)), full(1.5)), events=events)
    assert {"kind": "rho_floor", "cells": 1} in events


@pytest.mark.parametrize("bad", [np.nan, np.inf])
def test_non_finite_rejected(bad):
    rho = full(1)
    rho[1, 2] = bad
    with pytest.raises(InvalidFieldError):
        ConservedState(G, rho, np.zeros((2, 4, 4)), full(1.5))
    with pytest.raises(InvalidFieldError):
        total_quantity(rho, G)


def test_invalid_primitive_rejected():
    with pytest.raises(InvalidFieldError):
        PrimitiveState(G, full(-1), full(1), np.zeros((2, 4, 4)))
    with pytest.raises(InvalidFieldError):
        PrimitiveState(G, full(1), full(1), np.zeros((2, 4, 5)))


def test_total_quantity_examples(rng):
    assert total_quantity(full(3.5), G) == pytest.approx(3.5)
    assert total_quantity(np.zeros((4, 4)), G) == 0.0
    g = Grid2D(8, 8, 2.0, 0.5)
    f = rng.standard_normal((8, 8))
    assert total_quantity(f, g) == pytest.approx(loop_sum(f) * g.dx * g.dy, rel=1e-12)


def test_norm_examples(rng):
    assert l1_norm(np.ones((4, 4))) == 16 and l2_norm(np.ones((4, 4))) == 4
    f = np.zeros((4, 4))
    f[2, 1] = -3
    assert l1_norm(f) == 3 and l2_norm(f) == 3
    f = rng.standard_normal((8, 8))
    assert l1_norm(f) == pytest.approx(sum(abs(x) for x in f.ravel()), rel=1e-12)
    assert l2_norm(f) == pytest.approx(sum(x * x for x in f.ravel()) ** 0.5, rel=1e-12)


@given(st.integers(0, 2**31))
def test_round_trip_property(seed):
    s = random_primitive(np.random.default_rng(seed))
    back = conserved_to_primitive(primitive_to_conserved(s))
    np.testing.assert_allclose(back.to_array(), s.to_array(), rtol=1e-12, atol=1e-14)


@given(arrays(np.float64, (4, 4), elements=st.floats(-1e3, 1e3)))
def test_total_quantity_linear(f):
    assert total_quantity(2.0 * f, G) == pytest.approx(2.0 * total_quantity(f, G), rel=1e-12, abs=1e-9)


def test_vectorised_converters_match(rng):
    s = random_primitive(rng)
    arr = primitive_array_to_conserved(s.to_array()[None])[0]
    np.testing.assert_allclose(arr, primitive_to_conserved(s).to_array(), rtol=1e-14)
    np.testing.assert_allclose(conserved_array_to_primitive(arr), s.to_array(), rtol=1e-12)


@pytest.mark.parametrize("precision", ["double", "single"])
def test_trajectory_save_load(tmp_path, rng, precision):
    states = [random_conserved(rng) for _ in range(3)]
    traj = Trajectory.from_states(states, dt=0.1, provenance={"generator": "test"})
    back = Trajectory.load(traj.save(tmp_path / "t", precision))
    tol = 0 if precision == "double" else 1e-6
    np.testing.assert_allclose(back.data, traj.data, rtol=tol)
    assert back.provenance == {"generator": "test"} and back.dt == 0.1 and len(back) == 3


def test_trajectory_load_errors(tmp_path, rng):
    with pytest.raises(TrajectoryFormatError):
        Trajectory.load(tmp_path)
    traj = Trajectory.from_states([random_conserved(rng) for _ in range(2)], dt=1.0)
    path = traj.save(tmp_path / "t")
    (path / "rho.bin").write_bytes(b"\x00" * 8)
    with pytest.raises(TrajectoryFormatError, match="rho.bin"):
        Trajectory.load(path)


def test_trajectory_channel_and_conversion(rng):
    states = [random_primitive(rng) for _ in range(3)]
    traj = Trajectory.from_states(states, dt=1.0)
    assert traj.kind == "primitive"
    np.testing.assert_allclose(traj.to_conserved().to_primitive().data, traj.data, rtol=1e-12)
    assert traj.to_conserved().channel("mom_x").shape == (3, 8, 8)
