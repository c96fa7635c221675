"""Shared builders for tests: random valid states and independent oracles."""
import numpy as np

from conscorr.field import Grid2D, PrimitiveState, primitive_to_conserved


def random_primitive(rng, nx=8, ny=8):
    g = Grid2D(nx, ny)
    rho = rng.uniform(0.5, 2.0, (nx, ny))
    p = rng.uniform(0.5, 2.0, (nx, ny))
    u = rng.uniform(-1.0, 1.0, (2, nx, ny))
    return PrimitiveState(g, rho, p, u)


def random_conserved(rng, nx=8, ny=8):
    return primitive_to_conserved(random_primitive(rng, nx, ny))


def loop_sum(f):
    total = 0.0
    for i in range(f.shape[0]):
        for j in range(f.shape[1]):
            total += float(f[i, j])
    return total


def loop_rollout_loss(pred, truth):
    """Sum over t of ||pred_t - truth_t|| / ||truth_t||, with explicit loops."""
    total = 0.0
    for t in range(len(pred)):
        num = den = 0.0
        for a, b in zip(np.ravel(pred[t]), np.ravel(truth[t])):
            num += (float(a) - float(b)) ** 2
            den += float(b) ** 2
        total += num**0.5 / den**0.5
    return total
