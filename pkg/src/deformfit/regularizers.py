"""Deformation regularizers: L1 on point displacements and L2 smoothness on
neighboring control-point offset differences."""

from dataclasses import dataclass

import numpy as np

from .geometry import as_points


@dataclass(frozen=True)
class RegularizerWeights:
    lambda_smooth: float = 0.05
    lambda_l1: float = 0.0

    def __post_init__(self):
        if self.lambda_smooth < 0 or self.lambda_l1 < 0:
            raise ValueError("regularizer weights must be non-negative")


def offset_l1(original, deformed):
    """Sum of absolute per-component point displacements and its gradient on
    the deformed points (sign per component, 0 at exact zero)."""
    a = as_points(original)
    b = as_points(deformed)
    if len(a) != len(b):
        raise ValueError(f"point counts differ: {len(a)} vs {len(b)}")
    disp = b - a
    return float(np.abs(disp).sum()), np.sign(disp)


def _to_grid(offsets, lattice):
    offsets = np.asarray(offsets, dtype=float)
    l, m, n = lattice.degrees
    if offsets.shape != (lattice.num_controls, 3):
        raise ValueError(f"offsets shape {offsets.shape} does not match lattice degrees {lattice.degrees}")
    return offsets.reshape(l + 1, m + 1, n + 1, 3)


def lattice_smoothness(offsets, lattice):
    """Sum over 6-connected control-point pairs (each edge once) of the squared
    offset-difference norm, with gradients 2*(da - db) per endpoint."""
    grid = _to_grid(offsets, lattice)
    grad = np.zeros_like(grid)
    loss = 0.0
    for axis in range(3):
        d = np.diff(grid, axis=axis)
        loss += float(np.square(d).sum())
        lead = [slice(None)] * 4
        trail = [slice(None)] * 4
        lead[axis] = slice(1, None)
        trail[axis] = slice(None, -1)
        grad[tuple(lead)] += 2.0 * d
        grad[tuple(trail)] -= 2.0 * d
    return loss, grad.reshape(-1, 3)


def neighbor_difference_mean(offsets, lattice):
    """Mean norm of offset differences across lattice edges (smoothness metric)."""
    grid = _to_grid(offsets, lattice)
    norms = []
    for axis in range(3):
        d = np.diff(grid, axis=axis)
        norms.append(np.linalg.norm(d, axis=-1).ravel())
    return float(np.concatenate(norms).mean())
