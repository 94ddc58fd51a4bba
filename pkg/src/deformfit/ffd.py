"""Differentiable free-form deformation on a trivariate Bezier control lattice.

A point with normalized lattice coordinates (u, v, w) is deformed by the
Bernstein-weighted sum of control-point offsets. Because the rest lattice is
uniform, the Bernstein basis reproduces the identity map (linear precision),
so deformation is implemented as `p + W @ offsets` where W is the per-point
weight matrix; W is then exactly the Jacobian of the output points with
respect to the offsets.
"""

from dataclasses import dataclass
from math import comb

import numpy as np

from .geometry import as_points

DEFAULT_DEGREES = (3, 3, 3)  # 4 control points per axis, 64 total
DEFAULT_DOMAIN_PAD = 0.05


def bernstein(degree, index, x):
    """Bernstein basis polynomial B_{degree,index}(x) for x in [0, 1]."""
    if not 0 <= index <= degree:
        raise ValueError(f"index {index} out of range for degree {degree}")
    x = np.asarray(x, dtype=float)
    return comb(degree, index) * (1.0 - x) ** (degree - index) * x ** index


@dataclass(frozen=True)
class ControlLattice:
    """Uniform Bezier control grid over an axis-aligned box.

    Control point (i, j, k) rests at lo + (i/l, j/m, k/n) * (hi - lo). Flat
    control index a = (i*(m+1) + j)*(n+1) + k everywhere in this package.
    """

    degrees: tuple  # (l, m, n)
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float)
        hi = np.asarray(self.hi, dtype=float)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "degrees", tuple(int(d) for d in self.degrees))
        if len(self.degrees) != 3 or any(d < 1 for d in self.degrees):
            raise ValueError("degrees must be three integers >= 1")
        if lo.shape != (3,) or hi.shape != (3,) or not (hi > lo).all():
            raise ValueError("lattice domain must be a box with positive volume")

    @property
    def num_controls(self):
        l, m, n = self.degrees
        return (l + 1) * (m + 1) * (n + 1)

    def control_indices(self):
        """(C, 3) integer (i, j, k) grid in flat order."""
        l, m, n = self.degrees
        grid = np.mgrid[0 : l + 1, 0 : m + 1, 0 : n + 1]
        return grid.reshape(3, -1).T

    def rest_positions(self):
        ijk = self.control_indices().astype(float)
        frac = ijk / np.array(self.degrees, dtype=float)
        return self.lo + frac * (self.hi - self.lo)


def lattice_for_cloud(pc, degrees=DEFAULT_DEGREES, pad=DEFAULT_DOMAIN_PAD):
    """Lattice over the cloud's bounding box padded per side by `pad` of its size."""
    pts = as_points(pc)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    size = hi - lo
    margin = pad * np.where(size > 0, size, 1.0)
    return ControlLattice(degrees=degrees, lo=lo - margin, hi=hi + margin)


@dataclass(frozen=True)
class WeightTensor:
    """Per-point Bernstein weights over the lattice's control points.

    weights[a, c] = B_{l,i}(u_a) B_{m,j}(v_a) B_{n,k}(w_a) for flat control
    index c = (i, j, k); rows sum to 1. uvw stores the (clamped) normalized
    coordinates; clamped_count how many points fell outside the domain.
    """

    weights: np.ndarray  # (A, C)
    uvw: np.ndarray      # (A, 3) in [0, 1]
    clamped_count: int


def compute_weights(lattice, pc, check_linear_precision=True):
    """Bernstein weight matrix of the cloud against the lattice.

    Points outside the domain are clamped to the [0,1]^3 coordinate cube and
    counted. With `check_linear_precision` the identity-reproduction property
    (W @ rest_positions == clamped points) is verified to 1e-9 of the domain
    size at construction.
    """
    pts = as_points(pc)
    size = lattice.hi - lattice.lo
    uvw_raw = (pts - lattice.lo) / size
    outside = (uvw_raw < 0.0) | (uvw_raw > 1.0)
    clamped_count = int(outside.any(axis=1).sum())
    uvw = np.clip(uvw_raw, 0.0, 1.0)

    l, m, n = lattice.degrees
    bu = np.stack([bernstein(l, i, uvw[:, 0]) for i in range(l + 1)], axis=1)
    bv = np.stack([bernstein(m, j, uvw[:, 1]) for j in range(m + 1)], axis=1)
    bw = np.stack([bernstein(n, k, uvw[:, 2]) for k in range(n + 1)], axis=1)
    weights = np.einsum("ai,aj,ak->aijk", bu, bv, bw).reshape(len(pts), -1)

    if check_linear_precision:
        recon = weights @ lattice.rest_positions()
        clamped_pts = lattice.lo + uvw * size
        err = np.abs(recon - clamped_pts).max()
        if err > 1e-9 * max(np.abs(size).max(), 1.0):
            raise AssertionError(f"linear precision violated: max error {err:g}")
    return WeightTensor(weights=weights, uvw=uvw, clamped_count=clamped_count)


def deform(lattice, offsets, pc):
    """Deform a point cloud by per-control-point offsets: p + W @ offsets."""
    offsets = _check_offsets(lattice, offsets)
    pts = as_points(pc)
    wt = compute_weights(lattice, pts, check_linear_precision=False)
    return pts + wt.weights @ offsets


def apply_field(wt: WeightTensor, pc, offsets):
    """Deform with a precomputed weight tensor (hot path for optimizers)."""
    return as_points(pc) + wt.weights @ np.asarray(offsets, dtype=float)


def backprop_offsets(wt: WeightTensor, grad_points):
    """Pull per-point loss gradients back to per-control-point offset gradients.

    dL/d offset_c = sum_a weights[a, c] * dL/d p'_a, each axis independently.
    """
    g = np.asarray(grad_points, dtype=float)
    if g.shape != (wt.weights.shape[0], 3):
        raise ValueError(f"gradient shape {g.shape} does not match {wt.weights.shape[0]} points")
    return wt.weights.T @ g


def _check_offsets(lattice, offsets):
    offsets = np.asarray(offsets, dtype=float)
    if offsets.shape != (lattice.num_controls, 3):
        raise ValueError(
            f"offsets shape {offsets.shape} does not match lattice with {lattice.num_controls} control points"
        )
    if not np.isfinite(offsets).all():
        raise ValueError("offsets contain non-finite components")
    return offsets
