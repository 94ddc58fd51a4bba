"""Synthetic fitting benchmark: primitive surface clouds, random smooth
deformation fields, and noisy targets with a known generating field."""

from dataclasses import dataclass

import numpy as np

from .ffd import ControlLattice, deform, lattice_for_cloud
from .fit import FitConfig


def sphere_cloud(n, seed, radii=(1.0, 1.0, 1.0), center=(0.0, 0.0, 0.0)):
    """Uniform sample of an (optionally anisotropically scaled) unit sphere."""
    rng = np.random.default_rng(seed)
    v = rng.normal(size=(n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v * np.asarray(radii) + np.asarray(center)


def cylinder_cloud(n, seed, radius=0.6, height=1.6):
    """Uniform sample of a cylinder's lateral surface plus both caps."""
    rng = np.random.default_rng(seed)
    side_area = 2 * np.pi * radius * height
    cap_area = np.pi * radius ** 2
    p_side = side_area / (side_area + 2 * cap_area)
    on_side = rng.random(n) < p_side
    theta = rng.random(n) * 2 * np.pi
    pts = np.empty((n, 3))
    y = (rng.random(n) - 0.5) * height
    r = radius * np.sqrt(rng.random(n))
    pts[:, 0] = np.where(on_side, radius * np.cos(theta), r * np.cos(theta))
    pts[:, 2] = np.where(on_side, radius * np.sin(theta), r * np.sin(theta))
    cap_y = np.where(rng.random(n) < 0.5, -height / 2, height / 2)
    pts[:, 1] = np.where(on_side, y, cap_y)
    return pts


def box_cloud(n, seed, size=(1.2, 0.8, 1.0)):
    """Uniform sample of an axis-aligned box surface centered at the origin."""
    rng = np.random.default_rng(seed)
    sx, sy, sz = size
    areas = np.array([sy * sz, sy * sz, sx * sz, sx * sz, sx * sy, sx * sy])
    face = rng.choice(6, size=n, p=areas / areas.sum())
    uv = rng.random((n, 2)) - 0.5
    pts = np.empty((n, 3))
    half = np.asarray(size) / 2
    for f in range(6):
        mask = face == f
        axis = f // 2
        sign = 1.0 if f % 2 else -1.0
        others = [a for a in range(3) if a != axis]
        pts[mask, axis] = sign * half[axis]
        pts[mask, others[0]] = uv[mask, 0] * size[others[0]]
        pts[mask, others[1]] = uv[mask, 1] * size[others[1]]
    return pts


PRIMITIVES = {
    "sphere": sphere_cloud,
    "cylinder": cylinder_cloud,
    "box": box_cloud,
}


def random_smooth_field(lattice: ControlLattice, seed, magnitude=0.25, smoothing_passes=2):
    """Random control-point offsets smoothed by neighbor averaging, scaled so
    the largest offset norm equals `magnitude`."""
    rng = np.random.default_rng(seed)
    l, m, n = lattice.degrees
    grid = rng.normal(size=(l + 1, m + 1, n + 1, 3))
    for _ in range(smoothing_passes):
        acc = grid.copy()
        count = np.ones(grid.shape[:3])
        for axis in range(3):
            lead = [slice(None)] * 3
            trail = [slice(None)] * 3
            lead[axis] = slice(1, None)
            trail[axis] = slice(None, -1)
            acc[tuple(lead)] += grid[tuple(trail)]
            acc[tuple(trail)] += grid[tuple(lead)]
            count[tuple(lead)] += 1
            count[tuple(trail)] += 1
        grid = acc / count[..., None]
    flat = grid.reshape(-1, 3)
    peak = np.linalg.norm(flat, axis=1).max()
    return flat * (magnitude / peak)


@dataclass(frozen=True)
class BenchmarkInstance:
    name: str
    template: np.ndarray
    target: np.ndarray
    lattice: ControlLattice
    true_field: np.ndarray


def make_instance(kind, seed, n_points=256, magnitude=0.25, noise=0.01):
    """Template = primitive sample; target = independent sample of the same
    surface under a random smooth deformation, plus Gaussian noise scaled by
    `noise` times the bounding-box diagonal."""
    sampler = PRIMITIVES[kind]
    rng = np.random.default_rng(seed)
    template = sampler(n_points, seed=int(rng.integers(1 << 31)))
    fresh = sampler(n_points, seed=int(rng.integers(1 << 31)))
    lattice = lattice_for_cloud(template)
    true_field = random_smooth_field(lattice, seed=int(rng.integers(1 << 31)), magnitude=magnitude)
    target = deform(lattice, true_field, fresh)
    diag = np.linalg.norm(target.max(axis=0) - target.min(axis=0))
    target = target + rng.normal(scale=noise * diag, size=target.shape)
    return BenchmarkInstance(name=f"{kind}-{seed}", template=template, target=target,
                             lattice=lattice, true_field=true_field)


def benchmark_instances(count, n_points=256, magnitude=0.25, noise=0.01, base_seed=0):
    kinds = list(PRIMITIVES)
    return [
        make_instance(kinds[i % len(kinds)], seed=base_seed + i, n_points=n_points,
                      magnitude=magnitude, noise=noise)
        for i in range(count)
    ]


def benchmark_config(loss="chamfer", lambda_smooth=0.05):
    """Desk-scale fitting schedule used by the synthetic benchmarks."""
    return FitConfig(loss=loss, iterations=800, lr_initial=2e-3, lr_final=2e-4,
                     lr_drop_iteration=600, lambda_smooth=lambda_smooth, lambda_l1=0.0)
