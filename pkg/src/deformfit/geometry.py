"""Core geometry: meshes, point clouds, sampling, normalization, voxelization.

Point clouds are plain (N, 3) float64 arrays throughout the package; use
``as_points`` to validate external input.
"""

from dataclasses import dataclass

import numpy as np

# Evaluation distances are reported in units where the working grid edge is 10
# and the normalized hemisphere radius is 1.
GRID_EDGE_UNITS = 10.0


class DegenerateCloudError(ValueError):
    """All points coincide, so a normalization scale cannot be defined."""


def as_points(pts):
    """Validate and return a point cloud as an (N, 3) float array, N >= 1."""
    a = np.asarray(pts, dtype=float)
    if a.ndim != 2 or a.shape[1] != 3:
        raise ValueError(f"point cloud must have shape (N, 3), got {a.shape}")
    if a.shape[0] < 1:
        raise ValueError("point cloud must contain at least one point")
    if not np.isfinite(a).all():
        raise ValueError("point cloud contains non-finite coordinates")
    return a


@dataclass(frozen=True)
class TriangleMesh:
    vertices: np.ndarray  # (V, 3) float
    faces: np.ndarray     # (F, 3) int

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        f = np.asarray(self.faces, dtype=int)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)
        if v.ndim != 2 or v.shape[1] != 3:
            raise ValueError("vertices must have shape (V, 3)")
        if f.ndim != 2 or f.shape[1] != 3:
            raise ValueError("faces must have shape (F, 3)")
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise ValueError("face index out of range")
        if f.size:
            degen = (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])
            if degen.any():
                raise ValueError(f"degenerate face with repeated vertex at row {int(np.argmax(degen))}")

    def triangle_areas(self):
        tri = self.vertices[self.faces]
        cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        return 0.5 * np.linalg.norm(cross, axis=1)


@dataclass(frozen=True)
class VoxelGrid:
    resolution: int
    occupancy: np.ndarray  # (R, R, R) bool, indexed [ix, iy, iz]
    lo: np.ndarray         # extent min corner (3,)
    hi: np.ndarray         # extent max corner (3,)

    def __post_init__(self):
        occ = np.asarray(self.occupancy, dtype=bool)
        object.__setattr__(self, "occupancy", occ)
        object.__setattr__(self, "lo", np.asarray(self.lo, dtype=float))
        object.__setattr__(self, "hi", np.asarray(self.hi, dtype=float))
        r = self.resolution
        if r < 1:
            raise ValueError("resolution must be >= 1")
        if occ.shape != (r, r, r):
            raise ValueError(f"occupancy shape {occ.shape} does not match resolution {r}")


@dataclass(frozen=True)
class NormalizationTransform:
    """Translation followed by a uniform scale: q = scale * (p + translation)."""

    scale: float
    translation: np.ndarray

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError("scale must be positive")
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float))

    def apply(self, pts):
        return (as_points(pts) + self.translation) * self.scale

    def invert(self, pts):
        return as_points(pts) / self.scale - self.translation


def sample_surface(mesh, n, seed):
    """Draw n points uniformly from the mesh surface (area-weighted triangles).

    Triangle choice probability is proportional to area; within a triangle the
    point is uniform in barycentric coordinates. Deterministic per seed.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    areas = mesh.triangle_areas()
    total = areas.sum()
    if not total > 0:
        raise ValueError("mesh has zero total surface area")
    rng = np.random.default_rng(seed)
    face_idx = rng.choice(len(areas), size=n, p=areas / total)
    tri = mesh.vertices[mesh.faces[face_idx]]
    r1, r2 = rng.random(n), rng.random(n)
    s = np.sqrt(r1)
    w0 = 1.0 - s
    w1 = s * (1.0 - r2)
    w2 = s * r2
    return w0[:, None] * tri[:, 0] + w1[:, None] * tri[:, 1] + w2[:, None] * tri[:, 2]


def normalize_for_eval(pc):
    """Ground-plane align and scale a cloud into the unit hemisphere.

    Translates so min-y sits at 0 and the centroid x,z at 0, then scales
    uniformly so the farthest point has norm 1. Returns the normalized cloud
    and the invertible transform.
    """
    pts = as_points(pc)
    centroid = pts.mean(axis=0)
    translation = np.array([-centroid[0], -pts[:, 1].min(), -centroid[2]])
    shifted = pts + translation
    radius = np.linalg.norm(shifted, axis=1).max()
    if radius <= 0:
        raise DegenerateCloudError("all points coincide; normalization scale undefined")
    tf = NormalizationTransform(scale=1.0 / radius, translation=translation)
    return shifted / radius, tf


def resample(pc, n, seed):
    """Resample to exactly n points: without replacement when n <= count, with
    replacement otherwise. Deterministic per seed."""
    pts = as_points(pc)
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    count = len(pts)
    idx = rng.choice(count, size=n, replace=n > count)
    return pts[idx]


def default_extent(pc, pad=0.02):
    """Axis-aligned bounding box of the cloud padded per side by `pad` of its size."""
    pts = as_points(pc)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    size = hi - lo
    margin = pad * np.where(size > 0, size, 1.0)
    return lo - margin, hi + margin


def voxelize(pc, resolution, lo, hi):
    """Occupancy grid over [lo, hi]: a cell is set iff >= 1 point falls in its
    half-open sub-box; points outside the extent are clamped to boundary cells."""
    pts = as_points(pc)
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if resolution < 1:
        raise ValueError("resolution must be >= 1")
    if not (hi > lo).all():
        raise ValueError("extent must have positive volume")
    cells = np.floor((pts - lo) / (hi - lo) * resolution).astype(int)
    cells = np.clip(cells, 0, resolution - 1)
    occ = np.zeros((resolution,) * 3, dtype=bool)
    occ[cells[:, 0], cells[:, 1], cells[:, 2]] = True
    return VoxelGrid(resolution=resolution, occupancy=occ, lo=lo, hi=hi)
