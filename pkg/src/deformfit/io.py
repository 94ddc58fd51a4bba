"""File formats: OBJ meshes, XYZ/PLY point clouds, voxel grids, deformation
fields, encoder parameters. All writers emit 9 significant digits."""

import os

import numpy as np

from .geometry import TriangleMesh, VoxelGrid, as_points


class MeshParseError(ValueError):
    pass


class UnsupportedFormatError(ValueError):
    pass


def _fmt(x):
    return format(float(x), ".9g")


def load_mesh(path):
    """Load a triangle mesh from an ASCII OBJ file (v/f directives only).

    Faces with more than 3 indices are triangulated by a fan split. Index
    references like "3/1/2" keep only the vertex index. Raises MeshParseError
    naming the offending line, or UnsupportedFormatError for other extensions.
    """
    if not os.path.exists(path):
        raise FileNotFoundError(f"no such file: {path}")
    if not str(path).lower().endswith(".obj"):
        raise UnsupportedFormatError(f"unsupported mesh format: {path}")
    vertices = []
    faces = []  # (lineno, [i0, i1, i2]) with 0-based indices
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            tokens = line.split()
            if tokens[0] == "v":
                if len(tokens) < 4:
                    raise MeshParseError(f"line {lineno}: vertex needs 3 coordinates")
                try:
                    vertices.append([float(t) for t in tokens[1:4]])
                except ValueError:
                    raise MeshParseError(f"line {lineno}: bad vertex coordinate") from None
            elif tokens[0] == "f":
                if len(tokens) < 4:
                    raise MeshParseError(f"line {lineno}: face needs at least 3 indices")
                idx = []
                for t in tokens[1:]:
                    head = t.split("/", 1)[0]
                    try:
                        i = int(head)
                    except ValueError:
                        raise MeshParseError(f"line {lineno}: bad face index {t!r}") from None
                    if i < 1:
                        raise MeshParseError(f"line {lineno}: face indices are 1-based, got {i}")
                    idx.append(i - 1)
                for a, b in zip(idx[1:-1], idx[2:]):
                    faces.append((lineno, [idx[0], a, b]))
            # other directives (vn, vt, o, g, s, mtllib, usemtl, ...) ignored
    for lineno, tri in faces:
        for i in tri:
            if i >= len(vertices):
                raise MeshParseError(f"line {lineno}: face index {i + 1} exceeds vertex count {len(vertices)}")
        if len(set(tri)) < 3:
            raise MeshParseError(f"line {lineno}: degenerate face with repeated vertex")
    if not faces:
        raise MeshParseError("no faces found")
    return TriangleMesh(vertices=np.array(vertices), faces=np.array([t for _, t in faces]))


def read_points(path):
    """Read a point cloud from a file: ASCII PLY if it starts with 'ply',
    otherwise whitespace 'x y z' text."""
    if not os.path.exists(path):
        raise FileNotFoundError(f"no such file: {path}")
    with open(path) as fh:
        first = fh.readline()
    if first.strip().lower() == "ply":
        return _read_ply(path)
    return _read_xyz(path)


def _read_xyz(path):
    rows = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) < 3:
                raise ValueError(f"{path}: line {lineno}: expected 'x y z'")
            try:
                rows.append([float(p) for p in parts[:3]])
            except ValueError:
                raise ValueError(f"{path}: line {lineno}: bad coordinate") from None
    if not rows:
        raise ValueError(f"{path}: no points")
    return np.array(rows)


def _read_ply(path):
    with open(path) as fh:
        magic = fh.readline().strip().lower()
        if magic != "ply":
            raise ValueError(f"{path}: not a PLY file")
        n_vertices = None
        props = []
        in_vertex_element = False
        for raw in fh:
            tokens = raw.split()
            if not tokens:
                continue
            if tokens[0] == "format":
                if tokens[1] != "ascii":
                    raise UnsupportedFormatError(f"{path}: only ASCII PLY is supported")
            elif tokens[0] == "element":
                in_vertex_element = tokens[1] == "vertex"
                if in_vertex_element:
                    n_vertices = int(tokens[2])
            elif tokens[0] == "property" and in_vertex_element:
                props.append(tokens[-1])
            elif tokens[0] == "end_header":
                break
        if n_vertices is None:
            raise ValueError(f"{path}: missing vertex element")
        try:
            cols = [props.index(c) for c in ("x", "y", "z")]
        except ValueError:
            raise ValueError(f"{path}: vertex element lacks x,y,z properties") from None
        pts = np.empty((n_vertices, 3))
        for i in range(n_vertices):
            parts = fh.readline().split()
            if len(parts) < len(props):
                raise ValueError(f"{path}: truncated vertex data at row {i}")
            pts[i] = [float(parts[c]) for c in cols]
    return pts


def write_points_xyz(path, pc):
    pts = as_points(pc)
    with open(path, "w") as fh:
        for p in pts:
            fh.write(f"{_fmt(p[0])} {_fmt(p[1])} {_fmt(p[2])}\n")


def write_points_ply(path, pc):
    pts = as_points(pc)
    with open(path, "w") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"element vertex {len(pts)}\n")
        fh.write("property float x\nproperty float y\nproperty float z\n")
        fh.write("end_header\n")
        for p in pts:
            fh.write(f"{_fmt(p[0])} {_fmt(p[1])} {_fmt(p[2])}\n")


def write_points(path, pc):
    if str(path).lower().endswith(".ply"):
        write_points_ply(path, pc)
    else:
        write_points_xyz(path, pc)


def write_voxel_grid(path, grid: VoxelGrid):
    """Header 'R ax ay az bx by bz' then R^3 0/1 characters, x-fastest."""
    flat = grid.occupancy.flatten(order="F")  # x varies fastest
    with open(path, "w") as fh:
        fh.write(f"{grid.resolution} " + " ".join(_fmt(v) for v in np.r_[grid.lo, grid.hi]) + "\n")
        fh.write("".join("1" if b else "0" for b in flat) + "\n")


def read_voxel_grid(path):
    with open(path) as fh:
        header = fh.readline().split()
        r = int(header[0])
        box = np.array([float(v) for v in header[1:7]])
        bits = fh.readline().strip()
    if len(bits) != r ** 3:
        raise ValueError(f"{path}: expected {r ** 3} occupancy characters, got {len(bits)}")
    occ = np.array([c == "1" for c in bits]).reshape((r, r, r), order="F")
    return VoxelGrid(resolution=r, occupancy=occ, lo=box[:3], hi=box[3:])


def write_field(path, degrees, offsets):
    """Header 'l m n' then one 'i j k dx dy dz' line per control point, in the
    flat (i-major, k-fastest) control-point order used throughout."""
    l, m, n = degrees
    offsets = np.asarray(offsets, dtype=float)
    expected = (l + 1) * (m + 1) * (n + 1)
    if offsets.shape != (expected, 3):
        raise ValueError(f"offsets shape {offsets.shape} does not match degrees {degrees}")
    with open(path, "w") as fh:
        fh.write(f"{l} {m} {n}\n")
        a = 0
        for i in range(l + 1):
            for j in range(m + 1):
                for k in range(n + 1):
                    d = offsets[a]
                    fh.write(f"{i} {j} {k} {_fmt(d[0])} {_fmt(d[1])} {_fmt(d[2])}\n")
                    a += 1


def read_field(path):
    with open(path) as fh:
        l, m, n = (int(t) for t in fh.readline().split())
        count = (l + 1) * (m + 1) * (n + 1)
        offsets = np.zeros((count, 3))
        seen = np.zeros(count, dtype=bool)
        for raw in fh:
            tokens = raw.split()
            if not tokens:
                continue
            i, j, k = int(tokens[0]), int(tokens[1]), int(tokens[2])
            a = (i * (m + 1) + j) * (n + 1) + k
            offsets[a] = [float(t) for t in tokens[3:6]]
            seen[a] = True
    if not seen.all():
        raise ValueError(f"{path}: missing offsets for {int((~seen).sum())} control points")
    return (l, m, n), offsets


def write_encoder_params(path, weight, bias):
    """First line 'D D_in', then D weight rows, then one bias row."""
    weight = np.asarray(weight, dtype=float)
    bias = np.asarray(bias, dtype=float)
    d, d_in = weight.shape
    with open(path, "w") as fh:
        fh.write(f"{d} {d_in}\n")
        for row in weight:
            fh.write(" ".join(_fmt(v) for v in row) + "\n")
        fh.write(" ".join(_fmt(v) for v in bias) + "\n")


def read_encoder_params(path):
    with open(path) as fh:
        d, d_in = (int(t) for t in fh.readline().split())
        weight = np.array([[float(t) for t in fh.readline().split()] for _ in range(d)])
        bias = np.array([float(t) for t in fh.readline().split()])
    if weight.shape != (d, d_in) or bias.shape != (d,):
        raise ValueError(f"{path}: malformed encoder parameter file")
    return weight, bias
