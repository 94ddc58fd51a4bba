import numpy as np
import pytest

from deformfit import io
from deformfit.geometry import VoxelGrid


@pytest.fixture
def cloud():
    return np.random.default_rng(0).normal(size=(37, 3))


def test_xyz_round_trip(tmp_path, cloud):
    path = tmp_path / "pc.xyz"
    io.write_points_xyz(path, cloud)
    back = io.read_points(path)
    np.testing.assert_allclose(back, cloud, rtol=1e-8)


def test_ply_round_trip(tmp_path, cloud):
    path = tmp_path / "pc.ply"
    io.write_points_ply(path, cloud)
    back = io.read_points(path)
    np.testing.assert_allclose(back, cloud, rtol=1e-8)


def test_ply_with_extra_properties(tmp_path):
    text = (
        "ply\nformat ascii 1.0\nelement vertex 2\n"
        "property float red\nproperty float x\nproperty float y\nproperty float z\n"
        "end_header\n9 0 1 2\n9 3 4 5\n"
    )
    path = tmp_path / "c.ply"
    path.write_text(text)
    np.testing.assert_array_equal(io.read_points(path), [[0, 1, 2], [3, 4, 5]])


def test_xyz_bad_line_reports_number(tmp_path):
    path = tmp_path / "bad.xyz"
    path.write_text("0 0 0\n1 oops 2\n")
    with pytest.raises(ValueError, match="line 2"):
        io.read_points(path)


def test_read_points_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        io.read_points(tmp_path / "absent.xyz")


def test_writer_nine_significant_digits(tmp_path):
    path = tmp_path / "p.xyz"
    io.write_points_xyz(path, np.array([[1 / 3, 1e-7, 123456.789]]))
    line = path.read_text().strip()
    assert line == "0.333333333 1e-07 123456.789"


def test_voxel_grid_round_trip(tmp_path):
    occ = np.zeros((3, 3, 3), dtype=bool)
    occ[0, 1, 2] = occ[2, 0, 0] = True
    grid = VoxelGrid(resolution=3, occupancy=occ, lo=np.zeros(3), hi=np.ones(3))
    path = tmp_path / "grid.vox"
    io.write_voxel_grid(path, grid)
    back = io.read_voxel_grid(path)
    np.testing.assert_array_equal(back.occupancy, occ)
    header, bits = path.read_text().splitlines()
    assert header.split()[0] == "3"
    assert len(bits) == 27
    # x-fastest: cell (2,0,0) is character index 2
    assert bits[2] == "1"


def test_field_round_trip(tmp_path):
    degrees = (2, 1, 3)
    count = 3 * 2 * 4
    offsets = np.random.default_rng(1).normal(size=(count, 3))
    path = tmp_path / "field.txt"
    io.write_field(path, degrees, offsets)
    deg_back, off_back = io.read_field(path)
    assert deg_back == degrees
    np.testing.assert_allclose(off_back, offsets, rtol=1e-8)
    assert path.read_text().splitlines()[0] == "2 1 3"


def test_field_shape_mismatch(tmp_path):
    with pytest.raises(ValueError):
        io.write_field(tmp_path / "f.txt", (1, 1, 1), np.zeros((5, 3)))


def test_encoder_params_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    weight = rng.normal(size=(4, 7))
    bias = rng.normal(size=4)
    path = tmp_path / "params.txt"
    io.write_encoder_params(path, weight, bias)
    w_back, b_back = io.read_encoder_params(path)
    np.testing.assert_allclose(w_back, weight, rtol=1e-8)
    np.testing.assert_allclose(b_back, bias, rtol=1e-8)
