import numpy as np
import pytest
from conftest import random_rigid
from scipy.spatial import cKDTree

from rigidreg3d import surface as sf
from rigidreg3d import transform as tf
from rigidreg3d.errors import EmptySurface


def _shell_mask(shape=(6, 40, 40), r_out=14, r_in=8):
    nz, ny, nx = shape
    yy, xx = np.mgrid[:ny, :nx]
    r = np.hypot(yy - ny / 2 + 0.5, xx - nx / 2 + 0.5)
    return np.broadcast_to((r <= r_out) & (r >= r_in), shape).copy()


def _outline_oracle(filled):
    """Voxels of ``filled`` with at least one 8-neighbour (in-slice) outside it."""
    nz, ny, nx = filled.shape
    out = np.zeros_like(filled)
    for z in range(nz):
        for y in range(ny):
            for x in range(nx):
                if not filled[z, y, x]:
                    continue
                for dy in (-1, 0, 1):
                    for dx in (-1, 0, 1):
                        yy, xx = y + dy, x + dx
                        if not (0 <= yy < ny and 0 <= xx < nx) or not filled[z, yy, xx]:
                            out[z, y, x] = True
    return out


def test_cylinder_shell_point_count_matches_oracle():
    m = _shell_mask()
    nz, ny, nx = m.shape
    yy, xx = np.mgrid[:ny, :nx]
    disk = np.hypot(yy - ny / 2 + 0.5, xx - nx / 2 + 0.5) <= 14
    filled = np.broadcast_to(disk, m.shape)
    pc = sf.extract_surface(m, closing_radius=2)
    assert len(pc) == int(_outline_oracle(filled).sum())
    # the marrow cavity is filled, so no inner contour survives
    r = np.hypot(pc.points[:, 1] - ny / 2 + 0.5, pc.points[:, 0] - nx / 2 + 0.5)
    assert r.min() > 12


def test_extract_surface_empty():
    with pytest.raises(EmptySurface):
        sf.extract_surface(np.zeros((3, 5, 5), bool))


def test_points_are_xyz_order():
    m = np.zeros((3, 4, 5), bool)
    m[1, 2, 3] = True
    pc = sf.extract_surface(m, 0)
    assert pc.points.tolist() == [[3.0, 2.0, 1.0]]


def test_normals_of_plane(rng):
    xy = rng.uniform(-10, 10, size=(400, 2))
    pts = np.column_stack([xy, np.full(400, 3.0)])
    extra = np.array([[0.0, 0.0, -50.0]])  # pulls the centroid below the plane
    pc = sf.estimate_normals(sf.PointCloud(np.vstack([pts, extra])), 10)
    np.testing.assert_allclose(np.abs(pc.normals[:400, 2]), 1.0, atol=1e-9)
    assert np.all(pc.normals[:400, 2] > 0)  # oriented away from the centroid


def test_normals_of_sphere_point_outward(rng):
    v = rng.normal(size=(3000, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    pc = sf.estimate_normals(sf.PointCloud(v * 20 + 5), 15)
    cos = np.einsum("ij,ij->i", pc.normals, v)
    assert np.median(cos) > 0.99
    assert (cos > 0).all()


def test_normals_flag_collinear_neighbourhoods():
    pts = np.column_stack([np.arange(20.0), np.zeros(20), np.zeros(20)])
    pc = sf.estimate_normals(sf.PointCloud(pts), 5)
    assert pc.degenerate.all()
    np.testing.assert_array_equal(pc.normals, np.tile([0.0, 0.0, 1.0], (20, 1)))


def test_normals_too_few_points():
    with pytest.raises(ValueError):
        sf.estimate_normals(sf.PointCloud(np.zeros((4, 3))), 10)


def test_stable_knn_breaks_ties_by_index():
    pts = np.array([[0, 0, 0], [1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [5, 5, 5]], float)
    nbr = sf.stable_knn(cKDTree(pts), pts[:1], 4)
    assert nbr.tolist() == [[0, 1, 2, 3]]


def test_normals_rigid_equivariant(rng):
    m = _shell_mask((8, 40, 40))
    pc = sf.extract_surface(m)
    a = sf.estimate_normals(pc, 20)
    T = random_rigid(rng)
    b = sf.estimate_normals(pc.transformed(T), 20)
    np.testing.assert_allclose(b.normals, a.normals @ T[:3, :3].T, atol=1e-8)


def test_center_align():
    a = sf.PointCloud(np.array([[0, 0, 0], [2, 0, 0]], float))
    b = sf.PointCloud(np.array([[10, 10, 10], [10, 12, 10]], float))
    T = sf.center_align(a, b)
    np.testing.assert_allclose(a.transformed(T).centroid, b.centroid)


def test_voxel_downsample_cell_means():
    pts = np.array([[0.1, 0.1, 0.1], [0.9, 0.9, 0.9], [2.5, 0.0, 0.0]])
    out = sf.voxel_downsample(sf.PointCloud(pts), 2.0)
    np.testing.assert_allclose(out.points, [[0.5, 0.5, 0.5], [2.5, 0.0, 0.0]])
    assert len(sf.voxel_downsample(sf.PointCloud(pts), 1.0)) == 3


def test_transformed_rotates_normals(rng):
    pc = sf.PointCloud(rng.random((5, 3)), np.tile([1.0, 0.0, 0.0], (5, 1)))
    out = pc.transformed(tf.rotation_z(90) @ tf.translation(1, 2, 3))
    np.testing.assert_allclose(out.normals, np.tile([0.0, 1.0, 0.0], (5, 1)), atol=1e-15)


def test_xyz_roundtrip(tmp_path, rng):
    pc = sf.PointCloud(rng.random((7, 3)), rng.random((7, 3)))
    sf.save_xyz(pc, tmp_path / "c.xyz")
    back = sf.load_xyz(tmp_path / "c.xyz")
    assert np.array_equal(back.points, pc.points) and np.array_equal(back.normals, pc.normals)
