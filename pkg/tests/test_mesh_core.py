import numpy as np
import pytest

from utils.errors import EmptyMeshError
from utils.icosphere import make_icosphere
from utils.mesh_core import (
    TriangleMesh,
    cumulative_distribution,
    denormalize_vertices,
    draw_faces,
    drop_degenerate_faces,
    normalize_mesh,
    sample_surface_uniform,
    validate_topology,
)


def test_icosahedron_topology(icosahedron):
    report = validate_topology(icosahedron)
    assert report.is_watertight
    assert report.euler_characteristic == 2
    assert report.genus == 0
    assert report.is_consistently_oriented
    assert report.is_sphere_like


def test_torus_has_genus_one(torus):
    report = validate_topology(torus)
    assert report.is_watertight
    assert report.euler_characteristic == 0
    assert report.genus == 1


def test_single_triangle_is_open():
    mesh = TriangleMesh(np.eye(3), [[0, 1, 2]])
    report = validate_topology(mesh)
    assert not report.is_watertight
    assert report.boundary_edge_count == 3
    assert report.genus is None


def test_face_index_out_of_range():
    with pytest.raises(ValueError):
        TriangleMesh(np.eye(3), [[0, 1, 3]])


def test_drop_degenerate_faces():
    vertices = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [2, 0, 0]], dtype=float)
    mesh = TriangleMesh(vertices, [[0, 1, 2], [0, 1, 3], [1, 1, 2]])
    cleaned, dropped = drop_degenerate_faces(mesh)
    assert dropped == 2
    assert cleaned.faces.tolist() == [[0, 1, 2]]


def test_normalize_unit_diagonal_and_inverse(bumpy):
    mesh, _ = bumpy
    moved = mesh.with_vertices(mesh.vertices * 7.0 + np.array([3.0, -2.0, 10.0]))
    normalized, scale, offset = normalize_mesh(moved)
    lo, hi = normalized.bounding_box()
    assert np.linalg.norm(hi - lo) == pytest.approx(1.0, abs=1e-12)
    assert np.allclose((lo + hi) / 2, 0.0, atol=1e-12)
    restored = denormalize_vertices(normalized.vertices, scale, offset)
    assert np.allclose(restored, moved.vertices, atol=1e-10)


def test_normalize_rejects_collapsed_mesh():
    mesh = TriangleMesh(np.ones((3, 3)), [[0, 1, 2]])
    with pytest.raises(EmptyMeshError):
        normalize_mesh(mesh)


def test_surface_samples_lie_on_their_faces(icosahedron):
    samples = sample_surface_uniform(icosahedron, 500, seed=3)
    assert len(samples) == 500
    assert np.all(samples.barycentric >= -1e-12)
    assert np.allclose(samples.barycentric.sum(axis=1), 1.0)
    tri = icosahedron.vertices[icosahedron.faces[samples.face_indices]]
    expected = np.einsum("nk,nkd->nd", samples.barycentric, tri)
    assert np.allclose(samples.positions, expected)
    first = samples[0]
    assert first.face_index == samples.face_indices[0]


def test_sampling_is_deterministic_per_seed(icosahedron):
    a = sample_surface_uniform(icosahedron, 100, seed=7)
    b = sample_surface_uniform(icosahedron, 100, seed=7)
    assert np.array_equal(a.positions, b.positions)
    c = sample_surface_uniform(icosahedron, 100, seed=8)
    assert not np.array_equal(a.positions, c.positions)


def test_sampling_needs_positive_count(icosahedron):
    with pytest.raises(ValueError):
        sample_surface_uniform(icosahedron, 0, seed=0)


def test_area_weighted_face_frequencies():
    # 两个面积比 1:3 的三角形
    vertices = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [3, 0, 0], [3, 1, 0], [6, 0, 0]], dtype=float)
    mesh = TriangleMesh(vertices, [[0, 1, 2], [3, 5, 4]])
    samples = sample_surface_uniform(mesh, 100_000, seed=0)
    frequency = np.bincount(samples.face_indices, minlength=2) / len(samples)
    assert frequency[0] == pytest.approx(0.25, abs=0.01)


def test_draw_faces_total_variation(rng):
    areas = make_icosphere(2).mesh.face_areas()
    cdf = cumulative_distribution(areas)
    picks = draw_faces(cdf, 1_000_000, rng)
    empirical = np.bincount(picks, minlength=len(areas)) / len(picks)
    target = areas / areas.sum()
    assert 0.5 * np.abs(empirical - target).sum() < 0.01


def test_unit_cube_scale():
    corners = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], dtype=float)
    mesh = TriangleMesh(corners, [[0, 1, 2], [4, 5, 6]])
    normalized, scale, offset = normalize_mesh(mesh)
    assert scale == pytest.approx(1 / np.sqrt(3))
    assert np.allclose(offset, 0.5)
    again, scale2, offset2 = normalize_mesh(normalized)
    assert scale2 == pytest.approx(1.0)
    assert np.allclose(offset2, 0.0, atol=1e-15)


def test_single_face_mean_barycentric():
    mesh = TriangleMesh(np.eye(3), [[0, 1, 2]])
    samples = sample_surface_uniform(mesh, 100_000, seed=1)
    assert np.allclose(samples.barycentric.mean(axis=0), 1 / 3, atol=0.01)
