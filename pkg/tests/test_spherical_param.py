import numpy as np
import pytest

from utils.errors import BijectivityError, ConnectivityMismatchError, ConsistencyError, TopologyError
from utils.icosphere import make_icosphere
from utils.mesh_core import TriangleMesh, sample_surface_uniform, validate_topology
from utils.settings import ParameterizationOptions
from utils.spherical_param import (
    ParameterizedShape,
    SphereLocator,
    build_shape,
    check_bijectivity,
    correspond,
    correspond_batch,
    import_parameterization,
    laplacian_smooth,
    locate_direction,
    locate_directions,
    spherical_parameterize,
)


def test_convex_mesh_embeds_directly(icosahedron):
    scaled = icosahedron.with_vertices(icosahedron.vertices * 3.0)
    sphere = spherical_parameterize(scaled)
    assert np.allclose(sphere.vertices, icosahedron.vertices)
    assert check_bijectivity(sphere).ok


def test_noisy_icosphere_is_fold_free(rng):
    base = make_icosphere(3).mesh
    noisy = base.with_vertices(base.vertices * rng.uniform(0.9, 1.1, size=(base.vertex_count, 1)))
    sphere = spherical_parameterize(noisy, ParameterizationOptions(max_iterations=500))
    assert np.array_equal(sphere.faces, noisy.faces)
    assert np.allclose(np.linalg.norm(sphere.vertices, axis=1), 1.0, atol=1e-6)
    report = check_bijectivity(sphere)
    assert report.ok
    assert report.flipped_faces == []


def test_torus_is_rejected(torus):
    with pytest.raises(TopologyError) as info:
        spherical_parameterize(torus)
    assert "genus" in str(info.value)


def test_open_mesh_is_rejected():
    mesh = TriangleMesh(np.eye(3), [[0, 1, 2]])
    with pytest.raises(TopologyError):
        spherical_parameterize(mesh)


def test_reflected_vertex_is_flipped(icosahedron):
    vertices = icosahedron.vertices.copy()
    vertices[0] = -vertices[0]
    report = check_bijectivity(icosahedron.with_vertices(vertices))
    assert not report.ok
    assert len(report.flipped_faces) >= 1


def test_translated_sphere_excludes_origin(icosahedron):
    moved = icosahedron.with_vertices(icosahedron.vertices + np.array([2.0, 0.0, 0.0]))
    report = check_bijectivity(moved)
    assert not report.origin_inside
    assert not report.ok


def test_import_accepts_valid_parameterization(icosahedron):
    sphere = spherical_parameterize(icosahedron)
    imported = import_parameterization(icosahedron, sphere)
    assert np.allclose(imported.vertices, sphere.vertices)


def test_import_rejects_fold(icosphere3):
    mesh = icosphere3.mesh
    vertices = mesh.vertices.copy()
    a, b = mesh.faces[0, 0], mesh.faces[0, 1]
    vertices[[a, b]] = vertices[[b, a]]
    with pytest.raises(BijectivityError) as info:
        import_parameterization(mesh, mesh.with_vertices(vertices))
    assert len(info.value.flipped_faces) >= 1


def test_import_rejects_reordered_faces(icosahedron):
    candidate = TriangleMesh(icosahedron.vertices, icosahedron.faces[::-1])
    with pytest.raises(ConnectivityMismatchError):
        import_parameterization(icosahedron, candidate)


def test_smoothing_zero_iterations_is_identity(icosahedron):
    smoothed = laplacian_smooth(icosahedron, 0, 0.5)
    assert np.array_equal(smoothed.vertices, icosahedron.vertices)
    assert smoothed.faces is icosahedron.faces


def test_smoothing_icosahedron_shrinks_radially(icosahedron):
    smoothed = laplacian_smooth(icosahedron, 10, 0.5)
    radii = np.linalg.norm(smoothed.vertices, axis=1)
    assert np.allclose(radii, radii[0], rtol=1e-12)
    assert radii[0] < 1.0


def test_smoothing_flattens_high_frequency_bumps():
    base = make_icosphere(3).mesh
    x, y, z = base.vertices.T
    theta = np.arctan2(y, x)
    sin_phi = np.sqrt(np.clip(1.0 - z * z, 0.0, 1.0))
    bump = 0.05 * np.sin(11 * theta) * sin_phi ** 4
    bumpy = base.with_vertices(base.vertices * (1.0 + bump)[:, None])

    smoothed = laplacian_smooth(bumpy, 20, 0.5)
    reference = laplacian_smooth(base, 20, 0.5)
    # 平滑是线性的：与同样平滑后的球面之差即残留的凸起
    residual = np.linalg.norm(smoothed.vertices - reference.vertices, axis=1)
    assert residual.max() * 5 <= np.abs(bump).max()
    assert validate_topology(smoothed).euler_characteristic == 2


def test_locate_vertex_and_centroid(icosphere3):
    sphere = icosphere3.mesh
    locator = SphereLocator.build(sphere)
    face, bary = locate_direction(locator, sphere.vertices[5])
    assert np.max(bary) == pytest.approx(1.0, abs=1e-9)
    centroid = sphere.face_centroids()[42]
    face, bary = locate_direction(locator, centroid / np.linalg.norm(centroid))
    assert face == 42
    assert np.allclose(bary, 1.0 / 3.0, atol=1e-9)


def test_locate_round_trip(bumpy):
    mesh, sphere = bumpy
    locator = SphereLocator.build(sphere)
    samples = sample_surface_uniform(sphere, 10_000, seed=5)
    interior = np.all(samples.barycentric > 0.01, axis=1)
    directions = samples.positions / np.linalg.norm(samples.positions, axis=1, keepdims=True)
    faces, bary = locate_directions(locator, directions)
    assert np.array_equal(faces[interior], samples.face_indices[interior])
    shape = build_shape(mesh, sphere, 0, 0.5)
    recovered = correspond_batch(shape, "sphere", faces, bary)
    recovered /= np.linalg.norm(recovered, axis=1, keepdims=True)
    assert np.allclose(recovered[interior], directions[interior], atol=1e-5)


def test_locate_without_enclosing_sphere_fails(icosahedron):
    moved = icosahedron.with_vertices(icosahedron.vertices + np.array([3.0, 0.0, 0.0]))
    locator = SphereLocator.build(moved)
    with pytest.raises(ConsistencyError):
        locate_directions(locator, np.array([[-1.0, 0.0, 0.0]]))


def test_correspond_is_barycentric(bumpy):
    mesh, sphere = bumpy
    shape = build_shape(mesh, sphere, 5, 0.5)
    face = 17
    corner = correspond(shape, "original", face, [1.0, 0.0, 0.0])
    assert np.allclose(corner, mesh.vertices[mesh.faces[face, 0]])
    center = correspond(shape, "coarse", face, [1 / 3, 1 / 3, 1 / 3])
    assert np.allclose(center, shape.coarse.vertices[mesh.faces[face]].mean(axis=0))
    b1, b2 = np.array([0.2, 0.3, 0.5]), np.array([0.6, 0.1, 0.3])
    mixed = correspond(shape, "original", face, 0.5 * b1 + 0.5 * b2)
    halves = 0.5 * correspond(shape, "original", face, b1) + 0.5 * correspond(shape, "original", face, b2)
    assert np.allclose(mixed, halves)


def test_shape_rejects_mismatched_connectivity(bumpy):
    mesh, sphere = bumpy
    other = TriangleMesh(sphere.vertices, sphere.faces[::-1])
    with pytest.raises(ConnectivityMismatchError):
        ParameterizedShape(mesh, other, mesh)


def test_identity_shape_is_self_map(icosphere3):
    sphere = icosphere3.mesh
    shape = build_shape(sphere, sphere, 0, 0.5)
    samples = sample_surface_uniform(sphere, 1000, seed=2)
    mapped = correspond_batch(shape, "original", samples.face_indices, samples.barycentric)
    assert np.allclose(mapped, samples.positions)
