import numpy as np
import pytest

from conftest import make_bumpy_sphere, make_torus
from utils.bvh import (
    Bvh,
    closest_point,
    closest_points,
    closest_points_on_triangles,
    ray_intersect,
    ray_intersect_batch,
    ray_triangle_intersections,
)
from utils.icosphere import make_icosphere
from utils.mesh_core import TriangleMesh


def _desk_meshes():
    return [
        make_icosphere(2).mesh,
        make_bumpy_sphere(3)[0],
        make_torus(12, 10),
    ]


def _brute_closest(mesh: TriangleMesh, queries: np.ndarray) -> np.ndarray:
    tri = mesh.triangles()
    best = np.full(len(queries), np.inf)
    for face in range(mesh.face_count):
        a = np.broadcast_to(tri[face, 0], queries.shape)
        b = np.broadcast_to(tri[face, 1], queries.shape)
        c = np.broadcast_to(tri[face, 2], queries.shape)
        points = closest_points_on_triangles(queries, a, b, c)
        best = np.minimum(best, np.linalg.norm(points - queries, axis=1))
    return best


def _brute_ray_t(mesh: TriangleMesh, origins: np.ndarray, directions: np.ndarray) -> np.ndarray:
    tri = mesh.triangles()
    best = np.full(len(origins), np.inf)
    for face in range(mesh.face_count):
        a = np.broadcast_to(tri[face, 0], origins.shape)
        b = np.broadcast_to(tri[face, 1], origins.shape)
        c = np.broadcast_to(tri[face, 2], origins.shape)
        hit, t, _ = ray_triangle_intersections(origins, directions, a, b, c)
        best = np.where(hit & (t < best), t, best)
    return best


def test_query_on_vertex(icosahedron):
    bvh = Bvh.build(icosahedron)
    result = closest_point(bvh, icosahedron, icosahedron.vertices[4])
    assert result.distance == pytest.approx(0.0, abs=1e-12)
    assert np.allclose(result.point, icosahedron.vertices[4])


def test_query_above_triangle():
    mesh = TriangleMesh(np.array([[-1.0, -1.0, 0.0], [1.0, -1.0, 0.0], [0.0, 1.0, 0.0]]), [[0, 1, 2]])
    bvh = Bvh.build(mesh)
    result = closest_point(bvh, mesh, [0.0, 0.0, 2.0])
    assert np.allclose(result.point, [0.0, 0.0, 0.0])
    assert result.distance == pytest.approx(2.0)
    assert result.face_index == 0


@pytest.mark.parametrize("mesh_index", [0, 1, 2])
def test_closest_points_match_brute_force(mesh_index, rng):
    mesh = _desk_meshes()[mesh_index]
    queries = rng.uniform(-2.0, 2.0, size=(1000, 3))
    bvh = Bvh.build(mesh)
    _, faces, distances = closest_points(bvh, mesh, queries)
    assert np.allclose(distances, _brute_closest(mesh, queries), atol=1e-9, rtol=0)
    assert np.all((faces >= 0) & (faces < mesh.face_count))


def test_closest_points_independent_of_workers(rng):
    mesh = make_bumpy_sphere(3)[0]
    bvh = Bvh.build(mesh)
    queries = rng.normal(size=(20_000, 3))
    single = closest_points(bvh, mesh, queries, workers=1)
    multi = closest_points(bvh, mesh, queries, workers=4)
    for a, b in zip(single, multi):
        assert np.array_equal(a, b)


def test_ray_through_face_centroid(icosahedron):
    bvh = Bvh.build(icosahedron)
    centroid = icosahedron.face_centroids()[7]
    hit = ray_intersect(bvh, icosahedron, np.zeros(3), centroid / np.linalg.norm(centroid))
    assert hit is not None
    assert hit.face_index == 7
    assert np.allclose(hit.barycentric, 1.0 / 3.0, atol=1e-9)


def test_ray_away_from_geometry(icosahedron):
    bvh = Bvh.build(icosahedron)
    assert ray_intersect(bvh, icosahedron, np.array([5.0, 0.0, 0.0]), np.array([1.0, 0.0, 0.0])) is None


@pytest.mark.parametrize("mesh_index", [0, 1, 2])
def test_rays_match_brute_force(mesh_index, rng):
    mesh = _desk_meshes()[mesh_index]
    origins = rng.uniform(-0.5, 0.5, size=(1000, 3))
    directions = rng.normal(size=(1000, 3))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    bvh = Bvh.build(mesh)
    hit, faces, bary, t = ray_intersect_batch(bvh, mesh, origins, directions)
    expected = _brute_ray_t(mesh, origins, directions)
    assert np.array_equal(hit, np.isfinite(expected))
    assert np.allclose(t[hit], expected[hit], atol=1e-9, rtol=0)
    points = np.einsum("nk,nkd->nd", bary[hit], mesh.vertices[mesh.faces[faces[hit]]])
    assert np.allclose(points, origins[hit] + t[hit, None] * directions[hit], atol=1e-9)
