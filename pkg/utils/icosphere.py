"""
单位二十面体与中点细分球面
"""

from dataclasses import dataclass

import numpy as np

from utils.mesh_core import TriangleMesh

_R = (1.0 + np.sqrt(5.0)) / 2.0

ICOSAHEDRON_VERTICES = np.array([
    [-1.0, _R, 0.0],
    [1.0, _R, 0.0],
    [-1.0, -_R, 0.0],
    [1.0, -_R, 0.0],
    [0.0, -1.0, _R],
    [0.0, 1.0, _R],
    [0.0, -1.0, -_R],
    [0.0, 1.0, -_R],
    [_R, 0.0, -1.0],
    [_R, 0.0, 1.0],
    [-_R, 0.0, -1.0],
    [-_R, 0.0, 1.0],
])

# 逆时针朝外
ICOSAHEDRON_FACES = np.array([
    [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
    [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
    [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
    [5, 4, 9], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
])


def normalize_rows(points: np.ndarray) -> np.ndarray:
    return points / np.linalg.norm(points, axis=1, keepdims=True)


@dataclass
class Icosphere:
    """单位球面三角网格；ancestors[i] 为第 i 个面所属的二十面体面"""

    mesh: TriangleMesh
    level: int
    ancestors: np.ndarray

    @property
    def vertices(self) -> np.ndarray:
        return self.mesh.vertices

    @property
    def faces(self) -> np.ndarray:
        return self.mesh.faces

    @staticmethod
    def expected_counts(level: int):
        """未细化 k 级球面的 (顶点数, 面数)"""
        return 10 * 4 ** level + 2, 20 * 4 ** level


def midpoint_subdivide(vertices: np.ndarray, faces: np.ndarray):
    """
    1 分 4 中点细分，新顶点投影回单位球；共享边的中点只生成一次

    Returns:
        (新顶点, 新面)，新面按 [原面0 的 4 个子面, 原面1 的 4 个子面, ...] 排列
    """
    edges = np.sort(faces[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
    unique, inverse = np.unique(edges, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    midpoints = normalize_rows((vertices[unique[:, 0]] + vertices[unique[:, 1]]) / 2.0)
    new_vertices = np.vstack([vertices, midpoints])

    mid = inverse.reshape(-1, 3) + len(vertices)
    m01, m12, m20 = mid[:, 0], mid[:, 1], mid[:, 2]
    v0, v1, v2 = faces[:, 0], faces[:, 1], faces[:, 2]
    children = np.stack([
        np.stack([v0, m01, m20], axis=1),
        np.stack([v1, m12, m01], axis=1),
        np.stack([v2, m20, m12], axis=1),
        np.stack([m01, m12, m20], axis=1),
    ], axis=1)
    return new_vertices, children.reshape(-1, 3)


def make_icosphere(level: int) -> Icosphere:
    """
    生成 level 级单位球面：二十面体经 level 次 1 分 4 细分

    Args:
        level: 细分级数 k >= 0

    Returns:
        Icosphere: 顶点 10·4^k+2，面 20·4^k
    """
    if level < 0:
        raise ValueError("细分级数必须 >= 0")
    vertices = normalize_rows(ICOSAHEDRON_VERTICES)
    faces = ICOSAHEDRON_FACES.copy()
    ancestors = np.arange(len(faces))
    for _ in range(level):
        vertices, faces = midpoint_subdivide(vertices, faces)
        ancestors = np.repeat(ancestors, 4)
    return Icosphere(TriangleMesh(vertices, faces), level, ancestors)


def icosahedron() -> TriangleMesh:
    return make_icosphere(0).mesh
