"""
三角网格核心数据结构

提供 TriangleMesh、拓扑检查、归一化以及按面积均匀的表面采样，
供参数化、训练、解码和评估各模块共用。
"""

from dataclasses import dataclass, field
from typing import Iterator, Optional, Tuple

import numpy as np

from utils.errors import EmptyMeshError
from utils.log import get_logger

logger = get_logger(__name__)

# 相对于包围盒对角线平方的退化面积阈值
DEGENERATE_AREA_RATIO = 1e-14


@dataclass
class TriangleMesh:
    """索引三角网格：顶点 (n,3) float64，面 (m,3) int64，逆时针为正向"""

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.ascontiguousarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            raise ValueError(
                f"面索引越界: 顶点数 {len(self.vertices)}, 索引范围 [{self.faces.min()}, {self.faces.max()}]"
            )

    @property
    def vertex_count(self) -> int:
        return len(self.vertices)

    @property
    def face_count(self) -> int:
        return len(self.faces)

    def triangles(self) -> np.ndarray:
        """(m,3,3) 每个面的三个顶点坐标"""
        return self.vertices[self.faces]

    def face_cross(self) -> np.ndarray:
        tri = self.triangles()
        return np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])

    def face_areas(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(self.face_cross(), axis=1)

    def face_normals(self) -> np.ndarray:
        """单位面法向；退化面返回零向量"""
        cross = self.face_cross()
        norm = np.linalg.norm(cross, axis=1, keepdims=True)
        return np.divide(cross, norm, out=np.zeros_like(cross), where=norm > 0)

    def face_centroids(self) -> np.ndarray:
        return self.triangles().mean(axis=1)

    def bounding_box(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def edges(self) -> Tuple[np.ndarray, np.ndarray]:
        """返回 (无向边 (E,2) 升序, 每条边的关联面数)"""
        directed = self.faces[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2)
        undirected = np.sort(directed, axis=1)
        unique, counts = np.unique(undirected, axis=0, return_counts=True)
        return unique, counts

    def with_vertices(self, vertices: np.ndarray) -> "TriangleMesh":
        """同一连接关系下替换顶点坐标（共享面列表）"""
        mesh = TriangleMesh.__new__(TriangleMesh)
        mesh.vertices = np.ascontiguousarray(vertices, dtype=np.float64).reshape(-1, 3)
        if len(mesh.vertices) != len(self.vertices):
            raise ValueError("顶点数与原网格不一致")
        mesh.faces = self.faces
        return mesh

    def copy(self) -> "TriangleMesh":
        return TriangleMesh(self.vertices.copy(), self.faces.copy())


@dataclass
class TopologyReport:
    is_watertight: bool
    euler_characteristic: int
    genus: Optional[int]
    boundary_edge_count: int
    non_manifold_edge_count: int = 0
    is_consistently_oriented: bool = True

    @property
    def is_sphere_like(self) -> bool:
        return self.is_watertight and self.genus == 0


def validate_topology(mesh: TriangleMesh) -> TopologyReport:
    """
    检查网格拓扑：水密性、欧拉示性数、亏格、边界边数

    Args:
        mesh: 输入网格

    Returns:
        TopologyReport: 检查结果（只在水密时计算亏格）
    """
    if mesh.face_count == 0:
        return TopologyReport(False, 0, None, 0)

    edges, counts = mesh.edges()
    boundary = int(np.count_nonzero(counts == 1))
    non_manifold = int(np.count_nonzero(counts > 2))
    watertight = boundary == 0 and non_manifold == 0

    directed = mesh.faces[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2)
    _, directed_counts = np.unique(directed, axis=0, return_counts=True)
    oriented = bool(np.all(directed_counts == 1))

    used_vertices = len(np.unique(mesh.faces))
    chi = int(used_vertices - len(edges) + mesh.face_count)
    genus = (2 - chi) // 2 if watertight else None
    return TopologyReport(
        is_watertight=watertight,
        euler_characteristic=chi,
        genus=genus,
        boundary_edge_count=boundary,
        non_manifold_edge_count=non_manifold,
        is_consistently_oriented=oriented,
    )


def drop_degenerate_faces(mesh: TriangleMesh) -> Tuple[TriangleMesh, int]:
    """删除重复索引或零面积的面，返回 (新网格, 删除数)"""
    faces = mesh.faces
    if len(faces) == 0:
        return mesh, 0
    repeated = (faces[:, 0] == faces[:, 1]) | (faces[:, 1] == faces[:, 2]) | (faces[:, 0] == faces[:, 2])
    lo, hi = mesh.bounding_box()
    diag_sq = float(np.sum((hi - lo) ** 2))
    tiny = mesh.face_areas() <= DEGENERATE_AREA_RATIO * diag_sq
    bad = repeated | tiny
    dropped = int(np.count_nonzero(bad))
    if dropped == 0:
        return mesh, 0
    logger.warning(f"⚠️ 删除 {dropped} 个退化面")
    return TriangleMesh(mesh.vertices, faces[~bad]), dropped


# ---- 归一化 ----

def normalize_mesh(mesh: TriangleMesh) -> Tuple[TriangleMesh, float, np.ndarray]:
    """
    平移到包围盒中心并缩放到包围盒对角线为 1

    归一化坐标 = (v - offset) * scale，逆变换见 denormalize_vertices。

    Returns:
        (归一化网格, scale, offset)
    """
    if mesh.vertex_count == 0:
        raise EmptyMeshError("空网格无法归一化")
    lo, hi = mesh.bounding_box()
    diagonal = float(np.linalg.norm(hi - lo))
    if not np.isfinite(diagonal) or diagonal <= 0.0:
        raise EmptyMeshError("包围盒退化（所有顶点重合），无法归一化")
    offset = (lo + hi) / 2.0
    scale = 1.0 / diagonal
    return apply_normalization(mesh, scale, offset), scale, offset


def apply_normalization(mesh: TriangleMesh, scale: float, offset: np.ndarray) -> TriangleMesh:
    return mesh.with_vertices((mesh.vertices - np.asarray(offset, dtype=np.float64)) * scale)


def denormalize_vertices(vertices: np.ndarray, scale: float, offset: np.ndarray) -> np.ndarray:
    return np.asarray(vertices, dtype=np.float64) / scale + np.asarray(offset, dtype=np.float64)


# ---- 表面采样 ----

@dataclass
class SurfaceSample:
    face_index: int
    barycentric: np.ndarray
    position: np.ndarray


@dataclass
class SurfaceSamples:
    """一批表面采样：面索引 (n,)、重心坐标 (n,3)、位置 (n,3)"""

    face_indices: np.ndarray
    barycentric: np.ndarray
    positions: np.ndarray = field(repr=False)

    def __len__(self) -> int:
        return len(self.face_indices)

    def __getitem__(self, i: int) -> SurfaceSample:
        return SurfaceSample(int(self.face_indices[i]), self.barycentric[i], self.positions[i])

    def __iter__(self) -> Iterator[SurfaceSample]:
        for i in range(len(self)):
            yield self[i]


def cumulative_distribution(weights: np.ndarray) -> np.ndarray:
    weights = np.asarray(weights, dtype=np.float64)
    total = weights.sum()
    if not np.isfinite(total) or total <= 0.0:
        raise ValueError("采样权重之和必须为正")
    cdf = np.cumsum(weights / total)
    cdf[-1] = 1.0
    return cdf


def draw_faces(cdf: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """按累积分布抽取面索引"""
    picks = np.searchsorted(cdf, rng.random(n), side="right")
    return np.minimum(picks, len(cdf) - 1)


def uniform_barycentric(n: int, rng: np.random.Generator) -> np.ndarray:
    """三角形内均匀分布的重心坐标（平方根变换）"""
    r1, r2 = rng.random((2, n))
    s = np.sqrt(r1)
    return np.stack([1.0 - s, s * (1.0 - r2), s * r2], axis=1)


def interpolate(mesh: TriangleMesh, face_indices: np.ndarray, barycentric: np.ndarray) -> np.ndarray:
    tri = mesh.vertices[mesh.faces[face_indices]]
    return np.einsum("nk,nkd->nd", barycentric, tri)


def sample_surface_uniform(mesh: TriangleMesh, n: int, seed: int) -> SurfaceSamples:
    """
    按面积均匀采样网格表面

    Args:
        mesh: 网格
        n: 采样点数 (>= 1)
        seed: 随机种子，相同种子结果一致

    Returns:
        SurfaceSamples: 采样结果
    """
    if n < 1:
        raise ValueError("采样点数必须 >= 1")
    rng = np.random.default_rng(seed)
    return sample_surface_with_rng(mesh, n, rng)


def sample_surface_with_rng(
    mesh: TriangleMesh,
    n: int,
    rng: np.random.Generator,
    cdf: Optional[np.ndarray] = None,
) -> SurfaceSamples:
    if cdf is None:
        cdf = cumulative_distribution(mesh.face_areas())
    faces = draw_faces(cdf, n, rng)
    bary = uniform_barycentric(n, rng)
    return SurfaceSamples(faces, bary, interpolate(mesh, faces, bary))
