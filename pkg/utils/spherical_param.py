"""
球面参数化与重心对应

- spherical_parameterize: 平滑-投影方式把零亏格网格无折叠地嵌入单位球面 (M -> M_s)
- import_parameterization: 接受外部计算的球面网格
- check_bijectivity: 基于弦三角形相对原点的朝向与环绕数检查双射性
- laplacian_smooth: 均匀（伞形）拉普拉斯平滑，生成粗糙网格 M_c
- SphereLocator / locate_direction: 原点射线在 M_s 上定位方向
- correspond: 用同一组重心坐标在 M / M_c / M_s 上插值，即 P^-1 与 P_c^-1
"""

from dataclasses import dataclass
from typing import List, Literal, Optional, Tuple

import numpy as np
from scipy import sparse

from utils.bvh import Bvh, ray_intersect_batch
from utils.errors import (
    BijectivityError,
    ConnectivityMismatchError,
    ConsistencyError,
    ParameterizationError,
    TopologyError,
)
from utils.log import get_logger
from utils.mesh_core import TriangleMesh, interpolate, validate_topology
from utils.settings import ParameterizationOptions

logger = get_logger(__name__)

UNIT_NORM_TOLERANCE = 1e-6

CorrespondTarget = Literal["original", "coarse", "sphere"]


@dataclass
class BijectivityReport:
    ok: bool
    flipped_faces: List[int]
    origin_inside: bool
    winding_number: float


@dataclass
class ParameterizedShape:
    """共享同一面列表 F 的三元组 (M, M_s, M_c)"""

    original: TriangleMesh
    sphere: TriangleMesh
    coarse: TriangleMesh
    smoothing_iterations: int = 0
    smoothing_lambda: float = 0.0

    def __post_init__(self):
        faces = self.original.faces
        for name, mesh in (("sphere", self.sphere), ("coarse", self.coarse)):
            if mesh.vertex_count != self.original.vertex_count or not np.array_equal(mesh.faces, faces):
                raise ConnectivityMismatchError(f"{name} 网格与原网格连接关系不一致")
        norms = np.linalg.norm(self.sphere.vertices, axis=1)
        if np.max(np.abs(norms - 1.0)) > UNIT_NORM_TOLERANCE:
            raise ValueError("球面网格顶点必须为单位长度")

    @property
    def shared_faces(self) -> np.ndarray:
        return self.original.faces

    def target_mesh(self, target: CorrespondTarget) -> TriangleMesh:
        if target == "original":
            return self.original
        if target == "coarse":
            return self.coarse
        if target == "sphere":
            return self.sphere
        raise ValueError(f"未知的对应目标: {target}")


# ---- 邻接与平滑 ----

def umbrella_operator(mesh: TriangleMesh) -> sparse.csr_matrix:
    """行归一化的一环邻接矩阵 A，A @ V 为每个顶点的邻居均值"""
    faces = mesh.faces
    i = faces[:, [0, 1, 1, 2, 2, 0]].reshape(-1)
    j = faces[:, [1, 0, 2, 1, 0, 2]].reshape(-1)
    n = mesh.vertex_count
    adjacency = sparse.csr_matrix((np.ones(len(i)), (i, j)), shape=(n, n))
    adjacency.data[:] = 1.0
    degree = np.asarray(adjacency.sum(axis=1)).ravel()
    inv_degree = np.divide(1.0, degree, out=np.zeros_like(degree), where=degree > 0)
    return sparse.diags(inv_degree) @ adjacency


def laplacian_smooth(mesh: TriangleMesh, c: int, lam: float) -> TriangleMesh:
    """
    均匀拉普拉斯平滑：v <- v + lam * (邻居均值 - v)，重复 c 次

    Args:
        mesh: 输入网格
        c: 迭代次数 (>= 0)
        lam: 步长，(0, 1]

    Returns:
        TriangleMesh: 共享原面列表的平滑网格
    """
    if c < 0:
        raise ValueError("平滑迭代次数必须 >= 0")
    if not 0.0 < lam <= 1.0:
        raise ValueError("lambda 必须位于 (0, 1]")
    if c == 0:
        return mesh.with_vertices(mesh.vertices.copy())
    operator = umbrella_operator(mesh)
    vertices = mesh.vertices.copy()
    for _ in range(c):
        vertices = vertices + lam * (operator @ vertices - vertices)
    return mesh.with_vertices(vertices)


# ---- 双射性检查 ----

def orientation_signs(sphere: TriangleMesh) -> np.ndarray:
    """每个弦三角形的 det[v0, v1, v2]"""
    tri = sphere.triangles()
    return np.einsum("ij,ij->i", tri[:, 0], np.cross(tri[:, 1], tri[:, 2]))


def winding_number(mesh: TriangleMesh, point=(0.0, 0.0, 0.0)) -> float:
    """闭合网格关于某点的广义环绕数（立体角和 / 4π）"""
    tri = mesh.triangles() - np.asarray(point, dtype=np.float64)
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    la, lb, lc = (np.linalg.norm(x, axis=1) for x in (a, b, c))
    numerator = np.einsum("ij,ij->i", a, np.cross(b, c))
    denominator = (
        la * lb * lc
        + np.einsum("ij,ij->i", a, b) * lc
        + np.einsum("ij,ij->i", b, c) * la
        + np.einsum("ij,ij->i", c, a) * lb
    )
    solid_angles = 2.0 * np.arctan2(numerator, denominator)
    return float(solid_angles.sum() / (4.0 * np.pi))


def check_bijectivity(sphere: TriangleMesh) -> BijectivityReport:
    """
    检查球面嵌入是否双射

    面的 det[v0,v1,v2] 符号与多数面不一致即视为翻转；
    原点是否在内部用环绕数判断。
    """
    signs = orientation_signs(sphere)
    majority = 1.0 if np.count_nonzero(signs > 0) >= np.count_nonzero(signs < 0) else -1.0
    flipped = np.flatnonzero(signs * majority <= 0.0)
    winding = winding_number(sphere)
    origin_inside = abs(winding) > 0.5
    ok = flipped.size == 0 and origin_inside
    return BijectivityReport(ok, flipped.tolist(), origin_inside, winding)


def _project(vertices: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(vertices, axis=1, keepdims=True)
    return vertices / np.where(norms > 0.0, norms, 1.0)


def require_sphere_topology(mesh: TriangleMesh) -> None:
    report = validate_topology(mesh)
    if not report.is_watertight:
        raise TopologyError(
            f"网格必须为水密零亏格 (genus 无法计算: 边界边 {report.boundary_edge_count}, "
            f"非流形边 {report.non_manifold_edge_count})"
        )
    if report.genus != 0:
        raise TopologyError(f"网格必须为零亏格 (genus={report.genus}, χ={report.euler_characteristic})")


def spherical_parameterize(mesh: TriangleMesh, opts: Optional[ParameterizationOptions] = None) -> TriangleMesh:
    """
    平滑-投影球面参数化

    以质心为中心把顶点投影到单位球面，然后反复进行
    {环境空间伞形平滑, 去中心, 重新投影}；翻转面数增加时步长减半回退。

    Args:
        mesh: 水密零亏格网格
        opts: 迭代次数、步长、停滞阈值

    Returns:
        TriangleMesh: 与输入共享面列表的单位球面网格
    """
    opts = opts or ParameterizationOptions()
    require_sphere_topology(mesh)

    vertices = _project(mesh.vertices - mesh.vertices.mean(axis=0))
    sphere = mesh.with_vertices(vertices)
    report = check_bijectivity(sphere)
    if report.ok:
        logger.info("✅ 初始径向投影即为无折叠嵌入")
        return sphere

    operator = umbrella_operator(mesh)
    step = opts.step_size
    flipped = len(report.flipped_faces)
    logger.info(f"📐 初始投影有 {flipped} 个翻转面，开始平滑-投影迭代")
    for iteration in range(1, opts.max_iterations + 1):
        candidate = vertices + step * (operator @ vertices - vertices)
        candidate -= candidate.mean(axis=0)
        candidate = _project(candidate)
        candidate_report = check_bijectivity(mesh.with_vertices(candidate))
        candidate_flipped = len(candidate_report.flipped_faces)

        if candidate_flipped > flipped:
            step *= 0.5
            if step < opts.tolerance:
                step = opts.step_size
                logger.debug(f"第 {iteration} 次迭代步长回退过小，重置步长")
            continue

        movement = float(np.max(np.linalg.norm(candidate - vertices, axis=1)))
        vertices, flipped = candidate, candidate_flipped
        if candidate_report.ok:
            logger.info(f"✅ 第 {iteration} 次迭代得到无折叠嵌入")
            return mesh.with_vertices(vertices)
        if movement < opts.tolerance:
            raise ParameterizationError(flipped, iteration)
        if iteration % 100 == 0:
            logger.debug(f"第 {iteration} 次迭代: 翻转面 {flipped}, 步长 {step:.3g}")

    raise ParameterizationError(flipped, opts.max_iterations)


def import_parameterization(mesh: TriangleMesh, sphere_candidate: TriangleMesh) -> TriangleMesh:
    """
    接受外部计算的球面参数化

    Args:
        mesh: 原网格 M
        sphere_candidate: 与 M 顶点数、面列表相同的候选球面网格

    Returns:
        TriangleMesh: 归一化到单位长度并通过双射检查的 M_s
    """
    if sphere_candidate.vertex_count != mesh.vertex_count:
        raise ConnectivityMismatchError(
            f"候选球面顶点数 {sphere_candidate.vertex_count} 与原网格 {mesh.vertex_count} 不一致"
        )
    if not np.array_equal(sphere_candidate.faces, mesh.faces):
        raise ConnectivityMismatchError("候选球面的面列表与原网格不一致")
    sphere = mesh.with_vertices(_project(sphere_candidate.vertices))
    report = check_bijectivity(sphere)
    if not report.ok:
        raise BijectivityError(report.flipped_faces, report.origin_inside)
    return sphere


# ---- 方向定位与对应 ----

@dataclass
class SphereLocator:
    sphere: TriangleMesh
    bvh: Bvh

    @classmethod
    def build(cls, sphere: TriangleMesh) -> "SphereLocator":
        return cls(sphere, Bvh.build(sphere))


def locate_directions(
    locator: SphereLocator, directions: np.ndarray, workers: int = 1
) -> Tuple[np.ndarray, np.ndarray]:
    """
    沿原点射线在 M_s 上批量定位方向

    Returns:
        (面索引 (n,), 重心坐标 (n,3))
    """
    directions = np.asarray(directions, dtype=np.float64).reshape(-1, 3)
    origins = np.zeros_like(directions)
    hit, faces, bary, _ = ray_intersect_batch(locator.bvh, locator.sphere, origins, directions, workers)
    if not np.all(hit):
        missed = int(np.count_nonzero(~hit))
        raise ConsistencyError(f"{missed} 个方向未与球面网格相交，嵌入不满足原点在内部的前提")
    return faces, bary


def locate_direction(locator: SphereLocator, direction) -> Tuple[int, np.ndarray]:
    faces, bary = locate_directions(locator, np.asarray(direction, dtype=np.float64)[None, :])
    return int(faces[0]), bary[0]


def correspond_batch(
    shape: ParameterizedShape, target: CorrespondTarget, face_indices: np.ndarray, barycentric: np.ndarray
) -> np.ndarray:
    return interpolate(shape.target_mesh(target), np.asarray(face_indices), np.asarray(barycentric))


def correspond(shape: ParameterizedShape, target: CorrespondTarget, face_index: int, barycentric) -> np.ndarray:
    """重心坐标在目标网格同一面上插值：original 即 P^-1，coarse 即 P_c^-1"""
    return correspond_batch(
        shape, target, np.asarray([face_index]), np.asarray(barycentric, dtype=np.float64)[None, :]
    )[0]


def build_shape(
    mesh: TriangleMesh, sphere: TriangleMesh, smoothing_iterations: int, smoothing_lambda: float
) -> ParameterizedShape:
    """组装 (M, M_s, M_c)；M_c 由 M 平滑得到，不重新计算参数化"""
    coarse = laplacian_smooth(mesh, smoothing_iterations, smoothing_lambda)
    return ParameterizedShape(mesh, sphere, coarse, smoothing_iterations, smoothing_lambda)
