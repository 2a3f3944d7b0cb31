"""
q_c 的度量张量（第一基本形式）与失真采样表

S(u,v) = (sin v cos u, sin v sin u, cos v)，u 为方位角，v 为极角。
失真比 d(u,v) = sqrt(det I / sin²v)，精细阶段按 d 对球面按面采样。
"""

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from utils.errors import DegenerateCoarseError
from utils.icosphere import Icosphere, make_icosphere, normalize_rows
from utils.log import get_logger
from utils.mesh_core import cumulative_distribution, draw_faces, interpolate, uniform_barycentric

logger = get_logger(__name__)

SIN2_FLOOR = 1e-12


def sphere_point(u, v) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    sv = np.sin(v)
    return np.stack([sv * np.cos(u), sv * np.sin(u), np.cos(v)], axis=-1)


def sphere_uv(point) -> Tuple[np.ndarray, np.ndarray]:
    """
    单位向量 -> (u ∈ [0, 2π), v ∈ [0, π])；两极处 u 取 0

    Args:
        point: (3,) 或 (n,3) 单位向量
    """
    p = np.asarray(point, dtype=np.float64)
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    v = np.arccos(np.clip(z, -1.0, 1.0))
    u = np.mod(np.arctan2(y, x), 2.0 * np.pi)
    # arctan2 的 -0.0 经 mod 后可能得到 2π
    u = np.where(u >= 2.0 * np.pi, 0.0, u)
    u = np.where((x == 0.0) & (y == 0.0), 0.0, u)
    if p.ndim == 1:
        return float(u), float(v)
    return u, v


def sphere_tangents(u, v) -> Tuple[np.ndarray, np.ndarray]:
    """dS/du, dS/dv"""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    su, cu, sv, cv = np.sin(u), np.cos(u), np.sin(v), np.cos(v)
    d_u = np.stack([-sv * su, sv * cu, np.zeros_like(u)], axis=-1)
    d_v = np.stack([cv * cu, cv * su, -sv], axis=-1)
    return d_u, d_v


def metric_tensor_batch(q_c, u, v) -> np.ndarray:
    """
    批量第一基本形式

    Args:
        q_c: 提供 input_jacobian_batch((n,3)) -> (n,3,3) 的粗糙网络
        u, v: (n,) 角度

    Returns:
        np.ndarray: (n,2,2)，[[E, F], [F, G]]
    """
    u = np.atleast_1d(np.asarray(u, dtype=np.float64))
    v = np.atleast_1d(np.asarray(v, dtype=np.float64))
    points = sphere_point(u, v)
    jac = np.asarray(q_c.input_jacobian_batch(points), dtype=np.float64)
    d_u, d_v = sphere_tangents(u, v)
    q_u = np.einsum("nij,nj->ni", jac, d_u)
    q_v = np.einsum("nij,nj->ni", jac, d_v)
    e = np.sum(q_u * q_u, axis=1)
    f = np.sum(q_u * q_v, axis=1)
    g = np.sum(q_v * q_v, axis=1)
    return np.stack([np.stack([e, f], axis=1), np.stack([f, g], axis=1)], axis=1)


def metric_tensor(q_c, u: float, v: float) -> np.ndarray:
    return metric_tensor_batch(q_c, [u], [v])[0]


def distortion_ratio(metric, v) -> np.ndarray:
    """d = sqrt(max(det I, 0) / max(sin²v, 1e-12))；接受 (2,2) 或 (n,2,2)"""
    metric = np.asarray(metric, dtype=np.float64)
    det = metric[..., 0, 0] * metric[..., 1, 1] - metric[..., 0, 1] * metric[..., 1, 0]
    sin2 = np.maximum(np.sin(np.asarray(v, dtype=np.float64)) ** 2, SIN2_FLOOR)
    d = np.sqrt(np.maximum(det, 0.0) / sin2)
    return float(d) if np.ndim(d) == 0 else d


@dataclass
class DistortionTable:
    """icosphere 每个面的失真权重与按面的累积分布"""

    sphere: Icosphere
    weights: np.ndarray
    probabilities: np.ndarray
    cdf: np.ndarray

    @classmethod
    def build(cls, q_c, level: int = 5, area_weighted: bool = False) -> "DistortionTable":
        """
        在 level 级 icosphere 的归一化面中心处计算失真比

        Args:
            q_c: 粗糙网络（或提供 input_jacobian_batch 的替身）
            level: icosphere 级数
            area_weighted: 是否再乘以球面网格的真实面面积

        Raises:
            DegenerateCoarseError: 所有权重为零或非有限
        """
        sphere = make_icosphere(level)
        centers = normalize_rows(sphere.mesh.face_centroids())
        u, v = sphere_uv(centers)
        weights = distortion_ratio(metric_tensor_batch(q_c, u, v), v)
        if area_weighted:
            weights = weights * sphere.mesh.face_areas()
        if not np.all(np.isfinite(weights)):
            raise DegenerateCoarseError("失真权重包含非有限值，q_c 退化")
        total = float(weights.sum())
        if total <= 0.0:
            raise DegenerateCoarseError("失真权重全为零，q_c 退化")
        logger.info(
            f"📐 失真表: {len(weights)} 个面, d 范围 [{weights.min():.4g}, {weights.max():.4g}]"
        )
        return cls(sphere, weights, weights / total, cumulative_distribution(weights))

    @property
    def face_count(self) -> int:
        return len(self.weights)

    def draw_faces(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return draw_faces(self.cdf, n, rng)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """按失真分布抽面，面内均匀重心坐标，归一化为 (n,3) 单位方向"""
        faces = self.draw_faces(n, rng)
        bary = uniform_barycentric(n, rng)
        return normalize_rows(interpolate(self.sphere.mesh, faces, bary))


def sample_sphere_uniform(n: int, rng: np.random.Generator) -> np.ndarray:
    """S² 上均匀分布的单位方向"""
    g = rng.standard_normal((n, 3))
    norm = np.linalg.norm(g, axis=1, keepdims=True)
    return g / np.maximum(norm, 1e-300)
