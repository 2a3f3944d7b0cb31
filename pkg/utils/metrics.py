"""
重建质量评估

- d_pm: 表面采样点到另一网格的平均最近距离（报告时乘 1e4）
- d_n: 采样点处面法向与参考网格最近点处面法向的平均夹角（度）
- d_hausdorff: 采样得到的最大点到网格距离（豪斯多夫距离估计）
"""

from dataclasses import asdict, dataclass
from typing import Literal, Tuple

import numpy as np

from utils.bvh import Bvh, closest_points
from utils.mesh_core import TriangleMesh, apply_normalization, normalize_mesh, sample_surface_uniform

Direction = Literal["recon->ref", "ref->recon", "symmetric"]
D_PM_SCALE = 1e4


@dataclass
class MetricsReport:
    d_pm_mean: float
    d_n_mean_degrees: float
    d_hausdorff: float
    n_samples: int
    direction: str

    @property
    def d_pm_scaled(self) -> float:
        return self.d_pm_mean * D_PM_SCALE

    def to_dict(self) -> dict:
        record = asdict(self)
        record["d_pm_x1e4"] = self.d_pm_scaled
        return record


def _directed(
    source: TriangleMesh, reference: TriangleMesh, n: int, seed: int, workers: int = 1
) -> Tuple[np.ndarray, np.ndarray]:
    """从 source 采样到 reference 的 (距离, 法向夹角°)"""
    samples = sample_surface_uniform(source, n, seed)
    _, faces, distances = closest_points(Bvh.build(reference), reference, samples.positions, workers)
    src_normals = source.face_normals()[samples.face_indices]
    ref_normals = reference.face_normals()[faces]
    cos = np.clip(np.sum(src_normals * ref_normals, axis=1), -1.0, 1.0)
    return distances, np.degrees(np.arccos(cos))


def _evaluate_directions(source, reference, n, seed, direction: Direction, workers: int):
    if direction == "recon->ref":
        return [_directed(source, reference, n, seed, workers)]
    if direction == "ref->recon":
        return [_directed(reference, source, n, seed, workers)]
    if direction == "symmetric":
        return [_directed(source, reference, n, seed, workers), _directed(reference, source, n, seed, workers)]
    raise ValueError(f"未知的方向: {direction}")


def point_to_mesh_error(
    source: TriangleMesh,
    reference: TriangleMesh,
    n: int = 100_000,
    seed: int = 0,
    direction: Direction = "symmetric",
    workers: int = 1,
) -> float:
    """
    平均点到网格距离；对称模式取两个方向均值的平均（两个方向使用同一种子）

    Args:
        source: 重建网格（已归一化）
        reference: 参考网格（已归一化）
        n: 每个方向的采样数
    """
    parts = _evaluate_directions(source, reference, n, seed, direction, workers)
    return float(np.mean([d.mean() for d, _ in parts]))


def normal_error(
    source: TriangleMesh,
    reference: TriangleMesh,
    n: int = 100_000,
    seed: int = 0,
    direction: Direction = "symmetric",
    workers: int = 1,
) -> float:
    """平均法向夹角（度）"""
    parts = _evaluate_directions(source, reference, n, seed, direction, workers)
    return float(np.mean([a.mean() for _, a in parts]))


def hausdorff_distance(
    source: TriangleMesh, reference: TriangleMesh, n: int = 100_000, seed: int = 0, workers: int = 1
) -> float:
    """双向采样最大距离，顶点也计入查询"""
    worst = 0.0
    for a, b in ((source, reference), (reference, source)):
        distances, _ = _directed(a, b, n, seed, workers)
        _, _, vertex_distances = closest_points(Bvh.build(b), b, a.vertices, workers)
        worst = max(worst, float(distances.max()), float(vertex_distances.max()))
    return worst


def evaluate(
    recon: TriangleMesh,
    reference: TriangleMesh,
    n: int = 100_000,
    seed: int = 0,
    direction: Direction = "symmetric",
    normalize: bool = True,
    workers: int = 1,
) -> MetricsReport:
    """
    计算 d_pm、d_n 与豪斯多夫估计

    Args:
        recon: 重建网格
        reference: 参考网格
        normalize: 两个网格都套用参考网格的归一化变换（包围盒对角线为 1）

    Returns:
        MetricsReport: 评估结果
    """
    if normalize:
        reference, scale, offset = normalize_mesh(reference)
        recon = apply_normalization(recon, scale, offset)
    parts = _evaluate_directions(recon, reference, n, seed, direction, workers)
    return MetricsReport(
        d_pm_mean=float(np.mean([d.mean() for d, _ in parts])),
        d_n_mean_degrees=float(np.mean([a.mean() for _, a in parts])),
        d_hausdorff=float(max(d.max() for d, _ in parts)),
        n_samples=n,
        direction=direction,
    )


def format_report(report: MetricsReport) -> str:
    """表格式文本：d_pm×10^4 与 d_n 保留两位小数"""
    lines = [
        f"d_pm x1e4 : {report.d_pm_scaled:.2f}",
        f"d_n (deg) : {report.d_n_mean_degrees:.2f}",
        f"hausdorff : {report.d_hausdorff:.6f}",
        f"samples   : {report.n_samples}",
        f"direction : {report.direction}",
    ]
    return "\n".join(lines)
