"""
解码：icosphere 模板 -> (可选) 自适应细分 -> q_c 投影 -> q_f 位移 -> 反归一化
"""

import numpy as np

from utils.container import CompressedModel
from utils.icosphere import Icosphere, make_icosphere, normalize_rows
from utils.log import get_logger
from utils.mesh_core import TriangleMesh, denormalize_vertices
from utils.nn import positional_encode

logger = get_logger(__name__)


def _image_areas(points: np.ndarray, faces: np.ndarray) -> np.ndarray:
    tri = points[faces]
    return 0.5 * np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)


def _edge_keys(faces: np.ndarray, n: int) -> np.ndarray:
    """(m,3) 无向边编码，第 j 条边连接 f[j] 与 f[(j+1)%3]"""
    a = faces
    b = np.roll(faces, -1, axis=1)
    return np.minimum(a, b) * n + np.maximum(a, b)


def _close_marks(keys: np.ndarray, marked: np.ndarray) -> np.ndarray:
    """有两条以上标记边的面升级为整面细分，直到不再变化"""
    while True:
        mask = np.isin(keys, marked)
        upgrade = mask.sum(axis=1) == 2
        if not np.any(upgrade):
            return mask
        marked = np.union1d(marked, keys[upgrade].ravel())


def _refine_round(sphere: Icosphere, flagged: np.ndarray) -> Icosphere:
    vertices, faces = sphere.vertices, sphere.faces
    n = len(vertices)
    keys = _edge_keys(faces, n)
    mask = _close_marks(keys, np.unique(keys[flagged].ravel()))
    marked = np.unique(keys[mask])

    a, b = marked // n, marked % n
    midpoints = normalize_rows((vertices[a] + vertices[b]) / 2.0)
    new_vertices = np.vstack([vertices, midpoints])
    mid = np.full(keys.shape, -1, dtype=np.int64)
    mid[mask] = n + np.searchsorted(marked, keys[mask])

    counts = mask.sum(axis=1)
    keep = counts == 0
    red = counts == 3
    green = counts == 1

    new_faces = [faces[keep]]
    new_ancestors = [sphere.ancestors[keep]]

    # 红色：1 分 4
    f, m = faces[red], mid[red]
    v0, v1, v2 = f[:, 0], f[:, 1], f[:, 2]
    m01, m12, m20 = m[:, 0], m[:, 1], m[:, 2]
    red_children = np.stack([
        np.stack([v0, m01, m20], axis=1),
        np.stack([v1, m12, m01], axis=1),
        np.stack([v2, m20, m12], axis=1),
        np.stack([m01, m12, m20], axis=1),
    ], axis=1).reshape(-1, 3)
    new_faces.append(red_children)
    new_ancestors.append(np.repeat(sphere.ancestors[red], 4))

    # 绿色：沿唯一标记边一分为二
    f, m = faces[green], mid[green]
    j = np.argmax(mask[green], axis=1)
    rows = np.arange(len(f))
    vj = f[rows, j]
    vj1 = f[rows, (j + 1) % 3]
    vj2 = f[rows, (j + 2) % 3]
    mj = m[rows, j]
    green_children = np.stack([
        np.stack([vj, mj, vj2], axis=1),
        np.stack([mj, vj1, vj2], axis=1),
    ], axis=1).reshape(-1, 3)
    new_faces.append(green_children)
    new_ancestors.append(np.repeat(sphere.ancestors[green], 2))

    logger.info(f"   细分: 红 {int(red.sum())} 个面, 绿 {int(green.sum())} 个面, 新增 {len(marked)} 个顶点")
    return Icosphere(
        TriangleMesh(new_vertices, np.vstack(new_faces)),
        sphere.level,
        np.concatenate(new_ancestors),
    )


def adaptive_refine(sphere: Icosphere, q_c, ratio_threshold: float = 4.0, max_rounds: int = 3) -> Icosphere:
    """
    按 q_c 像面积自适应细分球面

    每轮标记像面积 > ratio_threshold × 中位数的面，标记面 1 分 4，
    相邻面做绿色二分保证无裂缝；中位数每轮重新计算。

    Args:
        sphere: 输入 icosphere
        q_c: 提供 forward((n,3)) -> (n,3) 的粗糙网络
        ratio_threshold: 面积比阈值，inf 时不细分
        max_rounds: 最多细分轮数

    Returns:
        Icosphere: 细分后的球面（无标记时返回原对象）
    """
    for round_index in range(max_rounds):
        if not np.isfinite(ratio_threshold):
            break
        image = np.asarray(q_c.forward(sphere.vertices), dtype=np.float64)
        areas = _image_areas(image, sphere.faces)
        median = float(np.median(areas))
        flagged = areas > ratio_threshold * median
        if not np.any(flagged):
            break
        logger.info(f"第 {round_index + 1} 轮自适应细分: {int(flagged.sum())} 个面超过 {ratio_threshold:g}x 中位面积")
        sphere = _refine_round(sphere, flagged)
    return sphere


def decode(
    model: CompressedModel,
    level: int = 6,
    adaptive: bool = False,
    ratio_threshold: float = 4.0,
    max_rounds: int = 3,
    coarse_only: bool = False,
) -> TriangleMesh:
    """
    从压缩模型重建网格

    Args:
        model: 反序列化后的模型
        level: icosphere 级数 k
        adaptive: 是否自适应细分
        coarse_only: 只输出 q_c 重建 M*_c

    Returns:
        TriangleMesh: 原始坐标系下的重建网格，连接关系与（细分后的）球面一致
    """
    sphere = make_icosphere(level)
    if adaptive:
        sphere = adaptive_refine(sphere, model.coarse, ratio_threshold, max_rounds)

    coarse_points = model.coarse.forward(sphere.vertices).astype(np.float64)
    if coarse_only:
        points = coarse_points
    else:
        levels = model.fine.architecture.positional_levels
        displacement = model.fine.forward(positional_encode(coarse_points, levels)).astype(np.float64)
        points = coarse_points + displacement
    return TriangleMesh(denormalize_vertices(points, model.scale, model.offset), sphere.faces)
