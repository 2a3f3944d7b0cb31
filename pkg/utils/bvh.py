"""
包围体层次结构 (BVH) 与批量空间查询

closest_points / ray_intersect_batch 以 (查询, 节点) 对的前沿逐层向量化遍历，
查询被切成固定大小的块，可在线程池中并行，结果与线程数无关。
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Tuple

import numpy as np
from scipy.spatial import cKDTree

from utils.mesh_core import TriangleMesh

QUERY_CHUNK = 8192
RAY_BARY_EPS = 1e-10
RAY_T_MIN = 1e-12


class ClosestPoint(NamedTuple):
    point: np.ndarray
    face_index: int
    distance: float


class RayHit(NamedTuple):
    face_index: int
    barycentric: np.ndarray
    t: float


# ---- 三角形基元（向量化） ----

def _dot(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.einsum("ij,ij->i", x, y)


def closest_points_on_triangles(p: np.ndarray, a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    """
    每个查询点到对应三角形的最近点（Ericson, Real-Time Collision Detection 的区域判定）

    Args:
        p, a, b, c: (k,3) 查询点与三角形顶点

    Returns:
        np.ndarray: (k,3) 最近点
    """
    ab = b - a
    ac = c - a
    ap = p - a
    bp = p - b
    cp = p - c
    d1 = _dot(ab, ap)
    d2 = _dot(ac, ap)
    d3 = _dot(ab, bp)
    d4 = _dot(ac, bp)
    d5 = _dot(ab, cp)
    d6 = _dot(ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    with np.errstate(divide="ignore", invalid="ignore"):
        denom = va + vb + vc
        denom = np.where(denom == 0.0, 1.0, denom)
        result = a + ab * (vb / denom)[:, None] + ac * (vc / denom)[:, None]

        done = np.zeros(len(p), dtype=bool)

        def assign(mask: np.ndarray, value: np.ndarray) -> None:
            nonlocal done
            m = mask & ~done
            result[m] = value[m]
            done |= m

        assign((d1 <= 0) & (d2 <= 0), a)
        assign((d3 >= 0) & (d4 <= d3), b)
        t_ab = d1 / np.where(d1 - d3 == 0.0, 1.0, d1 - d3)
        assign((vc <= 0) & (d1 >= 0) & (d3 <= 0), a + ab * t_ab[:, None])
        assign((d6 >= 0) & (d5 <= d6), c)
        t_ac = d2 / np.where(d2 - d6 == 0.0, 1.0, d2 - d6)
        assign((vb <= 0) & (d2 >= 0) & (d6 <= 0), a + ac * t_ac[:, None])
        e43 = d4 - d3
        e56 = d5 - d6
        t_bc = e43 / np.where(e43 + e56 == 0.0, 1.0, e43 + e56)
        assign((va <= 0) & (e43 >= 0) & (e56 >= 0), b + (c - b) * t_bc[:, None])
    return result


def ray_triangle_intersections(
    o: np.ndarray, d: np.ndarray, a: np.ndarray, b: np.ndarray, c: np.ndarray
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Möller–Trumbore 射线-三角形求交（双面）

    Returns:
        (命中掩码, t, 重心坐标 (k,3))
    """
    e1 = b - a
    e2 = c - a
    pvec = np.cross(d, e2)
    det = _dot(e1, pvec)
    valid = np.abs(det) > 1e-300
    inv_det = 1.0 / np.where(valid, det, 1.0)
    tvec = o - a
    u = _dot(tvec, pvec) * inv_det
    qvec = np.cross(tvec, e1)
    v = _dot(d, qvec) * inv_det
    t = _dot(e2, qvec) * inv_det
    hit = (
        valid
        & (u >= -RAY_BARY_EPS)
        & (v >= -RAY_BARY_EPS)
        & (u + v <= 1.0 + RAY_BARY_EPS)
        & (t > RAY_T_MIN)
    )
    bary = np.stack([1.0 - u - v, u, v], axis=1)
    bary = np.clip(bary, 0.0, None)
    bary /= np.where(bary.sum(axis=1, keepdims=True) > 0, bary.sum(axis=1, keepdims=True), 1.0)
    return hit, t, bary


def _box_distance_sq(p: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    gap = np.maximum(np.maximum(lo - p, p - hi), 0.0)
    return np.einsum("ij,ij->i", gap, gap)


def _slab(o: np.ndarray, d: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t1 = (lo - o) * inv
        t2 = (hi - o) * inv
    zero = d == 0.0
    inside = (o >= lo) & (o <= hi)
    # 平行于某轴的射线：在该轴板内则不约束，否则必不相交
    t1 = np.where(zero, np.where(inside, -np.inf, np.inf), t1)
    t2 = np.where(zero, np.inf, t2)
    t_near = np.minimum(t1, t2).max(axis=1)
    t_far = np.maximum(t1, t2).min(axis=1)
    return t_near, t_far


def _group_min(keys: np.ndarray, values: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """每个键取最小值所在位置，返回 (唯一键, 原数组下标)"""
    order = np.lexsort((values, keys))
    unique, first = np.unique(keys[order], return_index=True)
    return unique, order[first]


# ---- BVH ----

@dataclass
class Bvh:
    """扁平数组存储的轴对齐包围盒层次结构，叶子引用 face_order 的连续区间"""

    node_min: np.ndarray
    node_max: np.ndarray
    left: np.ndarray
    right: np.ndarray
    start: np.ndarray
    count: np.ndarray
    face_order: np.ndarray
    triangles: np.ndarray
    centroid_tree: cKDTree
    leaf_size: int

    @property
    def face_count(self) -> int:
        return len(self.face_order)

    @property
    def node_count(self) -> int:
        return len(self.left)

    @classmethod
    def build(cls, mesh: TriangleMesh, leaf_size: int = 4) -> "Bvh":
        """按质心最长轴中位数划分构建 BVH"""
        tri = mesh.triangles()
        tri_min = tri.min(axis=1)
        tri_max = tri.max(axis=1)
        centroids = tri.mean(axis=1)
        order = np.arange(len(tri), dtype=np.int64)

        node_min: List[np.ndarray] = []
        node_max: List[np.ndarray] = []
        left: List[int] = []
        right: List[int] = []
        start: List[int] = []
        count: List[int] = []

        def new_node(s: int, e: int) -> int:
            ids = order[s:e]
            node_min.append(tri_min[ids].min(axis=0))
            node_max.append(tri_max[ids].max(axis=0))
            left.append(-1)
            right.append(-1)
            start.append(s)
            count.append(e - s)
            return len(left) - 1

        root = new_node(0, len(order))
        stack = [(root, 0, len(order))]
        while stack:
            node, s, e = stack.pop()
            if e - s <= leaf_size:
                continue
            ids = order[s:e]
            cen = centroids[ids]
            extent = cen.max(axis=0) - cen.min(axis=0)
            axis = int(np.argmax(extent))
            if extent[axis] <= 0.0:
                continue
            mid = (e - s) // 2
            part = np.argpartition(cen[:, axis], mid)
            order[s:e] = ids[part]
            lchild = new_node(s, s + mid)
            rchild = new_node(s + mid, e)
            left[node] = lchild
            right[node] = rchild
            count[node] = 0
            stack.append((lchild, s, s + mid))
            stack.append((rchild, s + mid, e))

        return cls(
            node_min=np.asarray(node_min),
            node_max=np.asarray(node_max),
            left=np.asarray(left, dtype=np.int64),
            right=np.asarray(right, dtype=np.int64),
            start=np.asarray(start, dtype=np.int64),
            count=np.asarray(count, dtype=np.int64),
            face_order=order,
            triangles=tri,
            centroid_tree=cKDTree(centroids),
            leaf_size=leaf_size,
        )

    def expand_leaves(self, pair_index: np.ndarray, leaves: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """把 (查询, 叶子) 对展开为 (查询, 面) 对"""
        counts = self.count[leaves]
        owner = np.repeat(np.arange(len(leaves)), counts)
        first = np.cumsum(counts) - counts
        within = np.arange(int(counts.sum())) - first[owner]
        faces = self.face_order[self.start[leaves][owner] + within]
        return pair_index[owner], faces


def _check(bvh: Bvh, mesh: TriangleMesh) -> None:
    if mesh.face_count != bvh.face_count:
        raise ValueError("BVH 与网格面数不一致")


def _run_chunked(fn, n: int, workers: int) -> list:
    bounds = [(s, min(s + QUERY_CHUNK, n)) for s in range(0, n, QUERY_CHUNK)]
    if workers <= 1 or len(bounds) <= 1:
        return [fn(s, e) for s, e in bounds]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda se: fn(*se), bounds))


# ---- 最近点 ----

def _closest_chunk(bvh: Bvh, queries: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    tri = bvh.triangles
    # 以最近质心所在面的距离作为初始上界
    _, seed = bvh.centroid_tree.query(queries)
    seed = np.asarray(seed, dtype=np.int64)
    best_point = closest_points_on_triangles(queries, tri[seed, 0], tri[seed, 1], tri[seed, 2])
    best_d2 = np.sum((best_point - queries) ** 2, axis=1)
    best_face = seed.copy()

    qi = np.arange(len(queries))
    node = np.zeros(len(queries), dtype=np.int64)
    while qi.size:
        box_d2 = _box_distance_sq(queries[qi], bvh.node_min[node], bvh.node_max[node])
        keep = box_d2 < best_d2[qi]
        qi, node = qi[keep], node[keep]
        leaf = bvh.left[node] < 0

        if np.any(leaf):
            pq, pf = bvh.expand_leaves(qi[leaf], node[leaf])
            pts = closest_points_on_triangles(queries[pq], tri[pf, 0], tri[pf, 1], tri[pf, 2])
            d2 = np.sum((pts - queries[pq]) ** 2, axis=1)
            owners, pick = _group_min(pq, d2)
            better = d2[pick] < best_d2[owners]
            owners, pick = owners[better], pick[better]
            best_d2[owners] = d2[pick]
            best_point[owners] = pts[pick]
            best_face[owners] = pf[pick]

        inner_q, inner_n = qi[~leaf], node[~leaf]
        qi = np.concatenate([inner_q, inner_q])
        node = np.concatenate([bvh.left[inner_n], bvh.right[inner_n]])
    return best_point, best_face, np.sqrt(best_d2)


def closest_points(
    bvh: Bvh, mesh: TriangleMesh, queries: np.ndarray, workers: int = 1
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    批量最近点查询

    Returns:
        (最近点 (n,3), 面索引 (n,), 距离 (n,))
    """
    _check(bvh, mesh)
    queries = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
    if len(queries) == 0:
        return np.zeros((0, 3)), np.zeros(0, dtype=np.int64), np.zeros(0)
    parts = _run_chunked(lambda s, e: _closest_chunk(bvh, queries[s:e]), len(queries), workers)
    return tuple(np.concatenate([p[i] for p in parts]) for i in range(3))


def closest_point(bvh: Bvh, mesh: TriangleMesh, query) -> ClosestPoint:
    points, faces, distances = closest_points(bvh, mesh, np.asarray(query, dtype=np.float64)[None, :])
    return ClosestPoint(points[0], int(faces[0]), float(distances[0]))


# ---- 射线求交 ----

def _ray_chunk(bvh: Bvh, origins: np.ndarray, directions: np.ndarray):
    tri = bvh.triangles
    n = len(origins)
    best_t = np.full(n, np.inf)
    best_face = np.full(n, -1, dtype=np.int64)
    best_bary = np.zeros((n, 3))

    qi = np.arange(n)
    node = np.zeros(n, dtype=np.int64)
    while qi.size:
        t_near, t_far = _slab(origins[qi], directions[qi], bvh.node_min[node], bvh.node_max[node])
        keep = (t_far >= np.maximum(t_near, 0.0)) & (t_near <= best_t[qi])
        qi, node = qi[keep], node[keep]
        leaf = bvh.left[node] < 0

        if np.any(leaf):
            pq, pf = bvh.expand_leaves(qi[leaf], node[leaf])
            hit, t, bary = ray_triangle_intersections(
                origins[pq], directions[pq], tri[pf, 0], tri[pf, 1], tri[pf, 2]
            )
            pq, pf, t, bary = pq[hit], pf[hit], t[hit], bary[hit]
            if pq.size:
                owners, pick = _group_min(pq, t)
                better = t[pick] < best_t[owners]
                owners, pick = owners[better], pick[better]
                best_t[owners] = t[pick]
                best_face[owners] = pf[pick]
                best_bary[owners] = bary[pick]

        inner_q, inner_n = qi[~leaf], node[~leaf]
        qi = np.concatenate([inner_q, inner_q])
        node = np.concatenate([bvh.left[inner_n], bvh.right[inner_n]])
    return best_face >= 0, best_face, best_bary, best_t


def ray_intersect_batch(
    bvh: Bvh, mesh: TriangleMesh, origins: np.ndarray, directions: np.ndarray, workers: int = 1
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """
    批量射线求交，取最近的正 t 交点

    Returns:
        (命中掩码 (n,), 面索引 (n,，未命中为 -1), 重心坐标 (n,3), t (n,，未命中为 inf))
    """
    _check(bvh, mesh)
    origins = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    directions = np.asarray(directions, dtype=np.float64).reshape(-1, 3)
    if len(origins) == 1 and len(directions) > 1:
        origins = np.repeat(origins, len(directions), axis=0)
    if len(directions) == 0:
        return np.zeros(0, bool), np.zeros(0, np.int64), np.zeros((0, 3)), np.zeros(0)
    parts = _run_chunked(
        lambda s, e: _ray_chunk(bvh, origins[s:e], directions[s:e]), len(directions), workers
    )
    return tuple(np.concatenate([p[i] for p in parts]) for i in range(4))


def ray_intersect(bvh: Bvh, mesh: TriangleMesh, origin, direction) -> Optional[RayHit]:
    hit, faces, bary, t = ray_intersect_batch(
        bvh, mesh, np.asarray(origin, dtype=np.float64)[None, :], np.asarray(direction, dtype=np.float64)[None, :]
    )
    if not hit[0]:
        return None
    return RayHit(int(faces[0]), bary[0], float(t[0]))
