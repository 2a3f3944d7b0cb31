"""
网格文件读写工具
支持 OBJ (ASCII) 与 PLY (ASCII / binary_little_endian)，只处理顶点坐标和面索引，
法向、UV 和其他属性被忽略。PLY 通过 plyfile 读写。
"""

import io
from pathlib import Path
from typing import List, Tuple

import numpy as np
from plyfile import PlyData, PlyElement, PlyHeaderParseError, PlyParseError

from utils.errors import EmptyMeshError, MeshIOError, MeshParseError
from utils.log import get_logger
from utils.mesh_core import TriangleMesh, drop_degenerate_faces

logger = get_logger(__name__)

MESH_FORMATS = ("obj", "ply")


def _fan(polygon: List[int]) -> List[Tuple[int, int, int]]:
    return [(polygon[0], polygon[i], polygon[i + 1]) for i in range(1, len(polygon) - 1)]


def _finish(vertices, faces, source: str, drop_degenerate: bool = True) -> TriangleMesh:
    if len(faces) == 0:
        raise EmptyMeshError(f"{source} 中没有任何面")
    vertices = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    if faces.min() < 0 or faces.max() >= len(vertices):
        raise MeshParseError(f"{source} 面索引越界 (顶点数 {len(vertices)})")
    mesh = TriangleMesh(vertices, faces)
    if drop_degenerate:
        mesh, _ = drop_degenerate_faces(mesh)
        if mesh.face_count == 0:
            raise EmptyMeshError(f"{source} 删除退化面后没有剩余面")
    return mesh


# ---- OBJ ----

def _parse_obj(text: str) -> Tuple[List[Tuple[float, float, float]], List[Tuple[int, int, int]]]:
    vertices: List[Tuple[float, float, float]] = []
    faces: List[Tuple[int, int, int]] = []
    # 正索引可以引用后文的顶点，读完后再检查 (最大索引, 行号)
    forward_refs: List[Tuple[int, int]] = []
    for line_number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        tag = parts[0]
        if tag == "v":
            if len(parts) < 4:
                raise MeshParseError("顶点记录至少需要 3 个坐标", line_number)
            try:
                vertices.append((float(parts[1]), float(parts[2]), float(parts[3])))
            except ValueError as exc:
                raise MeshParseError(f"无法解析顶点坐标: {raw.strip()}", line_number) from exc
        elif tag == "f":
            if len(parts) < 4:
                raise MeshParseError("面记录至少需要 3 个顶点", line_number)
            polygon = []
            for token in parts[1:]:
                try:
                    index = int(token.split("/", 1)[0])
                except ValueError as exc:
                    raise MeshParseError(f"无法解析面索引: {token}", line_number) from exc
                if index == 0:
                    raise MeshParseError("OBJ 索引从 1 开始", line_number)
                if index < 0 and len(vertices) + index < 0:
                    raise MeshParseError(f"相对索引 {index} 超出已定义的 {len(vertices)} 个顶点", line_number)
                polygon.append(index - 1 if index > 0 else len(vertices) + index)
            forward_refs.append((max(polygon), line_number))
            faces.extend(_fan(polygon))
    for highest, line_number in forward_refs:
        if highest >= len(vertices):
            raise MeshParseError(f"面索引 {highest + 1} 超出顶点数 {len(vertices)}", line_number)
    return vertices, faces


def _dump_obj(mesh: TriangleMesh) -> bytes:
    buffer = io.StringIO()
    np.savetxt(buffer, mesh.vertices, fmt="v %.17g %.17g %.17g")
    np.savetxt(buffer, mesh.faces + 1, fmt="f %d %d %d")
    return buffer.getvalue().encode("ascii")


# ---- PLY ----

def _ply_faces(ply: PlyData) -> np.ndarray:
    if "face" not in ply:
        return np.zeros((0, 3), dtype=np.int64)
    face = ply["face"]
    names = face.data.dtype.names
    name = next((n for n in ("vertex_indices", "vertex_index") if n in names), None)
    if name is None:
        raise MeshParseError("face 元素缺少 vertex_indices 列表属性")
    polygons = face[name]
    if len(polygons) and all(len(p) == 3 for p in polygons):
        return np.stack(polygons).astype(np.int64)
    triangles = [t for p in polygons for t in _fan([int(i) for i in p])]
    return np.asarray(triangles, dtype=np.int64).reshape(-1, 3)


def _parse_ply(data: bytes) -> Tuple[np.ndarray, np.ndarray]:
    try:
        ply = PlyData.read(io.BytesIO(data))
        if "vertex" not in ply:
            raise MeshParseError("PLY 缺少 vertex 元素")
        vertex = ply["vertex"]
        vertices = np.stack([vertex[axis] for axis in ("x", "y", "z")], axis=1).astype(np.float64)
        faces = _ply_faces(ply)
    except PlyHeaderParseError as exc:
        raise MeshParseError(f"无法解析 PLY 文件头: {exc.message}", exc.line) from exc
    except PlyParseError as exc:
        raise MeshParseError(f"无法解析 PLY 数据: {exc}") from exc
    except (ValueError, KeyError, EOFError) as exc:
        raise MeshParseError(f"无法解析 PLY: {exc}") from exc
    return vertices, faces


def _dump_ply(mesh: TriangleMesh, binary: bool) -> bytes:
    vertex = np.empty(mesh.vertex_count, dtype=[("x", "f8"), ("y", "f8"), ("z", "f8")])
    vertex["x"], vertex["y"], vertex["z"] = mesh.vertices.T
    face = np.empty(mesh.face_count, dtype=[("vertex_indices", "i4", (3,))])
    face["vertex_indices"] = mesh.faces
    ply = PlyData(
        [PlyElement.describe(vertex, "vertex"), PlyElement.describe(face, "face")],
        text=not binary,
        byte_order="<",
    )
    buffer = io.BytesIO()
    ply.write(buffer)
    return buffer.getvalue()


# ---- 对外接口 ----

def load_mesh(data: bytes, fmt: str, drop_degenerate: bool = True) -> TriangleMesh:
    """
    从字节解析网格

    Args:
        data: 文件内容
        fmt: "obj" 或 "ply"
        drop_degenerate: 是否删除零面积面；导入参数化时须保持面列表不变

    Returns:
        TriangleMesh: 三角化后的网格（多边形扇形三角化）
    """
    fmt = fmt.lower()
    if fmt == "obj":
        vertices, faces = _parse_obj(data.decode("utf-8", errors="replace"))
    elif fmt == "ply":
        vertices, faces = _parse_ply(data)
    else:
        raise MeshIOError(f"不支持的网格格式: {fmt}")
    return _finish(vertices, faces, fmt.upper(), drop_degenerate)


def dump_mesh(mesh: TriangleMesh, fmt: str, binary: bool = True) -> bytes:
    fmt = fmt.lower()
    if fmt == "obj":
        return _dump_obj(mesh)
    if fmt == "ply":
        return _dump_ply(mesh, binary)
    raise MeshIOError(f"不支持的网格格式: {fmt}")


def format_from_path(path) -> str:
    suffix = Path(path).suffix.lower().lstrip(".")
    if suffix not in MESH_FORMATS:
        raise MeshIOError(f"无法从扩展名识别网格格式: {path}")
    return suffix


def read_mesh(path, drop_degenerate: bool = True) -> TriangleMesh:
    fmt = format_from_path(path)
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise MeshIOError(f"无法读取网格文件: {path}: {exc}") from exc
    mesh = load_mesh(data, fmt, drop_degenerate)
    logger.info(f"📄 读取网格 {Path(path).name}: {mesh.vertex_count} 顶点, {mesh.face_count} 面")
    return mesh


def write_mesh(mesh: TriangleMesh, path, binary: bool = True) -> None:
    fmt = format_from_path(path)
    target = Path(path)
    try:
        if target.parent and not target.parent.exists():
            target.parent.mkdir(parents=True, exist_ok=True)
        target.write_bytes(dump_mesh(mesh, fmt, binary))
    except OSError as exc:
        raise MeshIOError(f"无法写入网格文件: {path}: {exc}") from exc
    logger.info(f"💾 已保存网格: {target.name}")
