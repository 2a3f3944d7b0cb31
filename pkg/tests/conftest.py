import os
import sys

import numpy as np
import pytest

# 添加项目路径
ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, ROOT)

from utils.icosphere import make_icosphere  # noqa: E402
from utils.mesh_core import TriangleMesh  # noqa: E402
from utils.nn import Mlp, MlpArchitecture  # noqa: E402


def bumpy_radius(directions: np.ndarray, detail: bool = True) -> np.ndarray:
    """r = 1 + 0.2 sin(3θ) sin²φ (+ 0.05 sin(11θ) sin⁴φ)，θ 方位角，φ 极角"""
    x, y, z = directions.T
    theta = np.arctan2(y, x)
    sin_phi = np.sqrt(np.clip(1.0 - z * z, 0.0, 1.0))
    r = 1.0 + 0.2 * np.sin(3 * theta) * sin_phi ** 2
    if detail:
        r = r + 0.05 * np.sin(11 * theta) * sin_phi ** 4
    return r


def make_bumpy_sphere(level: int, detail: bool = True):
    """星形凸起球面及其平凡球面参数化 (mesh, sphere)"""
    sphere = make_icosphere(level).mesh
    radii = bumpy_radius(sphere.vertices, detail)
    return TriangleMesh(sphere.vertices * radii[:, None], sphere.faces), sphere


def make_torus(n_major: int = 8, n_minor: int = 8, major: float = 1.0, minor: float = 0.3) -> TriangleMesh:
    u = np.linspace(0, 2 * np.pi, n_major, endpoint=False)
    v = np.linspace(0, 2 * np.pi, n_minor, endpoint=False)
    uu, vv = np.meshgrid(u, v, indexing="ij")
    vertices = np.stack([
        (major + minor * np.cos(vv)) * np.cos(uu),
        (major + minor * np.cos(vv)) * np.sin(uu),
        minor * np.sin(vv),
    ], axis=-1).reshape(-1, 3)
    faces = []
    for i in range(n_major):
        for j in range(n_minor):
            a = i * n_minor + j
            b = ((i + 1) % n_major) * n_minor + j
            c = ((i + 1) % n_major) * n_minor + (j + 1) % n_minor
            d = i * n_minor + (j + 1) % n_minor
            faces.append([a, b, c])
            faces.append([a, c, d])
    return TriangleMesh(vertices, np.array(faces))


def identity_mlp(dtype=np.float64) -> Mlp:
    """H=1、W=3 的近似恒等网络：silu(x + 20) - 20 ≈ x（误差约 1e-7）"""
    arch = MlpArchitecture.create(1, 3)
    eye = np.eye(3)
    return Mlp(
        arch,
        [eye.astype(dtype), eye.astype(dtype)],
        [np.full(3, 20.0, dtype=dtype), np.full(3, -20.0, dtype=dtype)],
    )


class ScalingStub:
    """q(x) = R x，雅可比 R I"""

    def __init__(self, factor: float = 1.0):
        self.factor = factor

    def forward(self, points):
        return self.factor * np.asarray(points, dtype=np.float64)

    def input_jacobian_batch(self, points):
        n = len(np.asarray(points).reshape(-1, 3))
        return np.broadcast_to(self.factor * np.eye(3), (n, 3, 3)).copy()


class CapScalingStub:
    """z > z_min 的球冠放大 factor 倍，其余保持不变"""

    def __init__(self, factor: float, z_min: float):
        self.factor = factor
        self.z_min = z_min

    def _scale(self, points):
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        return np.where(points[:, 2] > self.z_min, self.factor, 1.0)

    def forward(self, points):
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        return points * self._scale(points)[:, None]

    def input_jacobian_batch(self, points):
        s = self._scale(points)
        return s[:, None, None] * np.eye(3)[None, :, :]


@pytest.fixture
def icosahedron():
    return make_icosphere(0).mesh


@pytest.fixture
def icosphere3():
    return make_icosphere(3)


@pytest.fixture
def bumpy():
    return make_bumpy_sphere(3)


@pytest.fixture
def torus():
    return make_torus()


@pytest.fixture
def identity_net():
    return identity_mlp()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
