"""
微型残差 MLP 引擎 (numpy)

结构：输入 -> W 仿射 + SiLU，(H-1) 个残差块 y + silu(W y + b)，W -> 3 仿射输出。
提供前向、MSE 反向传播、前向模式输入雅可比、位置编码与 fp16 量化。
"""

from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from scipy.special import expit

from utils.errors import NumericError, QuantizationOverflowError
from utils.presets import COARSE_HIDDEN_LAYERS, COARSE_HIDDEN_WIDTH

OUTPUT_DIM = 3
FP16_MAX = 65504.0
FINAL_LAYER_SCALE = 1e-2


def encoded_dim(positional_levels: int) -> int:
    return 3 + 6 * positional_levels


@dataclass(frozen=True)
class MlpArchitecture:
    input_dim: int
    hidden_layers: int
    hidden_width: int
    output_dim: int = OUTPUT_DIM
    positional_levels: int = 0

    def __post_init__(self):
        if self.hidden_layers < 1 or self.hidden_width < 1:
            raise ValueError("隐藏层数与宽度必须 >= 1")
        if self.output_dim != OUTPUT_DIM:
            raise ValueError("输出维度必须为 3")
        if self.positional_levels < 0:
            raise ValueError("位置编码级数必须 >= 0")
        if self.input_dim != encoded_dim(self.positional_levels):
            raise ValueError(
                f"input_dim={self.input_dim} 与位置编码级数 L={self.positional_levels} 不匹配"
            )

    @classmethod
    def create(cls, hidden_layers: int, hidden_width: int, positional_levels: int = 0) -> "MlpArchitecture":
        return cls(encoded_dim(positional_levels), hidden_layers, hidden_width, OUTPUT_DIM, positional_levels)

    def layer_shapes(self) -> List[Tuple[int, int]]:
        """每个仿射层的权重形状 (out, in)"""
        w = self.hidden_width
        shapes = [(w, self.input_dim)]
        shapes += [(w, w)] * (self.hidden_layers - 1)
        shapes.append((self.output_dim, w))
        return shapes

    @property
    def parameter_count(self) -> int:
        return sum(o * i + o for o, i in self.layer_shapes())


COARSE_ARCHITECTURE = MlpArchitecture.create(COARSE_HIDDEN_LAYERS, COARSE_HIDDEN_WIDTH)


def silu(z: np.ndarray) -> np.ndarray:
    return z * expit(z)


def silu_grad(z: np.ndarray) -> np.ndarray:
    s = expit(z)
    return s * (1.0 + z * (1.0 - s))


def positional_encode(points: np.ndarray, levels: int) -> np.ndarray:
    """
    位置编码 [p, sin(2^0 π p), cos(2^0 π p), ..., sin(2^(L-1) π p), cos(2^(L-1) π p)]

    Args:
        points: (n,3) 或 (3,) 坐标
        levels: 频率级数 L

    Returns:
        np.ndarray: (n, 3+6L) 或 (3+6L,)
    """
    points = np.asarray(points)
    single = points.ndim == 1
    batch = points.reshape(-1, 3)
    parts = [batch]
    for level in range(levels):
        scaled = batch * (np.pi * 2.0 ** level)
        parts.append(np.sin(scaled))
        parts.append(np.cos(scaled))
    out = np.concatenate(parts, axis=1)
    return out[0] if single else out


class Mlp:
    """参数按层存储：weights[k] 形状 (out, in)，biases[k] 形状 (out,)"""

    def __init__(self, architecture: MlpArchitecture, weights: List[np.ndarray], biases: List[np.ndarray]):
        shapes = architecture.layer_shapes()
        if len(weights) != len(shapes) or len(biases) != len(shapes):
            raise ValueError("层数与结构描述不一致")
        for k, (shape, w, b) in enumerate(zip(shapes, weights, biases)):
            if w.shape != shape or b.shape != (shape[0],):
                raise ValueError(f"第 {k} 层参数形状 {w.shape}/{b.shape} 与结构 {shape} 不一致")
        self.architecture = architecture
        self.weights = weights
        self.biases = biases

    @property
    def dtype(self) -> np.dtype:
        return self.weights[0].dtype

    @property
    def parameter_count(self) -> int:
        return self.architecture.parameter_count

    def parameters(self) -> List[np.ndarray]:
        """按层交替的参数数组 [W0, b0, W1, b1, ...]（引用）"""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def astype(self, dtype) -> "Mlp":
        return Mlp(
            self.architecture,
            [w.astype(dtype) for w in self.weights],
            [b.astype(dtype) for b in self.biases],
        )

    def copy(self) -> "Mlp":
        return self.astype(self.dtype)

    def flatten(self) -> np.ndarray:
        """按层展开：每层先权重（行优先）再偏置"""
        return np.concatenate([p.ravel() for p in self.parameters()])

    @classmethod
    def from_flat(cls, architecture: MlpArchitecture, values: np.ndarray, dtype=np.float32) -> "Mlp":
        values = np.asarray(values)
        if values.size != architecture.parameter_count:
            raise ValueError(f"参数个数 {values.size} 与结构要求 {architecture.parameter_count} 不一致")
        weights, biases = [], []
        offset = 0
        for out_dim, in_dim in architecture.layer_shapes():
            size = out_dim * in_dim
            weights.append(values[offset: offset + size].reshape(out_dim, in_dim).astype(dtype))
            offset += size
            biases.append(values[offset: offset + out_dim].astype(dtype))
            offset += out_dim
        return cls(architecture, weights, biases)

    @classmethod
    def zeros(cls, architecture: MlpArchitecture, dtype=np.float32) -> "Mlp":
        return cls.from_flat(architecture, np.zeros(architecture.parameter_count), dtype)

    # ---- 前向 ----

    def _check_input(self, batch: np.ndarray) -> np.ndarray:
        batch = np.asarray(batch, dtype=self.dtype)
        if batch.ndim != 2 or batch.shape[1] != self.architecture.input_dim:
            raise ValueError(
                f"输入形状 {batch.shape} 与结构输入维度 {self.architecture.input_dim} 不一致"
            )
        return batch

    def _forward_cached(self, x: np.ndarray):
        pre = []
        acts = [x]
        z = x @ self.weights[0].T + self.biases[0]
        y = silu(z)
        pre.append(z)
        acts.append(y)
        for w, b in zip(self.weights[1:-1], self.biases[1:-1]):
            z = y @ w.T + b
            y = y + silu(z)
            pre.append(z)
            acts.append(y)
        out = y @ self.weights[-1].T + self.biases[-1]
        return out, pre, acts

    def forward(self, batch: np.ndarray) -> np.ndarray:
        """(n, input_dim) -> (n, 3)"""
        x = self._check_input(batch)
        y = silu(x @ self.weights[0].T + self.biases[0])
        for w, b in zip(self.weights[1:-1], self.biases[1:-1]):
            y = y + silu(y @ w.T + b)
        out = y @ self.weights[-1].T + self.biases[-1]
        if not np.all(np.isfinite(out)):
            raise NumericError("前向输出包含非有限值")
        return out

    __call__ = forward

    def forward_backward(self, batch: np.ndarray, targets: np.ndarray) -> Tuple[float, List[np.ndarray]]:
        """
        均方误差 mean_n ||f(x_n) - t_n||^2 及其对全部参数的精确梯度

        Returns:
            (loss, 与 parameters() 同序的梯度列表)
        """
        x = self._check_input(batch)
        targets = np.asarray(targets, dtype=self.dtype).reshape(len(x), OUTPUT_DIM)
        out, pre, acts = self._forward_cached(x)
        residual = out - targets
        loss = float(np.mean(np.sum(residual.astype(np.float64) ** 2, axis=1)))
        if not np.isfinite(loss):
            raise NumericError("损失为非有限值")

        n = len(x)
        grad_out = (2.0 / n) * residual
        grads_w: List[Optional[np.ndarray]] = [None] * len(self.weights)
        grads_b: List[Optional[np.ndarray]] = [None] * len(self.weights)

        grads_w[-1] = grad_out.T @ acts[-1]
        grads_b[-1] = grad_out.sum(axis=0)
        grad_y = grad_out @ self.weights[-1]

        for k in range(len(self.weights) - 2, 0, -1):
            grad_z = grad_y * silu_grad(pre[k])
            grads_w[k] = grad_z.T @ acts[k]
            grads_b[k] = grad_z.sum(axis=0)
            grad_y = grad_y + grad_z @ self.weights[k]

        grad_z = grad_y * silu_grad(pre[0])
        grads_w[0] = grad_z.T @ acts[0]
        grads_b[0] = grad_z.sum(axis=0)

        grads: List[np.ndarray] = []
        for gw, gb in zip(grads_w, grads_b):
            grads.extend((gw, gb))
        return loss, grads

    # ---- 输入雅可比 ----

    def input_jacobian_batch(self, points: np.ndarray) -> np.ndarray:
        """
        前向模式传播输入切向量，得到 (n, 3, input_dim) 雅可比

        每个输入维度一条切向量，与前向计算同一遍完成。
        """
        x = self._check_input(np.asarray(points).reshape(-1, self.architecture.input_dim))
        dim = self.architecture.input_dim
        z = x @ self.weights[0].T + self.biases[0]
        y = silu(z)
        # 切向量 (n, dim, width)：d y / d x_j
        tangent = np.broadcast_to(self.weights[0].T[None, :, :], (len(x), dim, self.weights[0].shape[0]))
        tangent = tangent * silu_grad(z)[:, None, :]
        for w, b in zip(self.weights[1:-1], self.biases[1:-1]):
            z = y @ w.T + b
            y = y + silu(z)
            tangent = tangent + (tangent @ w.T) * silu_grad(z)[:, None, :]
        out_tangent = tangent @ self.weights[-1].T
        return np.transpose(out_tangent, (0, 2, 1))

    def input_jacobian(self, point: np.ndarray) -> np.ndarray:
        """单点 (3, input_dim) 雅可比"""
        return self.input_jacobian_batch(np.asarray(point)[None, :])[0]


def mlp_new(architecture: MlpArchitecture, seed: int, dtype=np.float32) -> Mlp:
    """
    初始化网络

    隐藏权重 ~ U(-sqrt(6/fan_in), +sqrt(6/fan_in))，残差块权重再乘 1/sqrt(H-1)
    以免深层残差叠加放大激活；偏置为零；输出层权重乘 1e-2，使初始输出接近零。
    """
    rng = np.random.default_rng(seed)
    shapes = architecture.layer_shapes()
    residual_scale = 1.0 / np.sqrt(max(architecture.hidden_layers - 1, 1))
    weights, biases = [], []
    for k, (out_dim, in_dim) in enumerate(shapes):
        bound = np.sqrt(6.0 / in_dim)
        w = rng.uniform(-bound, bound, size=(out_dim, in_dim))
        if k == len(shapes) - 1:
            w *= FINAL_LAYER_SCALE
        elif k > 0:
            w *= residual_scale
        weights.append(w.astype(dtype))
        biases.append(np.zeros(out_dim, dtype=dtype))
    return Mlp(architecture, weights, biases)


# ---- fp16 量化 ----

@dataclass
class QuantizedParameters:
    architecture: MlpArchitecture
    values: np.ndarray  # float16，按 Mlp.flatten 顺序

    @property
    def nbytes(self) -> int:
        return int(self.values.size * 2)


def _locate_parameter(architecture: MlpArchitecture, flat_index: int) -> str:
    offset = 0
    for layer, (out_dim, in_dim) in enumerate(architecture.layer_shapes()):
        size = out_dim * in_dim
        if flat_index < offset + size:
            row, col = divmod(flat_index - offset, in_dim)
            return f"第 {layer} 层 weight[{row},{col}]"
        offset += size
        if flat_index < offset + out_dim:
            return f"第 {layer} 层 bias[{flat_index - offset}]"
        offset += out_dim
    return f"参数 #{flat_index}"


def quantize(mlp: Mlp) -> QuantizedParameters:
    """就近舍入（偶数优先）转换为 binary16；超出 fp16 范围时报错并指出参数位置"""
    flat = mlp.flatten().astype(np.float64)
    overflow = np.flatnonzero(~np.isfinite(flat) | (np.abs(flat) > FP16_MAX))
    if overflow.size:
        where = _locate_parameter(mlp.architecture, int(overflow[0]))
        raise QuantizationOverflowError(f"参数超出 fp16 范围: {where} = {flat[overflow[0]]!r}")
    return QuantizedParameters(mlp.architecture, flat.astype(np.float16))


def dequantize(quantized: QuantizedParameters, dtype=np.float32) -> Mlp:
    return Mlp.from_flat(quantized.architecture, quantized.values.astype(dtype), dtype)
