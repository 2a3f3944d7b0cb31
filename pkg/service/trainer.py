"""
两级 INR 训练

- train_coarse: 在 M_s 上按面积均匀采样，拟合 q_c(p) ≈ P_c^-1(p)
- train_fine: 按失真表（或均匀）采样球面方向，q_c 冻结，拟合位移 q_f(PE(q_c(p))) ≈ P^-1(p) - q_c(p)

每次迭代的随机数流由 (seed, 阶段, 迭代号) 派生，结果与工作线程数无关。
"""

import json
import sys
from typing import Callable, Dict, Optional, TextIO, Tuple

import numpy as np

from utils.distortion import DistortionTable, sample_sphere_uniform
from utils.errors import NumericError, TrainingError
from utils.icosphere import normalize_rows
from utils.log import get_logger
from utils.mesh_core import cumulative_distribution, sample_surface_with_rng
from utils.nn import COARSE_ARCHITECTURE, Mlp, MlpArchitecture, mlp_new, positional_encode
from utils.optim import OptimizerState, adamw_step, cosine_lr
from utils.settings import TrainConfig
from utils.spherical_param import ParameterizedShape, SphereLocator, correspond_batch, locate_directions

logger = get_logger(__name__)

STAGE_COARSE = 0
STAGE_FINE = 1
_STAGE_NAMES = {STAGE_COARSE: "coarse", STAGE_FINE: "fine"}

__all__ = [
    "COARSE_ARCHITECTURE",
    "ProgressRecorder",
    "TrainConfig",
    "coarse_batch",
    "fine_batch",
    "fine_architecture",
    "iteration_rng",
    "train_coarse",
    "train_fine",
]


class ProgressRecorder:
    """把训练进度写成逐行 JSON：{"stage", "iteration", "loss", "lr"}"""

    def __init__(self, stream: Optional[TextIO] = None, every: int = 100):
        self.stream = stream
        self.every = max(1, every)
        self.final_losses: Dict[str, float] = {}

    @classmethod
    def to_stdout(cls, every: int = 100) -> "ProgressRecorder":
        return cls(sys.stdout, every)

    def record(self, stage: str, iteration: int, loss: float, lr: float, last: bool = False) -> None:
        self.final_losses[stage] = loss
        if self.stream is None:
            return
        if iteration % self.every and not last:
            return
        self.stream.write(json.dumps({"stage": stage, "iteration": iteration, "loss": loss, "lr": lr}) + "\n")
        self.stream.flush()


def iteration_rng(seed: int, stage: int, iteration: int) -> np.random.Generator:
    return np.random.default_rng([seed, stage, iteration])


def fine_architecture(config: TrainConfig) -> MlpArchitecture:
    layers, width, levels = config.fine_layout()
    return MlpArchitecture.create(layers, width, levels)


def _optimizer(mlp: Mlp, config: TrainConfig, total: int) -> OptimizerState:
    return OptimizerState.for_model(
        mlp,
        base_lr=config.base_lr,
        total_steps=total,
        weight_decay=config.weight_decay,
        beta1=config.beta1,
        beta2=config.beta2,
        epsilon=config.epsilon,
    )


def _fit(
    mlp: Mlp,
    config: TrainConfig,
    stage: int,
    total: int,
    make_batch: Callable[[np.random.Generator], tuple],
    progress: Optional[ProgressRecorder],
) -> Mlp:
    """通用训练循环：每步取一批 (输入, 目标)，余弦学习率下做一次 AdamW"""
    name = _STAGE_NAMES[stage]
    state = _optimizer(mlp, config, total)
    for iteration in range(total):
        inputs, targets = make_batch(iteration_rng(config.seed, stage, iteration))
        try:
            loss, grads = mlp.forward_backward(inputs, targets)
        except NumericError as exc:
            raise TrainingError(f"{name} 阶段第 {iteration} 次迭代发散: {exc.message}") from exc
        lr = cosine_lr(iteration, total, config.base_lr)
        adamw_step(state, mlp, grads, lr)
        if progress is not None:
            progress.record(name, iteration, loss, lr, last=iteration == total - 1)
    return mlp


def coarse_batch(
    shape: ParameterizedShape, batch_size: int, rng: np.random.Generator, cdf: Optional[np.ndarray] = None
) -> Tuple[np.ndarray, np.ndarray]:
    """M_s 上按面积均匀采样，返回 (单位方向 p, P_c^-1(p))；目标均落在 M_c 的面上"""
    samples = sample_surface_with_rng(shape.sphere, batch_size, rng, cdf=cdf)
    points = normalize_rows(samples.positions)
    targets = correspond_batch(shape, "coarse", samples.face_indices, samples.barycentric)
    return points, targets


def fine_batch(
    shape: ParameterizedShape, q_c, locator: SphereLocator, directions: np.ndarray, workers: int = 1
) -> Tuple[np.ndarray, np.ndarray]:
    """
    方向 p 的精细阶段样本

    Returns:
        (q_c(p), 位移目标 D(p) = P^-1(p) - q_c(p))
    """
    faces, bary = locate_directions(locator, directions, workers)
    coarse_points = np.asarray(q_c.forward(directions), dtype=np.float64)
    targets = correspond_batch(shape, "original", faces, bary) - coarse_points
    return coarse_points, targets


def train_coarse(
    shape: ParameterizedShape,
    config: TrainConfig,
    progress: Optional[ProgressRecorder] = None,
    dtype=np.float32,
) -> Mlp:
    """
    训练粗糙网络 q_c（20x12，无位置编码）

    Args:
        shape: (M, M_s, M_c)
        config: 训练配置，使用 coarse_iterations / batch_size / base_lr / seed
        progress: 进度记录器

    Returns:
        Mlp: 训练后的 q_c；0 次迭代时即初始化网络
    """
    q_c = mlp_new(COARSE_ARCHITECTURE, config.seed, dtype)
    total = config.coarse_iterations
    logger.info(f"粗糙网络: {q_c.parameter_count} 个参数, {total} 次迭代, batch {config.batch_size}")
    if total == 0:
        return q_c

    cdf = cumulative_distribution(shape.sphere.face_areas())

    def make_batch(rng: np.random.Generator):
        return coarse_batch(shape, config.batch_size, rng, cdf)

    return _fit(q_c, config, STAGE_COARSE, total, make_batch, progress)


def train_fine(
    shape: ParameterizedShape,
    q_c: Mlp,
    table: Optional[DistortionTable],
    locator: SphereLocator,
    config: TrainConfig,
    progress: Optional[ProgressRecorder] = None,
    dtype=np.float32,
) -> Mlp:
    """
    训练精细位移网络 q_f，q_c 参数保持不变

    Args:
        shape: (M, M_s, M_c)
        q_c: 已训练的粗糙网络（只读）
        table: 失真采样表；fine_sampling="uniform" 时可为 None
        locator: M_s 上的方向定位器
        config: 训练配置

    Returns:
        Mlp: 训练后的 q_f
    """
    arch = fine_architecture(config)
    q_f = mlp_new(arch, config.seed + 1, dtype)
    total = config.fine_iterations
    adaptive = config.fine_sampling == "adaptive"
    if adaptive and table is None:
        raise TrainingError("自适应采样需要失真表")
    logger.info(
        f"精细网络: {q_f.parameter_count} 个参数 (H={arch.hidden_layers}, W={arch.hidden_width}, "
        f"L={arch.positional_levels}), {total} 次迭代, 采样方式 {config.fine_sampling}"
    )
    if total == 0:
        return q_f

    def make_batch(rng: np.random.Generator):
        if adaptive:
            directions = table.sample(config.batch_size, rng)
        else:
            directions = sample_sphere_uniform(config.batch_size, rng)
        coarse_points, targets = fine_batch(shape, q_c, locator, directions, config.workers)
        return positional_encode(coarse_points, arch.positional_levels), targets

    return _fit(q_f, config, STAGE_FINE, total, make_batch, progress)
