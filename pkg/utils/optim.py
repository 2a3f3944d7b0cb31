"""
AdamW 优化器与余弦退火学习率
"""

import math
from dataclasses import dataclass, field
from typing import List

import numpy as np

from utils.nn import Mlp


@dataclass
class OptimizerState:
    """每个参数数组对应一组一阶/二阶矩，顺序与 Mlp.parameters() 一致"""

    first_moments: List[np.ndarray]
    second_moments: List[np.ndarray]
    base_lr: float = 1e-3
    total_steps: int = 1
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = field(default=0)

    @classmethod
    def for_model(
        cls,
        mlp: Mlp,
        base_lr: float = 1e-3,
        total_steps: int = 1,
        weight_decay: float = 1e-4,
        beta1: float = 0.9,
        beta2: float = 0.999,
        epsilon: float = 1e-8,
    ) -> "OptimizerState":
        params = mlp.parameters()
        return cls(
            first_moments=[np.zeros_like(p) for p in params],
            second_moments=[np.zeros_like(p) for p in params],
            base_lr=base_lr,
            total_steps=total_steps,
            weight_decay=weight_decay,
            beta1=beta1,
            beta2=beta2,
            epsilon=epsilon,
        )

    def current_lr(self) -> float:
        return cosine_lr(min(self.step, self.total_steps), self.total_steps, self.base_lr)


def cosine_lr(step: int, total: int, base_lr: float) -> float:
    """base_lr * 0.5 * (1 + cos(π step / total))，step 从 0 退火到 total"""
    if total <= 0:
        return base_lr
    if not 0 <= step <= total:
        raise ValueError(f"step={step} 超出 [0, {total}]")
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * step / total))


def adamw_step(state: OptimizerState, mlp: Mlp, gradients: List[np.ndarray], step_lr: float) -> None:
    """
    原地执行一次 AdamW 更新（解耦权重衰减 + 偏差校正）

    Args:
        state: 优化器状态，step 自增
        mlp: 被更新的网络
        gradients: 与 mlp.parameters() 同序的梯度
        step_lr: 本步学习率
    """
    params = mlp.parameters()
    if len(gradients) != len(params):
        raise ValueError("梯度数量与参数数量不一致")

    state.step += 1
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1 ** state.step
    correction2 = 1.0 - b2 ** state.step

    for p, g, m, v in zip(params, gradients, state.first_moments, state.second_moments):
        if g.shape != p.shape:
            raise ValueError(f"梯度形状 {g.shape} 与参数形状 {p.shape} 不一致")
        if state.weight_decay:
            p -= step_lr * state.weight_decay * p
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / correction1
        v_hat = v / correction2
        p -= step_lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
