"""
目标大小预设

每个预设固定精细网络 q_f 的隐藏层数与宽度；
粗糙网络 q_c 在所有码率下都是 20 层 x 12 宽、无位置编码。
"""

from dataclasses import dataclass
from typing import Dict

COARSE_HIDDEN_LAYERS = 20
COARSE_HIDDEN_WIDTH = 12
FINE_POSITIONAL_LEVELS = 10


@dataclass(frozen=True)
class Preset:
    name: str
    hidden_layers: int
    hidden_width: int


PRESETS: Dict[str, Preset] = {
    "50KB": Preset("50KB", 18, 36),
    "85KB": Preset("85KB", 20, 44),
    "165KB": Preset("165KB", 24, 58),
    "260KB": Preset("260KB", 28, 68),
}

PRESET_NAMES = tuple(PRESETS) + ("custom",)
