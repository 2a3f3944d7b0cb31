"""命令行可选的目标大小预设"""

from utils.presets import PRESET_NAMES, PRESETS, Preset

__all__ = ["PRESETS", "PRESET_NAMES", "Preset", "describe_presets"]


def describe_presets() -> str:
    return ", ".join(f"{p.name}=(H={p.hidden_layers}, W={p.hidden_width})" for p in PRESETS.values())
