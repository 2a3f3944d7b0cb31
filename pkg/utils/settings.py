"""
配置加载

配置来源优先级（高到低）：命令行参数 > 环境变量 (HNSC_ 前缀, "__" 分隔嵌套字段)
> .env 文件 > 配置文件 (JSON 或 YAML) > 模型默认值。
默认配置文件为 config/codec_settings.json，缺失时使用默认配置。
"""

import json
from pathlib import Path
from typing import Any, Dict, Literal, Optional, Tuple

import yaml
from pydantic import BaseModel, Field, NonNegativeInt, PositiveFloat, PositiveInt, ValidationError, model_validator
from pydantic_settings import BaseSettings, PydanticBaseSettingsSource, SettingsConfigDict

from utils.errors import ConfigError
from utils.log import get_logger
from utils.presets import FINE_POSITIONAL_LEVELS, PRESETS

logger = get_logger(__name__)

PROJECT_ROOT = Path(__file__).resolve().parent.parent
DEFAULT_CONFIG_PATH = PROJECT_ROOT / "config" / "codec_settings.json"


class ParameterizationOptions(BaseModel):
    """球面参数化（平滑-投影）选项"""

    max_iterations: PositiveInt = 2000
    step_size: float = Field(0.5, gt=0.0, le=1.0)
    # 已接受步的最大顶点位移低于该值且仍有翻转面时视为停滞
    tolerance: PositiveFloat = 1e-9


class TrainConfig(BaseModel):
    """编码训练配置"""

    coarse_iterations: NonNegativeInt = 50_000
    fine_iterations: NonNegativeInt = 15_000
    batch_size: PositiveInt = 2048
    base_lr: PositiveFloat = 1e-3
    weight_decay: float = Field(1e-4, ge=0.0)
    beta1: float = Field(0.9, ge=0.0, lt=1.0)
    beta2: float = Field(0.999, ge=0.0, lt=1.0)
    epsilon: PositiveFloat = 1e-8
    seed: NonNegativeInt = 0
    preset: Literal["50KB", "85KB", "165KB", "260KB", "custom"] = "50KB"
    fine_hidden_layers: Optional[PositiveInt] = None
    fine_hidden_width: Optional[PositiveInt] = None
    positional_levels: NonNegativeInt = FINE_POSITIONAL_LEVELS
    table_level: NonNegativeInt = 5
    area_weighted_table: bool = False
    fine_sampling: Literal["adaptive", "uniform"] = "adaptive"
    smoothing_iterations: NonNegativeInt = 30
    smoothing_lambda: float = Field(0.5, gt=0.0, le=1.0)
    quantize: bool = True
    log_every: PositiveInt = 100
    workers: PositiveInt = 1

    @model_validator(mode="after")
    def _check_custom_arch(self) -> "TrainConfig":
        if self.preset == "custom" and (self.fine_hidden_layers is None or self.fine_hidden_width is None):
            raise ValueError("preset=custom 需要同时指定 fine_hidden_layers 和 fine_hidden_width")
        return self

    def fine_layout(self) -> Tuple[int, int, int]:
        """返回 q_f 的 (隐藏层数, 宽度, 位置编码级数)；自定义值覆盖预设"""
        if self.preset == "custom":
            return self.fine_hidden_layers, self.fine_hidden_width, self.positional_levels
        preset = PRESETS[self.preset]
        layers = self.fine_hidden_layers or preset.hidden_layers
        width = self.fine_hidden_width or preset.hidden_width
        return layers, width, self.positional_levels


class DecodeOptions(BaseModel):
    level: NonNegativeInt = 6
    adaptive: bool = False
    ratio_threshold: PositiveFloat = 4.0
    max_rounds: NonNegativeInt = 3


class MetricsOptions(BaseModel):
    samples: PositiveInt = 100_000
    seed: NonNegativeInt = 0
    direction: Literal["recon->ref", "ref->recon", "symmetric"] = "symmetric"


class CodecSettings(BaseSettings):
    """全局配置根对象"""

    model_config = SettingsConfigDict(
        env_prefix="HNSC_",
        env_nested_delimiter="__",
        env_file=".env",
        extra="ignore",
    )

    train: TrainConfig = TrainConfig()
    param: ParameterizationOptions = ParameterizationOptions()
    decode: DecodeOptions = DecodeOptions()
    metrics: MetricsOptions = MetricsOptions()
    log_level: str = "INFO"
    workers: PositiveInt = 1

    @classmethod
    def settings_customise_sources(
        cls,
        settings_cls,
        init_settings: PydanticBaseSettingsSource,
        env_settings: PydanticBaseSettingsSource,
        dotenv_settings: PydanticBaseSettingsSource,
        file_secret_settings: PydanticBaseSettingsSource,
    ):
        # 配置文件内容通过 init 传入，环境变量优先于它
        return env_settings, dotenv_settings, init_settings, file_secret_settings


def _read_config_file(path: Path) -> Dict[str, Any]:
    text = path.read_text(encoding="utf-8")
    if path.suffix.lower() in (".yaml", ".yml"):
        data = yaml.safe_load(text)
    else:
        data = json.loads(text)
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"配置文件顶层必须是映射: {path}")
    return data


def load_codec_settings(config_path: Optional[str] = None) -> CodecSettings:
    """
    加载编解码器配置

    Args:
        config_path: 配置文件路径 (JSON/YAML)，None 时使用 config/codec_settings.json

    Returns:
        CodecSettings: 合并后的配置
    """
    data: Dict[str, Any] = {}
    if config_path is None:
        if DEFAULT_CONFIG_PATH.exists():
            try:
                data = _read_config_file(DEFAULT_CONFIG_PATH)
            except (OSError, ValueError, yaml.YAMLError) as exc:
                logger.warning(f"⚠️ 默认配置文件读取失败，使用默认配置: {exc}")
        else:
            logger.warning(f"⚠️ 配置文件 {DEFAULT_CONFIG_PATH} 不存在，使用默认配置")
    else:
        path = Path(config_path)
        if not path.exists():
            raise ConfigError(f"配置文件不存在: {path}")
        try:
            data = _read_config_file(path)
        except (OSError, ValueError, yaml.YAMLError) as exc:
            raise ConfigError(f"配置文件解析失败: {path}: {exc}") from exc

    try:
        return CodecSettings(**data)
    except ValidationError as exc:
        raise ConfigError(f"配置校验失败: {exc}") from exc


def apply_overrides(model: BaseModel, overrides: Dict[str, Any]) -> BaseModel:
    """用非 None 的覆盖值重新校验生成配置对象"""
    updates = {key: value for key, value in overrides.items() if value is not None}
    if not updates:
        return model
    try:
        return type(model).model_validate({**model.model_dump(), **updates})
    except ValidationError as exc:
        raise ConfigError(f"配置校验失败: {exc}") from exc
