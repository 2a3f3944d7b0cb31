"""
HNSC 压缩容器

布局（小端）：
    magic "HNSC" | version u16 | flags u16 (bit0 = fp16)
    q_c 头 (input_dim, H, W, L) u16 x4 | q_f 头 u16 x4
    c u16 | lambda f32 | scale f32 | offset f32 x3
    q_c 参数 | q_f 参数（逐层，权重行优先后接偏置）
"""

import struct
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from utils.errors import FormatError, TruncationError, UnsupportedVersionError
from utils.nn import Mlp, MlpArchitecture, dequantize, quantize

MAGIC = b"HNSC"
FORMAT_VERSION = 1
FLAG_FP16 = 0x1

_PREAMBLE = struct.Struct("<4sHH")
_ARCH = struct.Struct("<4H")
_TAIL = struct.Struct("<Hf4f")
HEADER_SIZE = _PREAMBLE.size + 2 * _ARCH.size + _TAIL.size


@dataclass
class CompressedModel:
    """编码结果；coarse/fine 为工作精度网络（量化模型中保存的是反量化后的值）"""

    coarse: Mlp
    fine: Mlp
    quantized: bool
    smoothing_iterations: int
    smoothing_lambda: float
    scale: float
    offset: np.ndarray
    version: int = FORMAT_VERSION

    @property
    def bytes_per_parameter(self) -> int:
        return 2 if self.quantized else 4

    @property
    def coarse_payload_bytes(self) -> int:
        return self.coarse.parameter_count * self.bytes_per_parameter

    @property
    def fine_payload_bytes(self) -> int:
        return self.fine.parameter_count * self.bytes_per_parameter

    @property
    def total_bytes(self) -> int:
        return HEADER_SIZE + self.coarse_payload_bytes + self.fine_payload_bytes


def _pack_arch(arch: MlpArchitecture) -> bytes:
    return _ARCH.pack(arch.input_dim, arch.hidden_layers, arch.hidden_width, arch.positional_levels)


def _unpack_arch(data: bytes, offset: int) -> MlpArchitecture:
    input_dim, layers, width, levels = _ARCH.unpack_from(data, offset)
    try:
        return MlpArchitecture(input_dim, layers, width, 3, levels)
    except ValueError as e:
        raise FormatError(f"网络结构头无效: {e}")


def _payload(mlp: Mlp, quantized: bool) -> bytes:
    if quantized:
        return quantize(mlp).values.astype("<f2").tobytes()
    return mlp.flatten().astype("<f4").tobytes()


def serialize(model: CompressedModel) -> bytes:
    """
    把 CompressedModel 写成字节串

    Returns:
        bytes: 完整容器，长度即报告的压缩大小
    """
    if not 0 <= model.smoothing_iterations <= 0xFFFF:
        raise FormatError(f"平滑迭代次数 {model.smoothing_iterations} 超出 u16 范围")
    flags = FLAG_FP16 if model.quantized else 0
    offset = np.asarray(model.offset, dtype=np.float64).reshape(3)
    header = b"".join((
        _PREAMBLE.pack(MAGIC, FORMAT_VERSION, flags),
        _pack_arch(model.coarse.architecture),
        _pack_arch(model.fine.architecture),
        _TAIL.pack(model.smoothing_iterations, model.smoothing_lambda, model.scale, *offset),
    ))
    return header + _payload(model.coarse, model.quantized) + _payload(model.fine, model.quantized)


def read_header(data: bytes) -> Tuple[int, int, MlpArchitecture, MlpArchitecture, Tuple]:
    """解析并校验固定长度头，返回 (version, flags, coarse 结构, fine 结构, 尾部字段)"""
    if len(data) < HEADER_SIZE:
        raise TruncationError(f"truncation: 文件长度 {len(data)} 字节，小于头部长度 {HEADER_SIZE}")
    magic, version, flags = _PREAMBLE.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatError(f"魔数错误: {magic!r}，不是 HNSC 容器")
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"unsupported version: {version}（支持 {FORMAT_VERSION}）")
    coarse_arch = _unpack_arch(data, _PREAMBLE.size)
    fine_arch = _unpack_arch(data, _PREAMBLE.size + _ARCH.size)
    tail = _TAIL.unpack_from(data, _PREAMBLE.size + 2 * _ARCH.size)
    return version, flags, coarse_arch, fine_arch, tail


def deserialize(data: bytes) -> CompressedModel:
    """
    从字节串恢复 CompressedModel

    Raises:
        TruncationError: 长度与头部声明不符
        FormatError: 魔数错误或结构头无效
        UnsupportedVersionError: 版本不是 1
    """
    version, flags, coarse_arch, fine_arch, tail = read_header(data)
    quantized = bool(flags & FLAG_FP16)
    width = 2 if quantized else 4
    expected = HEADER_SIZE + (coarse_arch.parameter_count + fine_arch.parameter_count) * width
    if len(data) != expected:
        raise TruncationError(f"truncation: 头部声明 {expected} 字节，实际 {len(data)} 字节")

    dtype = "<f2" if quantized else "<f4"
    coarse_end = HEADER_SIZE + coarse_arch.parameter_count * width
    coarse_values = np.frombuffer(data, dtype=dtype, count=coarse_arch.parameter_count, offset=HEADER_SIZE)
    fine_values = np.frombuffer(data, dtype=dtype, count=fine_arch.parameter_count, offset=coarse_end)
    if not (np.all(np.isfinite(coarse_values)) and np.all(np.isfinite(fine_values))):
        raise FormatError("参数包含非有限值")

    c, lam, scale, ox, oy, oz = tail
    return CompressedModel(
        coarse=Mlp.from_flat(coarse_arch, coarse_values.astype(np.float32)),
        fine=Mlp.from_flat(fine_arch, fine_values.astype(np.float32)),
        quantized=quantized,
        smoothing_iterations=int(c),
        smoothing_lambda=float(lam),
        scale=float(scale),
        offset=np.array([ox, oy, oz], dtype=np.float64),
        version=version,
    )


def quantize_model(model: CompressedModel) -> CompressedModel:
    """返回量化后的模型（网络替换为 fp16 反量化值）"""
    if model.quantized:
        return model
    return CompressedModel(
        coarse=dequantize(quantize(model.coarse)),
        fine=dequantize(quantize(model.fine)),
        quantized=True,
        smoothing_iterations=model.smoothing_iterations,
        smoothing_lambda=model.smoothing_lambda,
        scale=model.scale,
        offset=model.offset,
        version=model.version,
    )
