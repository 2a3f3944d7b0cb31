"""
编解码器异常定义

所有异常都继承自 CodecError，并携带退出码和可选的步骤标签（stage），
命令行入口据此决定进程退出码。
"""

from typing import Optional, Sequence

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_IO = 3
EXIT_TOPOLOGY = 4
EXIT_TRAINING = 5
EXIT_FORMAT = 6
EXIT_CONFIG = 7


class CodecError(Exception):
    """编解码器异常基类"""

    exit_code = EXIT_INTERNAL

    def __init__(self, message: str, stage: Optional[str] = None):
        super().__init__(message)
        self.message = message
        self.stage = stage

    def __str__(self) -> str:
        if self.stage:
            return f"[{self.stage}] {self.message}"
        return self.message


# ---- I/O ----

class MeshIOError(CodecError):
    exit_code = EXIT_IO


class MeshParseError(MeshIOError):
    """网格文件解析失败，附带行号"""

    def __init__(self, message: str, line_number: Optional[int] = None, stage: Optional[str] = None):
        if line_number is not None:
            message = f"第 {line_number} 行: {message}"
        super().__init__(message, stage)
        self.line_number = line_number


class EmptyMeshError(MeshIOError):
    pass


# ---- 拓扑 / 参数化 ----

class TopologyError(CodecError):
    exit_code = EXIT_TOPOLOGY


class ConnectivityMismatchError(TopologyError):
    pass


class BijectivityError(TopologyError):
    """球面嵌入存在翻转三角形"""

    def __init__(self, flipped_faces: Sequence[int], origin_inside: bool = True, stage: Optional[str] = None):
        faces = list(int(f) for f in flipped_faces)
        preview = ", ".join(str(f) for f in faces[:20])
        if len(faces) > 20:
            preview += ", ..."
        message = f"球面嵌入非双射: {len(faces)} 个翻转面 [{preview}]"
        if not origin_inside:
            message += "，原点不在球面网格内部"
        super().__init__(message, stage)
        self.flipped_faces = faces
        self.origin_inside = origin_inside


class ParameterizationError(TopologyError):
    """在最大迭代次数内未得到无折叠的球面嵌入"""

    def __init__(self, flipped_count: int, iterations: int, stage: Optional[str] = None):
        super().__init__(
            f"球面参数化失败: {iterations} 次迭代后仍有 {flipped_count} 个翻转面",
            stage,
        )
        self.flipped_count = flipped_count
        self.iterations = iterations


# ---- 数值 / 训练 ----

class NumericError(CodecError):
    exit_code = EXIT_TRAINING


class TrainingError(CodecError):
    exit_code = EXIT_TRAINING


class DegenerateCoarseError(TrainingError):
    pass


class ConsistencyError(CodecError):
    exit_code = EXIT_TRAINING


# ---- 容器格式 ----

class FormatError(CodecError):
    exit_code = EXIT_FORMAT


class TruncationError(FormatError):
    pass


class UnsupportedVersionError(FormatError):
    pass


class QuantizationOverflowError(FormatError):
    pass


# ---- 配置 ----

class ConfigError(CodecError):
    exit_code = EXIT_CONFIG
