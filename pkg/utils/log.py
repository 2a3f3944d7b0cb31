"""
日志工具

所有模块通过 get_logger 获取 "hnsc.<模块名>" 日志器，
控制台输出到标准错误，按级别着色。
"""

import logging
import sys
from typing import Optional

from colorama import Fore, Style, just_fix_windows_console

_ROOT_NAME = "hnsc"
_configured = False

_LEVEL_COLORS = {
    logging.DEBUG: Style.DIM,
    logging.INFO: "",
    logging.WARNING: Fore.YELLOW,
    logging.ERROR: Fore.RED,
    logging.CRITICAL: Fore.RED + Style.BRIGHT,
}


class ColorFormatter(logging.Formatter):
    """按日志级别给整行着色"""

    def __init__(self, use_color: bool = True):
        super().__init__("%(asctime)s %(levelname)-7s %(message)s", datefmt="%H:%M:%S")
        self.use_color = use_color

    def format(self, record: logging.LogRecord) -> str:
        line = super().format(record)
        if not self.use_color:
            return line
        color = _LEVEL_COLORS.get(record.levelno, "")
        if not color:
            return line
        return f"{color}{line}{Style.RESET_ALL}"


def setup_logging(level: str = "INFO", stream=None) -> logging.Logger:
    """
    配置根日志器（重复调用只更新级别）

    Args:
        level: 日志级别名称
        stream: 输出流，默认标准错误

    Returns:
        logging.Logger: "hnsc" 根日志器
    """
    global _configured
    root = logging.getLogger(_ROOT_NAME)
    root.setLevel(level.upper())
    if _configured and stream is None:
        return root

    just_fix_windows_console()
    target = stream if stream is not None else sys.stderr
    for handler in list(root.handlers):
        root.removeHandler(handler)
    handler = logging.StreamHandler(target)
    handler.setFormatter(ColorFormatter(use_color=hasattr(target, "isatty") and target.isatty()))
    root.addHandler(handler)
    root.propagate = False
    _configured = True
    return root


def get_logger(name: Optional[str] = None) -> logging.Logger:
    if not name:
        return logging.getLogger(_ROOT_NAME)
    short = name.rsplit(".", 1)[-1]
    return logging.getLogger(f"{_ROOT_NAME}.{short}")
