# -*- coding: utf-8 -*-
"""
统一异常定义
所有模块抛出的错误都从QingSparseError派生，CLI据此映射退出码
"""

from typing import List, Optional


class QingSparseError(Exception):
    """QING-SparseFFN 异常基类"""


class RejectedInputError(QingSparseError, ValueError):
    """输入被拒绝：维度不匹配、步数越界、空语料等"""


class NumericError(QingSparseError, ArithmeticError):
    """数值错误：出现非有限值"""


class DivergenceError(NumericError):
    """训练发散：损失变为非有限值"""

    def __init__(self, step: int, lam: float, detail: str = ""):
        self.step = step
        self.lam = lam
        message = f"❌ 训练发散 (non-finite loss)：step={step}, lambda={lam:.6g}"
        if detail:
            message += f"\n{detail}"
        super().__init__(message)


class ConfigurationError(QingSparseError, ValueError):
    """配置无效或不被支持"""

    def __init__(self, message: str, diagnostics: Optional[List[str]] = None):
        self.diagnostics = list(diagnostics or [])
        super().__init__(message)


class ConfigParseError(ConfigurationError):
    """配置文件无法解析，附带行列号"""

    def __init__(self, path: str, line: int, column: int, reason: str):
        self.path = path
        self.line = line
        self.column = column
        super().__init__(f"❌ 配置文件解析失败: {path} (line {line}, column {column})\n{reason}")


class StageError(QingSparseError):
    """流水线阶段失败"""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"❌ 阶段 '{stage}' 执行失败: {cause}")


def check_dims(expected: int, actual: int, what: str) -> None:
    """维度检查，不一致时抛出RejectedInputError"""
    if expected != actual:
        raise RejectedInputError(f"维度不匹配 (dimension mismatch): {what} 期望 {expected}，实际 {actual}")
