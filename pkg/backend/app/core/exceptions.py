"""
数据湖异常体系
每个异常类携带独立的命令行退出码（见 docs/cli.md）
"""
from typing import Optional


class LakeError(Exception):
    """所有数据湖错误的基类"""
    exit_code: int = 1

    def __init__(self, message: str = ""):
        super().__init__(message or self.__class__.__name__)
        self.message = message or self.__class__.__name__


# ==================== 存储层 ====================
class InvalidKey(LakeError):
    exit_code = 10


class DuplicateObject(LakeError):
    exit_code = 11


class IoError(LakeError):
    exit_code = 12


class DanglingRef(LakeError):
    exit_code = 13


class CommitConflict(LakeError):
    exit_code = 14


class UnknownVersion(LakeError):
    exit_code = 15


class CorruptObject(LakeError):
    exit_code = 16


class MissingObject(LakeError):
    exit_code = 17


# ==================== 目录 / 血缘 ====================
class AlreadyRegistered(LakeError):
    exit_code = 20


class UnknownDataset(LakeError):
    exit_code = 21


class CycleDetected(LakeError):
    exit_code = 22


# ==================== 批量导入 ====================
class NonNumericSplitColumn(LakeError):
    exit_code = 30


class ImportAborted(LakeError):
    exit_code = 31


# ==================== 流式摄取 ====================
class DanglingPort(LakeError):
    exit_code = 40


class UnknownProcessorKind(LakeError):
    exit_code = 41


class InvalidWeights(LakeError):
    exit_code = 42


class FlowFailed(LakeError):
    exit_code = 43

    def __init__(self, processor: str, cause: Optional[BaseException] = None):
        detail = f"{type(cause).__name__}: {cause}" if cause else "unknown failure"
        super().__init__(f"处理器 {processor} 失败: {detail}")
        self.processor = processor
        self.cause = cause


class UnknownRecord(LakeError):
    exit_code = 44


# ==================== 读时模式 ====================
class EmptyDataset(LakeError):
    exit_code = 50


class InferFailed(LakeError):
    exit_code = 51


class ReadAborted(LakeError):
    exit_code = 52

    def __init__(self, file: str, line: int, reason: str = ""):
        super().__init__(f"{file}:{line} 读取中止 {reason}".strip())
        self.file = file
        self.line = line
        self.reason = reason


# ==================== 查询 ====================
class PlanError(LakeError):
    exit_code = 60


class InvalidReportInput(LakeError):
    exit_code = 61


# ==================== 命令行 ====================
class NotALake(LakeError):
    exit_code = 70


class ForeignDirectory(LakeError):
    exit_code = 71
