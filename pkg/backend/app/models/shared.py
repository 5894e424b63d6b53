from enum import Enum


class Zone(str, Enum):
    """数据湖分区（逐级精炼）"""
    LANDING = "landing"
    RAW = "raw"
    CURATED = "curated"


class DatasetFormat(str, Enum):
    CSV = "csv"
    JSONL = "jsonl"


class JobKind(str, Enum):
    """产生血缘边的作业类型"""
    BATCH_IMPORT = "batch_import"
    FLOW_RUN = "flow_run"
    QUERY = "query"


class EventKind(str, Enum):
    """溯源事件类型"""
    CREATE = "CREATE"
    TRANSFORM = "TRANSFORM"
    ROUTE = "ROUTE"
    DROP = "DROP"
    SEND = "SEND"


class DType(str, Enum):
    """读时模式的类型格：bool < int < float < string"""
    BOOL = "bool"
    INT = "int"
    FLOAT = "float"
    STRING = "string"

    @property
    def rank(self) -> int:
        return _DTYPE_ORDER.index(self)

    def widen(self, other: "DType") -> "DType":
        """两个类型的最小上界"""
        return self if self.rank >= other.rank else other


_DTYPE_ORDER = [DType.BOOL, DType.INT, DType.FLOAT, DType.STRING]


class ReadMode(str, Enum):
    STRICT = "strict"
    LENIENT = "lenient"
