import re
from datetime import datetime, timezone
from pathlib import PurePosixPath
from typing import Dict, List, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from app.core.exceptions import InvalidKey
from app.models.shared import (
    DatasetFormat, DType, EventKind, JobKind, Zone,
)

NAME_PATTERN = re.compile(r"^[a-z0-9_-]+$")
HASH_ALGO = "sha256"

# 单元格取值：null | bool | int | float | string
Value = Union[None, bool, int, float, str]


def utc_now() -> datetime:
    return datetime.now(timezone.utc)


def check_name(value: str, what: str = "name") -> str:
    if not isinstance(value, str) or not NAME_PATTERN.match(value):
        raise InvalidKey(f"非法{what}: {value!r}，必须匹配 [a-z0-9_-]+")
    return value


def parse_zone(value) -> Zone:
    try:
        return Zone(value)
    except ValueError:
        raise InvalidKey(f"未知分区: {value!r}")


# ==================== 读时模式 ====================
class FieldSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str
    dtype: DType
    nullable: bool = False


class SchemaDescriptor(BaseModel):
    """推断得到的模式，不可变，可在线程间共享"""
    model_config = ConfigDict(frozen=True)

    fields: List[FieldSpec] = Field(default_factory=list)

    @field_validator("fields")
    @classmethod
    def _unique_names(cls, fields: List[FieldSpec]) -> List[FieldSpec]:
        names = [f.name for f in fields]
        if len(names) != len(set(names)):
            raise ValueError(f"字段名重复: {names}")
        return fields

    @property
    def names(self) -> List[str]:
        return [f.name for f in self.fields]

    def field(self, name: str) -> Optional[FieldSpec]:
        for f in self.fields:
            if f.name == name:
                return f
        return None


# ==================== 对象存储 ====================
class ObjectKey(BaseModel):
    """对象键，与湖内相对路径一一对应"""
    model_config = ConfigDict(frozen=True)

    zone: Zone
    dataset: str
    partition: str = ""
    filename: str

    @field_validator("zone", mode="before")
    @classmethod
    def _zone(cls, value):
        return parse_zone(value)

    @field_validator("dataset")
    @classmethod
    def _dataset(cls, value: str) -> str:
        return check_name(value, "数据集名")

    @field_validator("partition")
    @classmethod
    def _partition(cls, value: str) -> str:
        if value == "":
            return value
        return check_name(value, "分区段")

    @field_validator("filename")
    @classmethod
    def _filename(cls, value: str) -> str:
        if (not value or "/" in value or "\\" in value
                or value.startswith(".") or value in ("CURRENT",)):
            raise InvalidKey(f"非法文件名: {value!r}")
        return value

    @property
    def relative_path(self) -> PurePosixPath:
        parts = ["zones", self.zone.value, self.dataset]
        if self.partition:
            parts.append(self.partition)
        parts.append(self.filename)
        return PurePosixPath(*parts)

    def sort_key(self):
        return (self.partition, self.filename)


class ObjectRef(BaseModel):
    model_config = ConfigDict(frozen=True)

    key: ObjectKey
    size_bytes: int = Field(ge=0)
    content_hash: str
    record_count: Optional[int] = Field(default=None, ge=0)


class DatasetManifest(BaseModel):
    """原子提交的文件集合版本"""
    model_config = ConfigDict(frozen=True)

    dataset: str
    zone: Zone
    version: int = Field(ge=1)
    files: List[ObjectRef] = Field(default_factory=list)
    committed_at: datetime
    schema_hint: Optional[SchemaDescriptor] = None
    hash_algo: str = HASH_ALGO


# ==================== 目录 ====================
class DatasetDescriptor(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str
    zone: Zone
    format: DatasetFormat
    created_at: datetime = Field(default_factory=utc_now)
    source: str = ""
    schema_hint: Optional[SchemaDescriptor] = None

    @field_validator("zone", mode="before")
    @classmethod
    def _zone(cls, value):
        return parse_zone(value)

    @field_validator("name")
    @classmethod
    def _name(cls, value: str) -> str:
        return check_name(value, "数据集名")

    @property
    def node_id(self) -> str:
        return dataset_node(self.zone, self.name)


class LineageEdge(BaseModel):
    model_config = ConfigDict(frozen=True)

    from_node: str
    to_node: str
    job_kind: JobKind
    at: datetime = Field(default_factory=utc_now)


def dataset_node(zone: Union[Zone, str], name: str) -> str:
    zone_value = zone.value if isinstance(zone, Zone) else zone
    return f"dataset:{zone_value}/{name}"


def source_node(label: str) -> str:
    return f"source:{label}"


def job_node(job_id: str) -> str:
    return f"job:{job_id}"


def parse_dataset_ref(ref: str) -> tuple:
    """把 'raw/sales' 解析为 (Zone.RAW, 'sales')"""
    if "/" not in ref:
        raise InvalidKey(f"数据集引用必须是 <zone>/<name>: {ref!r}")
    zone, name = ref.split("/", 1)
    return parse_zone(zone), check_name(name, "数据集名")


# ==================== 批量导入 ====================
class TableSource(BaseModel):
    path: str
    table_name: str
    split_column: Optional[str] = None


class SplitRange(BaseModel):
    model_config = ConfigDict(frozen=True)

    lo: int
    hi: int

    def contains(self, value: int) -> bool:
        return self.lo <= value <= self.hi


class ImportReport(BaseModel):
    dataset: str
    rows_imported: int = 0
    splits_used: int = 0
    files_written: int = 0
    duration: float = 0.0
    manifest_version: Optional[int] = None
    skipped_lines: int = 0
    split_fallback_warnings: int = 0
    already_imported_warning: bool = False
    noop: bool = False
    source_node: str = ""


# ==================== 流式摄取 ====================
class Tweet(BaseModel):
    """推文，字段集合与样例 JSON 完全一致"""
    tweet_id: int
    created_unixtime: int
    created_time: str
    lang: str
    location: str
    displayname: str
    time_zone: str
    msg: str


class FlowRecord(BaseModel):
    model_config = ConfigDict(frozen=True)

    uuid: str
    attributes: Dict[str, str] = Field(default_factory=dict)
    payload: bytes = b""
    entry_time: datetime = Field(default_factory=utc_now)

    def with_attributes(self, **updates: str) -> "FlowRecord":
        """1:1 变换：保留 uuid，生成新记录"""
        merged = dict(self.attributes)
        merged.update(updates)
        return self.model_copy(update={"attributes": merged})


class ProcessorSpec(BaseModel):
    name: str
    kind: str
    params: Dict = Field(default_factory=dict)


class ConnectionSpec(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    from_: str = Field(alias="from")
    to: str
    capacity: int = Field(default=64, ge=1)
    high_watermark: Optional[int] = None

    @model_validator(mode="after")
    def _watermark(self):
        if self.high_watermark is None:
            self.high_watermark = self.capacity
        elif not 0 < self.high_watermark <= self.capacity:
            raise ValueError("high_watermark 必须在 (0, capacity] 内")
        return self


class FlowGraphSpec(BaseModel):
    processors: List[ProcessorSpec]
    connections: List[ConnectionSpec]

    @field_validator("processors")
    @classmethod
    def _unique_processor_names(cls, processors: List[ProcessorSpec]) -> List[ProcessorSpec]:
        names = [p.name for p in processors]
        if len(set(names)) != len(names):
            raise ValueError("处理器名称重复")
        return processors


class ProvenanceEvent(BaseModel):
    record_uuid: str
    processor_name: str
    kind: EventKind
    at: datetime = Field(default_factory=utc_now)
    detail: str = ""
    run_id: str = ""


class FlowReport(BaseModel):
    run_id: str
    records_in: int = 0
    records_out: int = 0
    records_dropped: int = 0
    max_queue_depths: Dict[str, int] = Field(default_factory=dict)
    files_committed: int = 0
    quarantined: int = 0
    duration: float = 0.0


# ==================== 分析 ====================
class BrandRank(BaseModel):
    rank: int = Field(ge=1)
    brand: str
    metric: int


class RankedBrands(BaseModel):
    entries: List[BrandRank] = Field(default_factory=list)

    @classmethod
    def from_counts(cls, counts: Dict[str, int], k: Optional[int] = None) -> "RankedBrands":
        """按指标降序、品牌名升序排名"""
        ordered = sorted(counts.items(), key=lambda item: (-item[1], item[0]))
        if k is not None:
            ordered = ordered[:k]
        return cls(entries=[
            BrandRank(rank=i, brand=brand, metric=metric)
            for i, (brand, metric) in enumerate(ordered, start=1)
        ])

    def as_dict(self) -> Dict[str, int]:
        return {e.brand: e.metric for e in self.entries}

    def __len__(self) -> int:
        return len(self.entries)


class ReportRow(BaseModel):
    brand: str
    sales_rank: int
    sales_metric: int
    mentions: int


class BrandSentiment(BaseModel):
    tweets: int = 0
    mean_score: Optional[float] = None
