"""
读时模式（schema-on-read）
查询时从原始 CSV / JSON-lines 文件推断模式，并把原始字节投影为带类型的行
"""
import csv
import io
import json
import re
from typing import Dict, Iterator, List, NamedTuple, Optional, Tuple

import orjson
import structlog

from app.core.config import settings
from app.core.exceptions import EmptyDataset, InferFailed, ReadAborted
from app.models.schemas import FieldSpec, ObjectRef, SchemaDescriptor, Value, parse_dataset_ref
from app.models.shared import DType, ReadMode, Zone
from app.services.lake_store import LakeStore

logger = structlog.get_logger(__name__)

INT64_MIN = -(2 ** 63)
INT64_MAX = 2 ** 63 - 1

_INT_RE = re.compile(r"^[+-]?\d+$")
_FLOAT_RE = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$")

Row = Tuple[Value, ...]

_MISSING = object()


class _CoerceError(Exception):
    pass


# ==================== 单值分类 ====================
def classify_text(text: str) -> Tuple[Optional[DType], Value]:
    """CSV 单元格：空串为 null，其余按 bool/int/float/string 依次尝试"""
    if text == "":
        return None, None
    lowered = text.lower()
    if lowered in ("true", "false"):
        return DType.BOOL, lowered == "true"
    if _INT_RE.match(text):
        number = int(text)
        if INT64_MIN <= number <= INT64_MAX:
            return DType.INT, number
        return DType.FLOAT, float(number)
    if _FLOAT_RE.match(text):
        return DType.FLOAT, float(text)
    return DType.STRING, text


def classify_json(value) -> Tuple[Optional[DType], Value]:
    """JSON 值：原生类型直接映射，嵌套结构按文本处理"""
    if value is None:
        return None, None
    if isinstance(value, bool):
        return DType.BOOL, value
    if isinstance(value, int):
        if INT64_MIN <= value <= INT64_MAX:
            return DType.INT, value
        return DType.FLOAT, float(value)
    if isinstance(value, float):
        return DType.FLOAT, value
    if isinstance(value, str):
        return DType.STRING, value
    return DType.STRING, json_text(value)


def json_text(value) -> str:
    try:
        return orjson.dumps(value).decode("utf-8")
    except TypeError:
        return json.dumps(value, ensure_ascii=False)


def coerce(raw, from_csv: bool, dtype: DType) -> Value:
    """把原始值投影到目标类型；失败抛 _CoerceError"""
    if from_csv:
        kind, value = classify_text(raw)
    else:
        kind, value = classify_json(raw)
    if kind is None:
        return None
    if dtype == DType.STRING:
        if from_csv:
            return raw
        return value if kind == DType.STRING else json_text(raw)
    if kind.rank > dtype.rank:
        raise _CoerceError(f"{raw!r} 无法转换为 {dtype.value}")
    if dtype == DType.BOOL:
        return value
    if dtype == DType.INT:
        return int(value)
    return float(value)


def loads_line(line: bytes):
    try:
        return orjson.loads(line)
    except orjson.JSONDecodeError:
        # orjson 不支持超过 64 位的整数，退回标准库
        return json.loads(line)


# ==================== 原始记录迭代 ====================
class RawRecord(NamedTuple):
    file: str
    line: int
    values: Optional[Dict]
    from_csv: bool
    error: str = ""


def _iter_file(store: LakeStore, ref: ObjectRef) -> Iterator[RawRecord]:
    label = str(ref.key.relative_path)
    text = store.read_object(ref).decode("utf-8")
    if ref.key.filename.endswith(".csv"):
        reader = csv.reader(io.StringIO(text, newline=""))
        header = None
        for cells in reader:
            if not cells:
                continue
            if header is None:
                header = cells
                continue
            values = {name: cells[i] for i, name in enumerate(header) if i < len(cells)}
            yield RawRecord(label, reader.line_num, values, True)
    else:
        for line_no, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                obj = loads_line(line.encode("utf-8"))
            except ValueError as e:
                yield RawRecord(label, line_no, None, False, f"JSON 解析失败: {e}")
                continue
            if not isinstance(obj, dict):
                yield RawRecord(label, line_no, None, False, "不是 JSON 对象")
                continue
            yield RawRecord(label, line_no, obj, False)


def csv_header(store: LakeStore, ref: ObjectRef) -> List[str]:
    text = store.read_object(ref).decode("utf-8")
    for cells in csv.reader(io.StringIO(text, newline="")):
        if cells:
            return cells
    return []


def _resolve(dataset) -> Tuple[Zone, str]:
    if isinstance(dataset, tuple):
        return dataset
    return parse_dataset_ref(dataset)


def _mode(mode) -> ReadMode:
    if mode is None:
        return ReadMode.STRICT if settings.strict_mode else ReadMode.LENIENT
    return ReadMode(mode)


# ==================== 模式推断 ====================
class SchemaInferrer:
    """增量推断：类型只沿类型格放宽，字段只增不减"""

    def __init__(self):
        self._order: List[str] = []
        self._dtypes: Dict[str, Optional[DType]] = {}
        self._present: Dict[str, int] = {}
        self.records = 0

    def add_field(self, name: str):
        if name not in self._dtypes:
            self._order.append(name)
            self._dtypes[name] = None
            self._present[name] = 0

    def observe(self, values: Dict, from_csv: bool):
        self.records += 1
        for name, raw in values.items():
            self.add_field(name)
            kind, _ = classify_text(raw) if from_csv else classify_json(raw)
            if kind is None:
                continue
            self._present[name] += 1
            current = self._dtypes[name]
            self._dtypes[name] = kind if current is None else current.widen(kind)

    def result(self) -> SchemaDescriptor:
        fields = []
        for name in self._order:
            dtype = self._dtypes[name]
            fields.append(FieldSpec(
                name=name,
                # 全为空的字段取类型格底部
                dtype=dtype or DType.BOOL,
                nullable=self._present[name] < self.records or dtype is None,
            ))
        return SchemaDescriptor(fields=fields)


def infer_schema(store: LakeStore, dataset, sample_rows: Optional[int] = None,
                 mode=None) -> SchemaDescriptor:
    """从已提交的数据集推断模式；sample_rows 为 None 时读取全部记录"""
    zone, name = _resolve(dataset)
    mode = _mode(mode)
    refs = store.list_objects(name, zone)
    if not refs:
        raise EmptyDataset(f"数据集为空: {zone.value}/{name}")

    inferrer = SchemaInferrer()
    skipped = 0
    done = False
    for ref in refs:
        if done:
            break
        try:
            if ref.key.filename.endswith(".csv"):
                for column in csv_header(store, ref):
                    inferrer.add_field(column)
            for record in _iter_file(store, ref):
                if record.values is None:
                    if mode == ReadMode.STRICT:
                        raise InferFailed(f"{record.file}:{record.line} {record.error}")
                    skipped += 1
                    continue
                inferrer.observe(record.values, record.from_csv)
                if sample_rows is not None and inferrer.records >= sample_rows:
                    done = True
                    break
        except (UnicodeDecodeError, csv.Error) as e:
            if mode == ReadMode.STRICT:
                raise InferFailed(f"无法解码 {ref.key.relative_path}: {e}")
            skipped += 1
            logger.warning("infer_skipped_file", path=str(ref.key.relative_path), error=str(e))

    schema = inferrer.result()
    if not schema.fields:
        raise EmptyDataset(f"数据集没有可推断的字段: {zone.value}/{name}")
    logger.info("schema_inferred", dataset=f"{zone.value}/{name}", fields=len(schema.fields),
                records=inferrer.records, skipped=skipped)
    return schema


# ==================== 投影读取 ====================
class RowReader:
    """按模式投影的行迭代器；宽松模式把失败值置空并计数"""

    def __init__(self, store: LakeStore, dataset, schema: SchemaDescriptor, mode=None):
        self.store = store
        self.zone, self.name = _resolve(dataset)
        self.schema = schema
        self.mode = _mode(mode)
        self.malformed_count = 0
        self.rows_read = 0

    def _violation(self, record: RawRecord, reason: str):
        if self.mode == ReadMode.STRICT:
            raise ReadAborted(record.file, record.line, reason)
        self.malformed_count += 1

    def _project(self, record: RawRecord) -> Row:
        if record.values is None:
            self._violation(record, record.error)
            return tuple(None for _ in self.schema.fields)
        values = []
        bad = False
        for spec in self.schema.fields:
            raw = record.values.get(spec.name, _MISSING)
            if raw is _MISSING:
                value = None
            else:
                try:
                    value = coerce(raw, record.from_csv, spec.dtype)
                except _CoerceError as e:
                    if self.mode == ReadMode.STRICT:
                        raise ReadAborted(record.file, record.line, f"{spec.name}: {e}")
                    bad = True
                    value = None
            if value is None and not spec.nullable:
                if self.mode == ReadMode.STRICT:
                    raise ReadAborted(record.file, record.line, f"{spec.name}: 非空字段为空")
                bad = True
            values.append(value)
        if bad:
            self.malformed_count += 1
        return tuple(values)

    def __iter__(self) -> Iterator[Row]:
        for ref in self.store.list_objects(self.name, self.zone):
            try:
                records = list(_iter_file(self.store, ref))
            except (UnicodeDecodeError, csv.Error) as e:
                if self.mode == ReadMode.STRICT:
                    raise ReadAborted(str(ref.key.relative_path), 0, f"无法解码: {e}")
                self.malformed_count += 1
                logger.warning("read_skipped_file", path=str(ref.key.relative_path), error=str(e))
                continue
            for record in records:
                row = self._project(record)
                self.rows_read += 1
                yield row


def open_reader(store: LakeStore, dataset, schema: SchemaDescriptor, mode=None) -> RowReader:
    return RowReader(store, dataset, schema, mode)
