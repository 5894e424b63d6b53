"""
分片并行批量导入
把关系表（CSV 表文件）按拆分列的取值域切成若干区间，并行写入原始区，最后一次性提交清单
"""
import asyncio
import bisect
import hashlib
import io
import re
import time
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import pandas as pd
import structlog

from app.core.config import settings
from app.core.exceptions import ImportAborted, LakeError, NonNumericSplitColumn
from app.managers.logger_manager import logger_manager
from app.managers.prometheus_manager import prometheus_metrics
from app.models.schemas import (
    DatasetDescriptor, FieldSpec, ImportReport, LineageEdge, ObjectKey, ObjectRef,
    SchemaDescriptor, SplitRange, TableSource, dataset_node, source_node,
)
from app.models.shared import DatasetFormat, DType, JobKind, Zone
from app.services.catalog import Catalog
from app.services.lake_store import LakeStore
from app.utils.ids import timestamp_id

logger = structlog.get_logger(__name__)

_INT_RE = re.compile(r"^\s*[+-]?\d+\s*$")

# 五张车辆交易表及其拆分列
CAR_TRADING_TABLES: Dict[str, str] = {
    "customer": "customer_id",
    "product": "product_id",
    "showroom": "showroom_id",
    "sales": "sale_id",
    "stock": "showroom_id",
}


# ==================== 读取源表 ====================
class _LoadedTable:
    def __init__(self, frame: pd.DataFrame, raw: bytes, skipped_lines: int):
        self.frame = frame
        self.raw = raw
        self.skipped_lines = skipped_lines

    @property
    def source_hash(self) -> str:
        return hashlib.sha256(self.raw).hexdigest()


def _load_table(source: TableSource, strict: bool) -> _LoadedTable:
    path = Path(source.path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise ImportAborted(f"无法读取源表 {path}: {e}") from e

    skipped = []

    def _skip(bad_line):
        skipped.append(bad_line)
        return None

    try:
        frame = pd.read_csv(
            io.BytesIO(raw),
            dtype=str,
            keep_default_na=False,
            engine="python",
            on_bad_lines="error" if strict else _skip,
        )
    except pd.errors.EmptyDataError:
        raise ImportAborted(f"源表缺少表头: {path}")
    except (pd.errors.ParserError, UnicodeDecodeError, ValueError) as e:
        raise ImportAborted(f"源表解析失败 {path}: {e}") from e

    if source.split_column and source.split_column not in frame.columns:
        raise ImportAborted(f"拆分列 {source.split_column!r} 不在表头中: {list(frame.columns)}")
    return _LoadedTable(frame, raw, len(skipped))


# ==================== 拆分规划 ====================
def _split_values(frame: pd.DataFrame, column: str) -> List[int]:
    values = frame[column].tolist()
    bad = [v for v in values if not _INT_RE.match(v)]
    if bad:
        raise NonNumericSplitColumn(f"拆分列 {column!r} 含非整数值，例如 {bad[0]!r}")
    return [int(v) for v in values]


def plan_ranges(values: List[int], num_splits: int) -> List[SplitRange]:
    """对取值域 [min, max] 做均匀划分，区间宽度至多相差 1"""
    if num_splits < 1:
        raise ValueError("num_splits 必须为正整数")
    if not values:
        return []
    lo, hi = min(values), max(values)
    width = hi - lo + 1
    parts = min(num_splits, width)
    base, extra = divmod(width, parts)
    ranges = []
    start = lo
    for i in range(parts):
        size = base + (1 if i < extra else 0)
        ranges.append(SplitRange(lo=start, hi=start + size - 1))
        start += size
    return ranges


def plan_splits(source: TableSource, num_splits: int) -> List[SplitRange]:
    if not source.split_column:
        raise NonNumericSplitColumn("未设置拆分列")
    table = _load_table(source, strict=False)
    return plan_ranges(_split_values(table.frame, source.split_column), num_splits)


def assign_rows(values: List[int], ranges: List[SplitRange]) -> List[List[int]]:
    """每行恰好落入一个区间；返回各区间的行下标（保持源表顺序）"""
    starts = [r.lo for r in ranges]
    buckets: List[List[int]] = [[] for _ in ranges]
    for row_index, value in enumerate(values):
        buckets[bisect.bisect_right(starts, value) - 1].append(row_index)
    return buckets


# ==================== 导入 ====================
def _part_payload(frame: pd.DataFrame) -> bytes:
    return frame.to_csv(index=False, lineterminator="\n").encode("utf-8")


async def import_table(store: LakeStore, catalog: Catalog, source: TableSource, target_dataset: str,
                       num_splits: int = 4, strict: bool = False) -> ImportReport:
    """导入一张表；所有分片写完后才提交一次清单（全有或全无）"""
    start_time = time.time()
    table = _load_table(source, strict)
    frame = table.frame
    report = ImportReport(dataset=f"{Zone.RAW.value}/{target_dataset}", skipped_lines=table.skipped_lines)

    src = source_node(f"{source.table_name}@sha256:{table.source_hash[:16]}")
    report.source_node = src

    desc = catalog.ensure_dataset(DatasetDescriptor(
        name=target_dataset,
        zone=Zone.RAW,
        format=DatasetFormat.CSV,
        source=f"{source.table_name} ({source.path})",
        schema_hint=_header_hint(frame),
    ))
    if desc.format != DatasetFormat.CSV:
        raise ImportAborted(f"目标数据集格式为 {desc.format.value}，不能导入 CSV")

    target = dataset_node(Zone.RAW, target_dataset)
    report.already_imported_warning = catalog.has_edge(src, target)
    if report.already_imported_warning:
        logger.warning("source_already_imported", source=src, dataset=report.dataset)

    if frame.empty:
        report.noop = True
        report.duration = time.time() - start_time
        logger.info("import_noop", dataset=report.dataset, source=src)
        return report

    buckets = _plan_buckets(source, frame, num_splits, report)
    partition = timestamp_id("run")
    semaphore = asyncio.Semaphore(max(1, settings.import_workers))

    async def _write(index: int, rows: List[int]) -> Tuple[ObjectRef, int]:
        async with semaphore:
            key = ObjectKey(zone=Zone.RAW, dataset=target_dataset, partition=partition,
                            filename=f"part-{index:05d}.csv")
            payload = _part_payload(frame.iloc[rows])
            ref = await asyncio.to_thread(store.put_object, key, payload, len(rows))
            logger.debug("import_split_written", dataset=report.dataset, split=index, rows=len(rows))
            return ref, len(rows)

    tasks = [_write(i, rows) for i, rows in enumerate(buckets) if rows]
    try:
        results = await asyncio.gather(*tasks)
    except LakeError as e:
        raise ImportAborted(f"分片写入失败，未提交清单: {e.message}") from e

    refs = [ref for ref, _ in results]
    manifest = await asyncio.to_thread(
        store.commit_manifest, target_dataset, Zone.RAW, refs, desc.schema_hint,
    )
    catalog.record_lineage(LineageEdge(from_node=src, to_node=target, job_kind=JobKind.BATCH_IMPORT))

    report.rows_imported = sum(count for _, count in results)
    report.splits_used = len(refs)
    report.files_written = len(refs)
    report.manifest_version = manifest.version
    report.duration = time.time() - start_time

    prometheus_metrics.import_rows_total.labels(dataset=target_dataset).inc(report.rows_imported)
    logger_manager.log_performance("import_table", report.duration, {
        "dataset": report.dataset, "rows": report.rows_imported, "splits": report.splits_used,
    })
    logger.info("import_committed", dataset=report.dataset, rows=report.rows_imported,
                files=report.files_written, version=manifest.version)
    return report


def _plan_buckets(source: TableSource, frame: pd.DataFrame, num_splits: int,
                  report: ImportReport) -> List[List[int]]:
    all_rows = [list(range(len(frame)))]
    if not source.split_column:
        return all_rows
    try:
        values = _split_values(frame, source.split_column)
    except NonNumericSplitColumn as e:
        # 回退为单分片并计数告警
        report.split_fallback_warnings += 1
        logger.warning("split_fallback", dataset=report.dataset, reason=e.message)
        return all_rows
    return assign_rows(values, plan_ranges(values, num_splits))


def _header_hint(frame: pd.DataFrame) -> SchemaDescriptor:
    """导入时只记录表头列名，类型留给读时推断"""
    return SchemaDescriptor(fields=[
        FieldSpec(name=str(c), dtype=DType.STRING, nullable=True) for c in frame.columns
    ])


async def import_tables(store: LakeStore, catalog: Catalog, directory, num_splits: int = 4,
                        strict: bool = False, tables: Optional[Dict[str, str]] = None) -> List[ImportReport]:
    """导入目录下的车辆交易五张表（<table>.csv）"""
    directory = Path(directory)
    reports = []
    for table_name, split_column in (tables or CAR_TRADING_TABLES).items():
        source = TableSource(path=str(directory / f"{table_name}.csv"), table_name=table_name,
                             split_column=split_column)
        reports.append(await import_table(store, catalog, source, table_name, num_splits, strict))
    return reports
