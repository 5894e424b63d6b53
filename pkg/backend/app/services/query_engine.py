"""
多层分析查询引擎
在读时模式数据集上组合关系算子，并提供畅销品牌 / 品牌提及 / 销量对比报表
"""
import operator
import time
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

import pandas as pd
import structlog

from app.core.exceptions import EmptyDataset, InvalidReportInput, PlanError
from app.managers.logger_manager import logger_manager
from app.managers.prometheus_manager import prometheus_metrics
from app.models.plan import (
    Agg, And, Compare, Const, Filter, GroupAgg, HashJoin, Limit, Not, Or,
    Project, Scan, Sort, SortKey,
)
from app.models.schemas import (
    DatasetDescriptor, FieldSpec, LineageEdge, ObjectKey, RankedBrands, ReportRow,
    SchemaDescriptor, Value, dataset_node, job_node, parse_dataset_ref,
)
from app.models.shared import DatasetFormat, DType, JobKind, Zone
from app.services.lake_store import LakeStore
from app.services.schema_read import open_reader, infer_schema
from app.services.text_analytics import BrandLexicon, extract_brands, tokenize
from app.utils.ids import timestamp_id

logger = structlog.get_logger(__name__)

UUID_COLUMN = "_uuid"

_COMPARATORS = {
    "==": operator.eq,
    "!=": operator.ne,
    "<": operator.lt,
    "<=": operator.le,
    ">": operator.gt,
    ">=": operator.ge,
}

_NUMERIC = {DType.BOOL, DType.INT, DType.FLOAT}


class Relation:
    """中间结果：列描述 + 元组行"""

    def __init__(self, fields: List[FieldSpec], rows: List[tuple]):
        self.fields = fields
        self.rows = rows

    @property
    def names(self) -> List[str]:
        return [f.name for f in self.fields]

    def index(self, column: str) -> int:
        return self.names.index(column)


def _compatible(a: DType, b: DType) -> bool:
    return (a in _NUMERIC and b in _NUMERIC) or (a == b == DType.STRING)


def _value_dtype(value: Value) -> Optional[DType]:
    if value is None:
        return None
    if isinstance(value, bool):
        return DType.BOOL
    if isinstance(value, int):
        return DType.INT
    if isinstance(value, float):
        return DType.FLOAT
    return DType.STRING


class QueryEngine:
    """单线程执行；计划不可变，多个查询可并发共享同一存储"""

    def __init__(self, store: LakeStore, mode=None):
        self.store = store
        self.mode = mode
        self.null_sum_warnings = 0
        self.malformed_rows = 0
        self._schemas: Dict[str, List[FieldSpec]] = {}

    # ------------------------------------------------------------------
    # 校验
    # ------------------------------------------------------------------
    def _scan_fields(self, dataset: str) -> List[FieldSpec]:
        if dataset not in self._schemas:
            try:
                schema = infer_schema(self.store, dataset, mode=self.mode)
                self._schemas[dataset] = list(schema.fields)
            except EmptyDataset:
                self._schemas[dataset] = []
        return self._schemas[dataset]

    @staticmethod
    def _require(fields: List[FieldSpec], column: str, where: str) -> FieldSpec:
        for spec in fields:
            if spec.name == column:
                return spec
        raise PlanError(f"{where}: 无法解析列 {column!r}，可用列 {[f.name for f in fields]}")

    def _check_predicate(self, fields: List[FieldSpec], predicate):
        if isinstance(predicate, Compare):
            spec = self._require(fields, predicate.column, "Filter")
            kind = _value_dtype(predicate.value)
            if kind is None:
                if predicate.op not in ("==", "!="):
                    raise PlanError("空值只能用 == / != 比较")
            elif not _compatible(spec.dtype, kind):
                raise PlanError(f"Filter: 列 {spec.name} ({spec.dtype.value}) 不能与 {predicate.value!r} 比较")
        elif isinstance(predicate, (And, Or)):
            for operand in predicate.operands:
                self._check_predicate(fields, operand)
        elif isinstance(predicate, Not):
            self._check_predicate(fields, predicate.operand)

    def output_fields(self, node) -> List[FieldSpec]:
        """计算并校验节点输出列"""
        if isinstance(node, Scan):
            parse_dataset_ref(node.dataset)
            return self._scan_fields(node.dataset)
        if isinstance(node, Filter):
            fields = self.output_fields(node.child)
            self._check_predicate(fields, node.predicate)
            return fields
        if isinstance(node, Project):
            fields = self.output_fields(node.child)
            if len(set(node.columns)) != len(node.columns):
                raise PlanError(f"Project: 列重复 {node.columns}")
            return [self._require(fields, c, "Project") for c in node.columns]
        if isinstance(node, HashJoin):
            left = self.output_fields(node.left)
            right = self.output_fields(node.right)
            lkey = self._require(left, node.left_key, "HashJoin")
            rkey = self._require(right, node.right_key, "HashJoin")
            if not _compatible(lkey.dtype, rkey.dtype):
                raise PlanError(f"HashJoin: 连接键类型不兼容 {lkey.dtype.value} / {rkey.dtype.value}")
            return left + _rename_right(left, right)
        if isinstance(node, GroupAgg):
            fields = self.output_fields(node.child)
            out = [self._require(fields, k, "GroupAgg") for k in node.keys]
            for agg in node.aggs:
                out.append(self._agg_field(fields, agg))
            names = [f.name for f in out]
            if len(set(names)) != len(names):
                raise PlanError(f"GroupAgg: 输出列重复 {names}")
            return out
        if isinstance(node, Sort):
            fields = self.output_fields(node.child)
            for key in node.keys:
                self._require(fields, key.column, "Sort")
            return fields
        if isinstance(node, Limit):
            return self.output_fields(node.child)
        raise PlanError(f"未知计划节点: {type(node).__name__}")

    def _agg_field(self, fields: List[FieldSpec], agg: Agg) -> FieldSpec:
        if agg.func == "count":
            if agg.column is not None:
                self._require(fields, agg.column, "GroupAgg")
            return FieldSpec(name=agg.output_name, dtype=DType.INT)
        if agg.column is None:
            raise PlanError("sum 需要指定列")
        spec = self._require(fields, agg.column, "GroupAgg")
        if spec.dtype not in _NUMERIC:
            raise PlanError(f"sum({spec.name}) 需要数值列，实际为 {spec.dtype.value}")
        dtype = DType.FLOAT if spec.dtype == DType.FLOAT else DType.INT
        return FieldSpec(name=agg.output_name, dtype=dtype)

    # ------------------------------------------------------------------
    # 执行
    # ------------------------------------------------------------------
    def execute(self, plan) -> List[Dict[str, Value]]:
        start_time = time.time()
        with prometheus_metrics.timer("execute"):
            self.output_fields(plan)
            relation = self._eval(plan)
        names = relation.names
        logger.debug("plan_executed", rows=len(relation.rows), duration=time.time() - start_time)
        return [dict(zip(names, row)) for row in relation.rows]

    def _eval(self, node) -> Relation:
        if isinstance(node, Scan):
            return self._scan(node)
        if isinstance(node, Filter):
            child = self._eval(node.child)
            test = _compile_predicate(node.predicate, child.names)
            return Relation(child.fields, [r for r in child.rows if test(r)])
        if isinstance(node, Project):
            child = self._eval(node.child)
            idx = [child.index(c) for c in node.columns]
            fields = [child.fields[i] for i in idx]
            return Relation(fields, [tuple(r[i] for i in idx) for r in child.rows])
        if isinstance(node, HashJoin):
            return self._hash_join(node)
        if isinstance(node, GroupAgg):
            return self._group_agg(node)
        if isinstance(node, Sort):
            child = self._eval(node.child)
            rows = list(child.rows)
            # 从最后一个键开始做稳定排序
            for key in reversed(node.keys):
                i = child.index(key.column)
                if key.descending:
                    rows.sort(key=lambda r: (r[i] is not None, r[i] if r[i] is not None else 0), reverse=True)
                else:
                    rows.sort(key=lambda r: (r[i] is None, r[i] if r[i] is not None else 0))
            return Relation(child.fields, rows)
        if isinstance(node, Limit):
            child = self._eval(node.child)
            return Relation(child.fields, child.rows[:node.k])
        raise PlanError(f"未知计划节点: {type(node).__name__}")

    def _scan(self, node: Scan) -> Relation:
        fields = self._scan_fields(node.dataset)
        if not fields:
            return Relation([], [])
        reader = open_reader(self.store, node.dataset, SchemaDescriptor(fields=fields), self.mode)
        rows = list(reader)
        self.malformed_rows += reader.malformed_count
        names = [f.name for f in fields]
        if node.dedup and UUID_COLUMN in names:
            i = names.index(UUID_COLUMN)
            seen = set()
            unique = []
            for row in rows:
                uid = row[i]
                if uid is not None:
                    if uid in seen:
                        continue
                    seen.add(uid)
                unique.append(row)
            rows = unique
        return Relation(fields, rows)

    def _hash_join(self, node: HashJoin) -> Relation:
        left = self._eval(node.left)
        right = self._eval(node.right)
        li = left.index(node.left_key)
        ri = right.index(node.right_key)
        table: Dict[Value, List[tuple]] = {}
        for row in right.rows:
            key = row[ri]
            if key is None:
                continue  # 空键永不匹配
            table.setdefault(key, []).append(row)
        rows = []
        for row in left.rows:
            key = row[li]
            if key is None:
                continue
            for match in table.get(key, ()):
                rows.append(row + match)
        return Relation(left.fields + _rename_right(left.fields, right.fields), rows)

    def _group_agg(self, node: GroupAgg) -> Relation:
        child = self._eval(node.child)
        out_fields = self.output_fields(node)
        key_idx = [child.index(k) for k in node.keys]
        groups: Dict[tuple, List] = {}
        for row in child.rows:
            key = tuple(row[i] for i in key_idx)
            state = groups.get(key)
            if state is None:
                state = groups[key] = [0 for _ in node.aggs]
            for j, agg in enumerate(node.aggs):
                if agg.func == "count":
                    if agg.column is None or row[child.index(agg.column)] is not None:
                        state[j] += 1
                else:
                    value = row[child.index(agg.column)]
                    if value is None:
                        # 宽松读取产生的空值按 0 计并计数告警
                        self.null_sum_warnings += 1
                        continue
                    state[j] += value
        if not node.keys and not groups:
            groups[()] = [0 for _ in node.aggs]
        rows = []
        for key, state in groups.items():
            values = list(key)
            for j, agg in enumerate(node.aggs):
                dtype = out_fields[len(key_idx) + j].dtype
                values.append(float(state[j]) if dtype == DType.FLOAT else int(state[j]))
            rows.append(tuple(values))
        if self.null_sum_warnings:
            logger.warning("null_sum_values", count=self.null_sum_warnings)
        return Relation(out_fields, rows)


def _rename_right(left: List[FieldSpec], right: List[FieldSpec]) -> List[FieldSpec]:
    taken = {f.name for f in left}
    renamed = []
    for spec in right:
        name = spec.name
        while name in taken:
            name = f"{name}_right"
        taken.add(name)
        renamed.append(FieldSpec(name=name, dtype=spec.dtype, nullable=spec.nullable))
    return renamed


def _compile_predicate(predicate, names: List[str]):
    if isinstance(predicate, Const):
        return lambda row: predicate.value
    if isinstance(predicate, Compare):
        i = names.index(predicate.column)
        target = predicate.value
        if target is None:
            if predicate.op == "==":
                return lambda row: row[i] is None
            return lambda row: row[i] is not None
        compare = _COMPARATORS[predicate.op]
        return lambda row: row[i] is not None and compare(row[i], target)
    if isinstance(predicate, And):
        tests = [_compile_predicate(p, names) for p in predicate.operands]
        return lambda row: all(t(row) for t in tests)
    if isinstance(predicate, Or):
        tests = [_compile_predicate(p, names) for p in predicate.operands]
        return lambda row: any(t(row) for t in tests)
    if isinstance(predicate, Not):
        test = _compile_predicate(predicate.operand, names)
        return lambda row: not test(row)
    raise PlanError(f"未知谓词: {type(predicate).__name__}")


def execute(store: LakeStore, plan, mode=None) -> List[Dict[str, Value]]:
    return QueryEngine(store, mode).execute(plan)


# ==================== 分析报表 ====================
def bestselling_plan(sales_ds: str, product_ds: str, k: int):
    joined = HashJoin(left=Scan(dataset=sales_ds), right=Scan(dataset=product_ds),
                      left_key="product_id", right_key="product_id")
    grouped = GroupAgg(child=joined, keys=["brand"],
                       aggs=[Agg(func="sum", column="quantity", alias="total")])
    ordered = Sort(child=grouped, keys=[SortKey(column="total", descending=True),
                                        SortKey(column="brand")])
    return Limit(child=ordered, k=k)


def bestselling_brands(store: LakeStore, sales_ds: str, product_ds: str, k: int = 10) -> RankedBrands:
    """销量（数量之和）最高的 k 个品牌；并列时按品牌名升序"""
    start_time = time.time()
    with prometheus_metrics.timer("bestselling_brands"):
        rows = execute(store, bestselling_plan(sales_ds, product_ds, k))
    counts = {str(r["brand"]): int(r["total"]) for r in rows if r["brand"] is not None}
    logger_manager.log_performance("bestselling_brands", time.time() - start_time, {"k": k})
    return RankedBrands.from_counts(counts, k)


def _is_empty(store: LakeStore, dataset: str) -> bool:
    try:
        infer_schema(store, dataset, sample_rows=1)
        return False
    except EmptyDataset:
        return True


def tweet_messages(store: LakeStore, tweets_ds: str) -> Iterator[Optional[str]]:
    """去重后的推文 msg 列"""
    if _is_empty(store, tweets_ds):
        return iter(())
    plan = Project(child=Scan(dataset=tweets_ds, dedup=True), columns=["msg"])
    rows = execute(store, plan)
    return (r["msg"] if r["msg"] is None else str(r["msg"]) for r in rows)


def mention_counts(messages: Iterable[Optional[str]], lexicon: BrandLexicon) -> Dict[str, int]:
    counts = {b: 0 for b in lexicon.brands}
    for msg in messages:
        for brand in extract_brands(tokenize(msg or ""), lexicon):
            counts[brand] += 1
    return counts


def brand_mentions(store: LakeStore, tweets_ds: str, lexicon: Optional[BrandLexicon] = None) -> RankedBrands:
    """每个品牌被提及的推文数（同一推文多次提及只计一次）"""
    lexicon = lexicon or BrandLexicon.default()
    with prometheus_metrics.timer("brand_mentions"):
        counts = mention_counts(tweet_messages(store, tweets_ds), lexicon)
    return RankedBrands.from_counts(counts)


def sales_vs_mentions(sales_rank: RankedBrands, mention_ranks: RankedBrands) -> List[ReportRow]:
    if not len(sales_rank) or not len(mention_ranks):
        raise InvalidReportInput("销量排名与提及计数都不能为空")
    mentions = mention_ranks.as_dict()
    return [
        ReportRow(brand=e.brand, sales_rank=e.rank, sales_metric=e.metric,
                  mentions=mentions.get(e.brand, 0))
        for e in sales_rank.entries
    ]


def report_frame(rows: Sequence[ReportRow]) -> pd.DataFrame:
    return pd.DataFrame([r.model_dump() for r in rows],
                        columns=["brand", "sales_rank", "sales_metric", "mentions"])


# ==================== 结果落地 ====================
def materialize(store: LakeStore, catalog, frame: pd.DataFrame, name: str,
                inputs: Sequence[str], zone=Zone.CURATED) -> Tuple[str, int]:
    """把查询结果作为 CSV 暂存到精炼区，并记录 dataset -> job:query -> dataset 血缘"""
    job_id = timestamp_id("query")
    desc = catalog.ensure_dataset(DatasetDescriptor(
        name=name, zone=zone, format=DatasetFormat.CSV, source=f"query:{job_id}",
    ))
    payload = frame.to_csv(index=False, lineterminator="\n").encode("utf-8")
    key = ObjectKey(zone=desc.zone, dataset=name, partition=job_id.replace("query-", "run-"),
                    filename="part-00000.csv")
    ref = store.put_object(key, payload, record_count=len(frame))
    manifest = store.commit_manifest(name, desc.zone, [ref])

    job = job_node(job_id)
    for source in inputs:
        src_zone, src_name = parse_dataset_ref(source)
        catalog.record_lineage(LineageEdge(from_node=dataset_node(src_zone, src_name),
                                           to_node=job, job_kind=JobKind.QUERY))
    catalog.record_lineage(LineageEdge(from_node=job, to_node=dataset_node(desc.zone, name),
                                       job_kind=JobKind.QUERY))
    logger.info("query_materialized", dataset=f"{desc.zone.value}/{name}", version=manifest.version)
    return job_id, manifest.version
