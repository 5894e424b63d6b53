"""
流式摄取引擎
处理器 DAG + 有界队列：每个处理器一个 asyncio 任务，每条连接一个 asyncio.Queue(maxsize=capacity)，
队列满时生产者阻塞（背压），不丢记录
"""
import asyncio
import time
import uuid
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple, Union

import networkx as nx
import orjson
import structlog

from app.core.exceptions import CycleDetected, DanglingPort, FlowFailed, LakeError
from app.managers.logger_manager import logger_manager
from app.managers.prometheus_manager import prometheus_metrics
from app.models.schemas import (
    ConnectionSpec, DatasetDescriptor, FlowGraphSpec, FlowRecord, FlowReport, LineageEdge,
    ObjectKey, dataset_node, job_node, source_node,
)
from app.models.shared import DatasetFormat, EventKind, JobKind, Zone
from app.services.catalog import Catalog
from app.services.flow.processors import (
    QUARANTINE, SUCCESS, Processor, SinkProcessor, SourceProcessor, create_processor,
)
from app.services.flow.provenance import ProvenanceLog
from app.services.lake_store import LakeStore
from app.utils.ids import timestamp_id

logger = structlog.get_logger(__name__)

QUARANTINE_DATASET = "quarantine"

# 流结束标记
_EOS = object()


@dataclass(frozen=True, eq=False)
class Edge:
    from_proc: str
    from_port: str
    to_proc: str
    spec: ConnectionSpec

    @property
    def label(self) -> str:
        return f"{self.from_proc}.{self.from_port}->{self.to_proc}"


class FlowGraph:
    """校验过的可执行图；每次运行重新实例化处理器"""

    def __init__(self, spec: FlowGraphSpec, edges: List[Edge], order: List[str]):
        self.spec = spec
        self.edges = edges
        self.order = order

    def instantiate(self) -> Dict[str, Processor]:
        return {p.name: create_processor(p) for p in self.spec.processors}

    def outbound(self, name: str, port: str) -> List[Edge]:
        return [e for e in self.edges if e.from_proc == name and e.from_port == port]

    def inbound(self, name: str) -> List[Edge]:
        return [e for e in self.edges if e.to_proc == name]


def _split_endpoint(endpoint: str, names) -> Tuple[str, str]:
    if endpoint in names:
        return endpoint, SUCCESS
    name, dot, port = endpoint.rpartition(".")
    if not dot or name not in names:
        raise DanglingPort(f"连接端点指向不存在的处理器: {endpoint!r}")
    return name, port


def build_graph(spec: Union[FlowGraphSpec, Dict]) -> FlowGraph:
    """校验：处理器类型已知、端点存在、无环、至少一个 source 与一个 sink"""
    if not isinstance(spec, FlowGraphSpec):
        spec = FlowGraphSpec.model_validate(spec)

    processors = {p.name: create_processor(p) for p in spec.processors}
    names = set(processors)

    edges = []
    for conn in spec.connections:
        from_proc, from_port = _split_endpoint(conn.from_, names)
        if conn.to not in names:
            raise DanglingPort(f"连接端点指向不存在的处理器: {conn.to!r}")
        edges.append(Edge(from_proc, from_port, conn.to, conn))

    graph = nx.DiGraph()
    graph.add_nodes_from(sorted(names))
    for edge in edges:
        if edge.from_proc == edge.to_proc:
            raise CycleDetected(f"处理器自环: {edge.from_proc}")
        graph.add_edge(edge.from_proc, edge.to_proc)
    if not nx.is_directed_acyclic_graph(graph):
        cycle = nx.find_cycle(graph)
        raise CycleDetected(f"流图存在环: {cycle}")

    for edge in edges:
        source = processors[edge.from_proc]
        if edge.from_port not in source.output_ports:
            raise DanglingPort(f"{edge.from_proc} 没有输出端口 {edge.from_port!r}")
        if not processors[edge.to_proc].accepts_input:
            raise DanglingPort(f"{edge.to_proc} 不接受输入")

    if not any(isinstance(p, SourceProcessor) for p in processors.values()):
        raise DanglingPort("流图没有 source")
    if not any(isinstance(p, SinkProcessor) for p in processors.values()):
        raise DanglingPort("流图没有 sink")
    for name, proc in processors.items():
        if proc.accepts_input and not any(e.to_proc == name for e in edges):
            raise DanglingPort(f"{name} 没有输入连接")
        if SUCCESS in proc.output_ports and not any(
                e.from_proc == name and e.from_port == SUCCESS for e in edges):
            raise DanglingPort(f"{name}.{SUCCESS} 未连接")

    return FlowGraph(spec, edges, list(nx.lexicographical_topological_sort(graph)))


class FlowRunner:
    """一次流运行的上下文，处理器通过它发出记录与溯源事件"""

    def __init__(self, graph: FlowGraph, store: LakeStore, catalog: Catalog, run_id: Optional[str] = None):
        self.graph = graph
        self.store = store
        self.catalog = catalog
        self.run_id = run_id or timestamp_id("flow")
        self.provenance = ProvenanceLog(self.run_id, store.root)
        self.processors = graph.instantiate()
        self.queues: Dict[Edge, asyncio.Queue] = {}
        self.max_depths: Dict[str, int] = {e.label: 0 for e in graph.edges}
        self._above_watermark = set()
        self.quarantined: List[Tuple[FlowRecord, str]] = []

    # ------------------------------------------------------------------
    # 记录传递
    # ------------------------------------------------------------------
    async def emit(self, proc: Processor, port: str, record: FlowRecord):
        edges = self.graph.outbound(proc.name, port)
        if not edges:
            if port == QUARANTINE:
                reason = record.attributes.get("quarantine.reason", "unknown")
                self.provenance.record(record.uuid, proc.name, EventKind.DROP, f"quarantined: {reason}")
                self.quarantined.append((record, proc.name))
                return
            raise DanglingPort(f"{proc.name}.{port} 未连接")

        if port == QUARANTINE:
            self.provenance.record(record.uuid, proc.name, EventKind.ROUTE, QUARANTINE)

        for i, edge in enumerate(edges):
            out = record
            if i > 0:
                # 扇出：子记录使用新 uuid
                out = record.model_copy(update={"uuid": str(uuid.uuid5(uuid.UUID(record.uuid), edge.label))})
                self.provenance.record(out.uuid, proc.name, EventKind.CREATE, f"parent_uuid={record.uuid}")
            await self._put(edge, out)

    async def _put(self, edge: Edge, item):
        queue = self.queues[edge]
        await queue.put(item)
        depth = queue.qsize()
        if depth > self.max_depths[edge.label]:
            self.max_depths[edge.label] = depth
            prometheus_metrics.record_queue_depth(edge.label, depth)
        if depth >= edge.spec.high_watermark and edge.label not in self._above_watermark:
            self._above_watermark.add(edge.label)
            logger.warning("queue_high_watermark", connection=edge.label, depth=depth,
                           capacity=edge.spec.capacity)

    async def _close_outputs(self, name: str):
        for edge in self.graph.edges:
            if edge.from_proc == name:
                await self._put(edge, _EOS)

    # ------------------------------------------------------------------
    # 处理器任务
    # ------------------------------------------------------------------
    async def _run_source(self, proc: SourceProcessor, record_limit: Optional[int], deadline: Optional[float]):
        loop = asyncio.get_running_loop()
        emitted = 0
        if record_limit != 0:
            for record in proc.records():
                self.provenance.record(record.uuid, proc.name, EventKind.CREATE, "source")
                await self.emit(proc, SUCCESS, record)
                emitted += 1
                if record_limit is not None and emitted >= record_limit:
                    break
                if deadline is not None and loop.time() >= deadline:
                    break
        logger.debug("source_exhausted", processor=proc.name, records=emitted)
        await self._close_outputs(proc.name)

    async def _run_processor(self, proc: Processor):
        await proc.open(self)

        async def pump(edge: Edge):
            queue = self.queues[edge]
            while True:
                item = await queue.get()
                if item is _EOS:
                    return
                await proc.on_record(item, self)

        await asyncio.gather(*(pump(e) for e in self.graph.inbound(proc.name)))
        await proc.close(self)
        await self._close_outputs(proc.name)

    async def _guarded(self, proc: Processor, coro):
        try:
            await coro
        except FlowFailed:
            raise
        except Exception as e:
            logger.error("processor_failed", processor=proc.name, error=str(e))
            raise FlowFailed(proc.name, e) from e

    # ------------------------------------------------------------------
    # 运行
    # ------------------------------------------------------------------
    def _prepare_targets(self):
        for proc in self.processors.values():
            if not isinstance(proc, SinkProcessor):
                continue
            zone, name = proc.target
            desc = self.catalog.ensure_dataset(DatasetDescriptor(
                name=name, zone=zone, format=DatasetFormat.JSONL, source=f"flow sink {proc.name}",
            ))
            if desc.format != DatasetFormat.JSONL:
                raise FlowFailed(proc.name, ValueError(f"目标数据集 {zone.value}/{name} 不是 jsonl 格式"))

    async def run(self, record_limit: Optional[int] = None, duration: Optional[float] = None) -> FlowReport:
        sources = [p for p in self.processors.values() if isinstance(p, SourceProcessor)]
        if record_limit is None and duration is None and not all(s.bounded for s in sources):
            raise ValueError("无界 source 需要 record_limit 或 duration")
        if record_limit is not None and record_limit < 0:
            raise ValueError("record_limit 不能为负")

        self._prepare_targets()
        for edge in self.graph.edges:
            self.queues[edge] = asyncio.Queue(maxsize=edge.spec.capacity)

        start_time = time.time()
        loop = asyncio.get_running_loop()
        deadline = loop.time() + duration if duration is not None else None
        logger_manager.log_flow_event("flow_started", self.run_id, {
            "processors": self.graph.order, "record_limit": record_limit, "duration": duration,
        })

        tasks = []
        for name in self.graph.order:
            proc = self.processors[name]
            if isinstance(proc, SourceProcessor):
                coro = self._run_source(proc, record_limit, deadline)
            else:
                coro = self._run_processor(proc)
            tasks.append(asyncio.create_task(self._guarded(proc, coro), name=f"{self.run_id}:{name}"))

        try:
            await asyncio.gather(*tasks)
            quarantine_committed = await asyncio.to_thread(self._commit_quarantine)
        except BaseException as e:
            for task in tasks:
                task.cancel()
            await asyncio.gather(*tasks, return_exceptions=True)
            await asyncio.gather(*(p.abort() for p in self.processors.values()), return_exceptions=True)
            self.provenance.persist()
            if isinstance(e, LakeError):
                logger_manager.log_error("flow_failed", e.message, {"run_id": self.run_id})
            raise

        self.provenance.persist()
        self._record_lineage(sources, quarantine_committed)
        report = self._report(time.time() - start_time)
        logger_manager.log_flow_event("flow_completed", self.run_id, report.model_dump())
        logger_manager.log_performance("run_flow", report.duration, {"run_id": self.run_id})
        return report

    def _commit_quarantine(self) -> bool:
        """未连接的 quarantine 端口：运行结束时写入 landing/quarantine"""
        if not self.quarantined:
            return False
        self.catalog.ensure_dataset(DatasetDescriptor(
            name=QUARANTINE_DATASET, zone=Zone.LANDING, format=DatasetFormat.JSONL,
            source="flow quarantine",
        ))
        lines = [
            orjson.dumps({
                "_uuid": record.uuid,
                "processor": processor,
                "reason": record.attributes.get("quarantine.reason", "unknown"),
                "payload": record.payload.decode("utf-8", errors="replace"),
            }) + b"\n"
            for record, processor in self.quarantined
        ]
        key = ObjectKey(zone=Zone.LANDING, dataset=QUARANTINE_DATASET, partition=self.run_id,
                        filename="part-00000.jsonl")
        ref = self.store.put_object(key, b"".join(lines), len(lines))
        self.store.commit_manifest(QUARANTINE_DATASET, Zone.LANDING, [ref])
        logger.info("quarantine_committed", run_id=self.run_id, records=len(lines))
        return True

    def _record_lineage(self, sources: List[SourceProcessor], quarantine_committed: bool):
        targets = [
            dataset_node(*p.target) for p in self.processors.values()
            if isinstance(p, SinkProcessor) and getattr(p, "files_committed", 0) > 0
        ]
        if quarantine_committed:
            targets.append(dataset_node(Zone.LANDING, QUARANTINE_DATASET))
        if not targets:
            return
        job = job_node(self.run_id)
        for src in sources:
            self.catalog.record_lineage(LineageEdge(
                from_node=source_node(src.lineage_label()), to_node=job, job_kind=JobKind.FLOW_RUN,
            ))
        for target in sorted(set(targets)):
            self.catalog.record_lineage(LineageEdge(from_node=job, to_node=target, job_kind=JobKind.FLOW_RUN))

    def _report(self, duration: float) -> FlowReport:
        counts = self.provenance.counts()
        return FlowReport(
            run_id=self.run_id,
            records_in=counts.get(EventKind.CREATE, 0),
            records_out=counts.get(EventKind.SEND, 0),
            records_dropped=counts.get(EventKind.DROP, 0),
            max_queue_depths=dict(self.max_depths),
            files_committed=sum(getattr(p, "files_committed", 0) for p in self.processors.values()),
            quarantined=len(self.quarantined),
            duration=duration,
        )


async def run_flow(graph: FlowGraph, store: LakeStore, catalog: Catalog, record_limit: Optional[int] = None,
                   duration: Optional[float] = None, run_id: Optional[str] = None) -> FlowReport:
    runner = FlowRunner(graph, store, catalog, run_id)
    return await runner.run(record_limit=record_limit, duration=duration)


def tweet_ingest_spec(seed: int, brand_weights: Optional[Dict[str, float]] = None,
                      keep_lang: Optional[str] = None, target: str = "raw/tweets",
                      batch_max: int = 500, capacity: int = 64) -> FlowGraphSpec:
    """tweet_source -> parse_tweet [-> filter_lang] -> micro_batch_sink"""
    processors = [
        {"name": "tweets", "kind": "tweet_source", "params": {"seed": seed, "brand_weights": brand_weights}},
        {"name": "parse", "kind": "parse_tweet"},
    ]
    chain = ["tweets", "parse"]
    if keep_lang:
        processors.append({"name": "lang", "kind": "filter_lang", "params": {"keep": keep_lang}})
        chain.append("lang")
    processors.append({"name": "sink", "kind": "micro_batch_sink",
                       "params": {"target": target, "batch_max": batch_max}})
    chain.append("sink")
    connections = [{"from": a, "to": b, "capacity": capacity} for a, b in zip(chain, chain[1:])]
    return FlowGraphSpec.model_validate({"processors": processors, "connections": connections})
