"""
Prometheus 指标管理器
负责收集和导出数据湖运行指标
"""
import logging
import time
from contextlib import contextmanager
from pathlib import Path

from prometheus_client import (
    CollectorRegistry, Counter, Gauge, Histogram, Info,
    generate_latest, write_to_textfile,
)

logger = logging.getLogger(__name__)


class PrometheusMetrics:
    def __init__(self):
        self.registry = CollectorRegistry()

        # ==================== 存储指标 ====================
        self.objects_written_total = Counter(
            'lake_objects_written_total',
            'Total number of objects written',
            ['zone'],
            registry=self.registry
        )

        self.bytes_written_total = Counter(
            'lake_bytes_written_total',
            'Total number of payload bytes written',
            ['zone'],
            registry=self.registry
        )

        self.manifest_commits_total = Counter(
            'lake_manifest_commits_total',
            'Total number of manifest commits',
            ['zone', 'dataset'],
            registry=self.registry
        )

        self.commit_conflicts_total = Counter(
            'lake_commit_conflicts_total',
            'Total number of manifest version races',
            registry=self.registry
        )

        self.commit_duration = Histogram(
            'lake_commit_duration_seconds',
            'Manifest commit duration in seconds',
            registry=self.registry
        )

        # ==================== 导入指标 ====================
        self.import_rows_total = Counter(
            'lake_import_rows_total',
            'Total number of rows imported',
            ['dataset'],
            registry=self.registry
        )

        # ==================== 流式指标 ====================
        self.flow_records_total = Counter(
            'lake_flow_records_total',
            'Provenance events by processor and kind',
            ['processor', 'kind'],
            registry=self.registry
        )

        self.flow_queue_depth = Gauge(
            'lake_flow_queue_depth',
            'Maximum observed depth of a flow connection',
            ['connection'],
            registry=self.registry
        )

        # ==================== 查询指标 ====================
        self.query_duration = Histogram(
            'lake_query_duration_seconds',
            'Query duration in seconds',
            ['operation'],
            registry=self.registry
        )

        self.app_info = Info(
            'lake_app',
            'Application information',
            registry=self.registry
        )
        self.app_info.info({'name': 'lakelet', 'version': '1.0.0'})

    def record_object_written(self, zone: str, size_bytes: int):
        self.objects_written_total.labels(zone=zone).inc()
        self.bytes_written_total.labels(zone=zone).inc(size_bytes)

    def record_commit(self, zone: str, dataset: str, duration: float):
        self.manifest_commits_total.labels(zone=zone, dataset=dataset).inc()
        self.commit_duration.observe(duration)

    def record_provenance(self, processor: str, kind: str):
        self.flow_records_total.labels(processor=processor, kind=kind).inc()

    def record_queue_depth(self, connection: str, depth: int):
        self.flow_queue_depth.labels(connection=connection).set(depth)

    @contextmanager
    def timer(self, operation: str):
        """查询计时上下文"""
        start_time = time.time()
        try:
            yield
        finally:
            self.query_duration.labels(operation=operation).observe(time.time() - start_time)

    def get_metrics(self) -> bytes:
        """获取 Prometheus 格式的指标数据"""
        return generate_latest(self.registry)

    def write_textfile(self, path: Path):
        """写出到文本文件（供 node_exporter textfile 采集）"""
        try:
            write_to_textfile(str(path), self.registry)
        except OSError as e:
            logger.warning(f"写出指标文件失败: {e}")


# 全局指标实例
prometheus_metrics = PrometheusMetrics()
