"""
元数据目录
数据集描述、来源登记与血缘边；整个目录保存在 <lake_root>/catalog.json
"""
import os
import threading
import uuid
from pathlib import Path
from typing import Dict, List, Tuple

import networkx as nx
import orjson
import structlog

from app.core.exceptions import AlreadyRegistered, CycleDetected, UnknownDataset
from app.models.schemas import DatasetDescriptor, LineageEdge, parse_zone

logger = structlog.get_logger(__name__)

CATALOG_FILE = "catalog.json"


class Catalog:
    """单写多读；所有变更串行化在一把锁之后"""

    def __init__(self, lake_root):
        self.root = Path(lake_root)
        self.path = self.root / CATALOG_FILE
        self._lock = threading.RLock()
        self._datasets: Dict[Tuple[str, str], DatasetDescriptor] = {}
        self._lineage: List[LineageEdge] = []
        self._graph = nx.DiGraph()
        self._load()

    # ------------------------------------------------------------------
    # 持久化
    # ------------------------------------------------------------------
    def _load(self):
        if not self.path.exists():
            return
        raw = orjson.loads(self.path.read_bytes())
        for item in raw.get("datasets", []):
            desc = DatasetDescriptor.model_validate(item)
            self._datasets[(desc.zone.value, desc.name)] = desc
        for item in raw.get("lineage", []):
            edge = LineageEdge.model_validate(item)
            self._lineage.append(edge)
            self._graph.add_edge(edge.from_node, edge.to_node)

    def _save(self):
        """整体重写：临时文件 + 原子重命名"""
        doc = {
            "datasets": [d.model_dump(mode="json") for d in self.list_datasets()],
            "lineage": [e.model_dump(mode="json") for e in self._lineage],
        }
        tmp = self.path.with_name(f".{self.path.name}.{uuid.uuid4().hex}.tmp")
        tmp.write_bytes(orjson.dumps(doc, option=orjson.OPT_INDENT_2))
        os.replace(tmp, self.path)

    @classmethod
    def initialize(cls, lake_root) -> "Catalog":
        catalog = cls(lake_root)
        if not catalog.path.exists():
            with catalog._lock:
                catalog._save()
        return catalog

    # ------------------------------------------------------------------
    # 数据集
    # ------------------------------------------------------------------
    def register_dataset(self, desc: DatasetDescriptor) -> None:
        with self._lock:
            key = (desc.zone.value, desc.name)
            if key in self._datasets:
                raise AlreadyRegistered(f"数据集已登记: {desc.zone.value}/{desc.name}")
            self._datasets[key] = desc
            self._save()
        logger.info("dataset_registered", zone=desc.zone.value, name=desc.name, format=desc.format.value)

    def ensure_dataset(self, desc: DatasetDescriptor) -> DatasetDescriptor:
        with self._lock:
            existing = self._datasets.get((desc.zone.value, desc.name))
            if existing is not None:
                return existing
            self.register_dataset(desc)
            return desc

    def get_dataset(self, zone, name: str) -> DatasetDescriptor:
        zone = parse_zone(zone)
        try:
            return self._datasets[(zone.value, name)]
        except KeyError:
            raise UnknownDataset(f"未登记的数据集: {zone.value}/{name}")

    def list_datasets(self) -> List[DatasetDescriptor]:
        return [self._datasets[k] for k in sorted(self._datasets)]

    # ------------------------------------------------------------------
    # 血缘
    # ------------------------------------------------------------------
    def _check_node(self, node_id: str):
        if node_id.startswith("dataset:"):
            ref = node_id[len("dataset:"):]
            zone, _, name = ref.partition("/")
            if (zone, name) not in self._datasets:
                raise UnknownDataset(f"血缘引用了未登记的数据集: {node_id}")

    def record_lineage(self, edge: LineageEdge) -> None:
        with self._lock:
            self._check_node(edge.from_node)
            self._check_node(edge.to_node)
            if edge.from_node == edge.to_node or (
                edge.to_node in self._graph and edge.from_node in self._graph
                and nx.has_path(self._graph, edge.to_node, edge.from_node)
            ):
                raise CycleDetected(f"血缘边会形成环: {edge.from_node} -> {edge.to_node}")
            self._graph.add_edge(edge.from_node, edge.to_node)
            self._lineage.append(edge)
            self._save()
        logger.info("lineage_recorded", from_node=edge.from_node, to_node=edge.to_node,
                    job_kind=edge.job_kind.value)

    def has_edge(self, from_node: str, to_node: str) -> bool:
        return self._graph.has_edge(from_node, to_node)

    def node_exists(self, node_id: str) -> bool:
        if node_id in self._graph:
            return True
        if node_id.startswith("dataset:"):
            zone, _, name = node_id[len("dataset:"):].partition("/")
            return (zone, name) in self._datasets
        return False

    def lineage_of(self, node_id: str) -> List[LineageEdge]:
        """全部上游边，按拓扑序排列（同层按节点 id）"""
        if not self.node_exists(node_id):
            raise UnknownDataset(f"未知节点: {node_id}")
        if node_id not in self._graph:
            return []
        with self._lock:
            upstream = nx.ancestors(self._graph, node_id) | {node_id}
            sub = self._graph.subgraph(upstream)
            order = {n: i for i, n in enumerate(nx.lexicographical_topological_sort(sub))}
            edges = [e for e in self._lineage if e.from_node in upstream and e.to_node in upstream]
        edges.sort(key=lambda e: (order[e.from_node], order[e.to_node], e.at))
        return edges

    def all_edges(self) -> List[LineageEdge]:
        return list(self._lineage)

