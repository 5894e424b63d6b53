"""
溯源日志
每次流运行一个只追加日志，运行结束后落盘为 <lake_root>/provenance/<run-id>.jsonl
"""
import os
import threading
from collections import Counter
from pathlib import Path
from typing import Dict, Iterable, List, Optional

import orjson
import structlog

from app.core.exceptions import UnknownRecord
from app.managers.prometheus_manager import prometheus_metrics
from app.models.schemas import ProvenanceEvent
from app.models.shared import EventKind

logger = structlog.get_logger(__name__)

PROVENANCE_DIR = "provenance"


class ProvenanceLog:
    def __init__(self, run_id: str, lake_root=None):
        self.run_id = run_id
        self.path: Optional[Path] = None
        if lake_root is not None:
            self.path = Path(lake_root) / PROVENANCE_DIR / f"{run_id}.jsonl"
        self._events: List[ProvenanceEvent] = []
        self._lock = threading.Lock()

    def record(self, record_uuid: str, processor_name: str, kind: EventKind, detail: str = "") -> ProvenanceEvent:
        event = ProvenanceEvent(record_uuid=record_uuid, processor_name=processor_name,
                                kind=kind, detail=detail, run_id=self.run_id)
        with self._lock:
            self._events.append(event)
        prometheus_metrics.record_provenance(processor_name, kind.value)
        return event

    def events(self) -> List[ProvenanceEvent]:
        with self._lock:
            return list(self._events)

    def events_for(self, record_uuid: str) -> List[ProvenanceEvent]:
        with self._lock:
            return [e for e in self._events if e.record_uuid == record_uuid]

    def counts(self) -> Dict[EventKind, int]:
        with self._lock:
            return dict(Counter(e.kind for e in self._events))

    def persist(self) -> Optional[Path]:
        """整体写临时文件后替换，重复调用覆盖为最新内容"""
        if self.path is None:
            return None
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with self._lock:
            lines = [orjson.dumps(e.model_dump(mode="json")) for e in self._events]
        tmp = self.path.with_name(f".{self.path.name}.tmp")
        with open(tmp, "wb") as f:
            for line in lines:
                f.write(line + b"\n")
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, self.path)
        logger.debug("provenance_persisted", run_id=self.run_id, events=len(lines))
        return self.path


def load_events(path) -> List[ProvenanceEvent]:
    events = []
    with open(path, "rb") as f:
        for line in f:
            line = line.strip()
            if line:
                events.append(ProvenanceEvent.model_validate(orjson.loads(line)))
    return events


def persisted_runs(lake_root) -> List[Path]:
    directory = Path(lake_root) / PROVENANCE_DIR
    if not directory.exists():
        return []
    return sorted(p for p in directory.glob("*.jsonl") if not p.name.startswith("."))


def provenance_query(lake_root, record_uuid: str,
                     live: Iterable[ProvenanceLog] = ()) -> List[ProvenanceEvent]:
    """按运行顺序返回某条记录的全部事件，CREATE 在前"""
    live = list(live)
    seen_runs = {log.run_id for log in live}
    events: List[ProvenanceEvent] = []
    for path in persisted_runs(lake_root):
        if path.stem in seen_runs:
            continue
        events.extend(e for e in load_events(path) if e.record_uuid == record_uuid)
    for log in sorted(live, key=lambda lg: lg.run_id):
        events.extend(log.events_for(record_uuid))
    if not events:
        raise UnknownRecord(f"未知记录 uuid: {record_uuid}")
    events.sort(key=lambda e: e.run_id)
    return events
