"""
内置处理器
每种处理器对单条 FlowRecord 操作：source 产生记录，transform 变换或路由，sink 微批写入原始区
"""
import asyncio
import hashlib
import uuid
from pathlib import Path
from typing import TYPE_CHECKING, ClassVar, Dict, Iterator, List, Optional, Tuple, Type

import orjson
import structlog
from pydantic import BaseModel, ConfigDict, Field
from tenacity import AsyncRetrying, retry_if_exception_type, stop_after_attempt, wait_fixed

from app.core.config import settings
from app.core.exceptions import FlowFailed, LakeError, UnknownProcessorKind
from app.managers.logger_manager import logger_manager
from app.models.schemas import FlowRecord, ObjectKey, ProcessorSpec, parse_dataset_ref
from app.models.shared import EventKind, Zone
from app.services.flow.tweet_generator import iter_tweets, tweet_json, tweet_uuid, uniform_weights

if TYPE_CHECKING:
    from app.services.flow.engine import FlowRunner

logger = structlog.get_logger(__name__)

SUCCESS = "success"
QUARANTINE = "quarantine"

FILE_NAMESPACE = uuid.UUID("0b7e5f64-2c1a-5d8e-8f3b-6a9d4c2e1b70")


class _Params(BaseModel):
    model_config = ConfigDict(extra="forbid")


# ==================== 基类 ====================
class Processor:
    kind: ClassVar[str] = ""
    accepts_input: ClassVar[bool] = True
    output_ports: ClassVar[Tuple[str, ...]] = (SUCCESS,)
    params_model: ClassVar[Type[_Params]] = _Params

    def __init__(self, name: str, params: Optional[Dict] = None):
        self.name = name
        self.params = self.params_model.model_validate(params or {})

    async def open(self, ctx: "FlowRunner"):
        pass

    async def on_record(self, record: FlowRecord, ctx: "FlowRunner"):
        raise NotImplementedError

    async def close(self, ctx: "FlowRunner"):
        pass

    async def abort(self):
        """运行失败时释放后台任务，不再提交任何数据"""
        pass


class SourceProcessor(Processor):
    accepts_input = False
    bounded: ClassVar[bool] = True

    def records(self) -> Iterator[FlowRecord]:
        raise NotImplementedError

    def lineage_label(self) -> str:
        return self.name


class SinkProcessor(Processor):
    output_ports = ()

    @property
    def target(self) -> Tuple[Zone, str]:
        raise NotImplementedError


# ==================== Source ====================
class TweetSourceParams(_Params):
    seed: Optional[int] = None
    brand_weights: Optional[Dict[str, float]] = None


class TweetSource(SourceProcessor):
    """确定性推文流；uuid 由 (seed, 序号) 派生，重放得到相同 uuid"""
    kind = "tweet_source"
    bounded = False
    params_model = TweetSourceParams

    def __init__(self, name: str, params: Optional[Dict] = None):
        super().__init__(name, params)
        self.seed = self.params.seed if self.params.seed is not None else settings.default_seed
        self.brand_weights = self.params.brand_weights or uniform_weights()
        # 提前校验权重
        self._stream = iter_tweets(self.seed, self.brand_weights)

    def records(self) -> Iterator[FlowRecord]:
        for index, tweet in enumerate(self._stream):
            yield FlowRecord(
                uuid=tweet_uuid(self.seed, index),
                attributes={"mime.type": "application/json"},
                payload=tweet_json(tweet),
            )

    def lineage_label(self) -> str:
        return f"tweet-generator@seed={self.seed}"


class FileSourceParams(_Params):
    path: str


class FileSource(SourceProcessor):
    """本地文件，每个非空行一条记录"""
    kind = "file_source"
    params_model = FileSourceParams

    def __init__(self, name: str, params: Optional[Dict] = None):
        super().__init__(name, params)
        self.path = Path(self.params.path)
        self._digest: Optional[str] = None

    def _read(self) -> bytes:
        data = self.path.read_bytes()
        self._digest = hashlib.sha256(data).hexdigest()
        return data

    def records(self) -> Iterator[FlowRecord]:
        data = self._read()
        for lineno, line in enumerate(data.splitlines(), start=1):
            line = line.strip()
            if not line:
                continue
            yield FlowRecord(
                uuid=str(uuid.uuid5(FILE_NAMESPACE, f"{self._digest}:{lineno}")),
                attributes={"filename": self.path.name, "line": str(lineno)},
                payload=line,
            )

    def lineage_label(self) -> str:
        if self._digest is None:
            self._read()
        return f"file:{self.path.name}@sha256:{self._digest[:16]}"


# ==================== Transform ====================
class ParseTweet(Processor):
    """抽取 tweet_id / lang / msg 属性；载荷不变，坏 JSON 走 quarantine 端口"""
    kind = "parse_tweet"
    output_ports = (SUCCESS, QUARANTINE)
    extracted = ("tweet_id", "lang", "msg")

    async def on_record(self, record: FlowRecord, ctx: "FlowRunner"):
        try:
            obj = orjson.loads(record.payload)
        except orjson.JSONDecodeError:
            await ctx.emit(self, QUARANTINE, record.with_attributes(**{"quarantine.reason": "malformed-json"}))
            return
        if not isinstance(obj, dict):
            await ctx.emit(self, QUARANTINE, record.with_attributes(**{"quarantine.reason": "not-an-object"}))
            return

        updates = {}
        for field in self.extracted:
            value = obj.get(field)
            if value is None:
                continue
            updates[field] = value if isinstance(value, str) else orjson.dumps(value).decode()
        parsed = record.with_attributes(**updates)
        ctx.provenance.record(record.uuid, self.name, EventKind.TRANSFORM, "parsed")
        await ctx.emit(self, SUCCESS, parsed)


class FilterLangParams(_Params):
    keep: str = "en"


class FilterLang(Processor):
    kind = "filter_lang"
    params_model = FilterLangParams

    async def on_record(self, record: FlowRecord, ctx: "FlowRunner"):
        lang = record.attributes.get("lang")
        if lang is None:
            ctx.provenance.record(record.uuid, self.name, EventKind.DROP, "missing-attribute")
            return
        if lang != self.params.keep:
            ctx.provenance.record(record.uuid, self.name, EventKind.DROP, f"lang={lang}")
            return
        await ctx.emit(self, SUCCESS, record)


# ==================== Sink ====================
def inject_uuid(record: FlowRecord) -> bytes:
    """原样保留载荷，在末尾 } 前拼接 "_uuid" 字段"""
    payload = record.payload.strip()
    uuid_field = b'"_uuid":' + orjson.dumps(record.uuid)
    try:
        obj = orjson.loads(payload)
    except orjson.JSONDecodeError:
        obj = None
    if not isinstance(obj, dict):
        return orjson.dumps({"_payload": payload.decode("utf-8", errors="replace"), "_uuid": record.uuid})
    if not obj:
        return b"{" + uuid_field + b"}"
    if "_uuid" in obj or b"\n" in payload or b"\r" in payload:
        obj["_uuid"] = record.uuid
        return orjson.dumps(obj)
    return payload[:-1] + b"," + uuid_field + b"}"


class MicroBatchSinkParams(_Params):
    target: str = "raw/tweets"
    batch_max: int = Field(default=100, ge=1)
    flush_interval: float = Field(default=1.0, gt=0)
    record_delay: float = Field(default=0.0, ge=0)
    crash_after: Optional[int] = Field(default=None, ge=0)


class MicroBatchSink(SinkProcessor):
    """按 batch_max 或 flush_interval（先到者）刷写一个 JSON-lines 文件并提交一次清单"""
    kind = "micro_batch_sink"
    params_model = MicroBatchSinkParams

    def __init__(self, name: str, params: Optional[Dict] = None):
        super().__init__(name, params)
        self._target = parse_dataset_ref(self.params.target)
        self._buffer: List[FlowRecord] = []
        self._first_buffered_at = 0.0
        self._lock: Optional[asyncio.Lock] = None
        self._ticker: Optional[asyncio.Task] = None
        self._failure: Optional[BaseException] = None
        self._seq = 0
        self.accepted = 0
        self.files_committed = 0
        self.records_committed = 0

    @property
    def target(self) -> Tuple[Zone, str]:
        return self._target

    async def open(self, ctx: "FlowRunner"):
        self._lock = asyncio.Lock()
        self._ticker = asyncio.create_task(self._tick(ctx))

    async def _tick(self, ctx: "FlowRunner"):
        loop = asyncio.get_running_loop()
        interval = self.params.flush_interval
        delay = interval
        while True:
            await asyncio.sleep(delay)
            async with self._lock:
                delay = interval
                if not self._buffer:
                    continue
                # 睡到最早一条缓冲记录到期
                remaining = self._first_buffered_at + interval - loop.time()
                if remaining > 0:
                    delay = remaining
                    continue
                try:
                    await self._flush(ctx)
                except Exception as e:
                    self._failure = e if isinstance(e, FlowFailed) else FlowFailed(self.name, e)
                    return

    async def on_record(self, record: FlowRecord, ctx: "FlowRunner"):
        if self._failure:
            raise self._failure
        if self.params.crash_after is not None and self.accepted >= self.params.crash_after:
            raise RuntimeError(f"injected crash after {self.accepted} records")
        self.accepted += 1
        if self.params.record_delay:
            await asyncio.sleep(self.params.record_delay)
        async with self._lock:
            if not self._buffer:
                self._first_buffered_at = asyncio.get_running_loop().time()
            self._buffer.append(record)
            if len(self._buffer) >= self.params.batch_max:
                await self._flush(ctx)

    async def close(self, ctx: "FlowRunner"):
        if self._ticker is not None:
            async with self._lock:
                self._ticker.cancel()
            await asyncio.gather(self._ticker, return_exceptions=True)
        if self._failure:
            raise self._failure
        # 流结束强制刷写
        async with self._lock:
            await self._flush(ctx)

    async def abort(self):
        if self._ticker is not None:
            self._ticker.cancel()
            await asyncio.gather(self._ticker, return_exceptions=True)
        self._buffer = []

    async def _flush(self, ctx: "FlowRunner"):
        if not self._buffer:
            return
        batch, self._buffer = self._buffer, []
        payload = b"".join(inject_uuid(r) + b"\n" for r in batch)
        zone, dataset = self._target

        try:
            async for attempt in AsyncRetrying(
                stop=stop_after_attempt(2),
                wait=wait_fixed(0.05),
                retry=retry_if_exception_type(LakeError),
                reraise=True,
            ):
                with attempt:
                    key = ObjectKey(zone=zone, dataset=dataset, partition=ctx.run_id,
                                    filename=f"part-{self._seq:05d}.jsonl")
                    self._seq += 1
                    ref = await asyncio.to_thread(ctx.store.put_object, key, payload, len(batch))
                    manifest = await asyncio.to_thread(ctx.store.commit_manifest, dataset, zone, [ref])
        except LakeError as e:
            logger.error("flow_batch_failed", sink=self.name, records=len(batch), error=e.message)
            raise FlowFailed(self.name, e) from e

        for record in batch:
            ctx.provenance.record(record.uuid, self.name, EventKind.SEND, str(key.relative_path))
        self.files_committed += 1
        self.records_committed += len(batch)
        logger_manager.log_flow_event("batch_committed", ctx.run_id, {
            "sink": self.name, "file": str(key.relative_path), "records": len(batch), "version": manifest.version,
        })
        logger.info("flow_batch_committed", sink=self.name, records=len(batch), version=manifest.version)


PROCESSOR_KINDS: Dict[str, Type[Processor]] = {
    cls.kind: cls for cls in (TweetSource, FileSource, ParseTweet, FilterLang, MicroBatchSink)
}


def create_processor(spec: ProcessorSpec) -> Processor:
    cls = PROCESSOR_KINDS.get(spec.kind)
    if cls is None:
        raise UnknownProcessorKind(f"未知处理器类型 {spec.kind!r}（处理器 {spec.name}）")
    return cls(spec.name, spec.params)
