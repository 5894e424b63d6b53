"""
分区对象存储
一次写入的分片文件 + 原子提交的数据集清单（CURRENT 指针 + v<N>.json）
"""
import hashlib
import os
import re
import threading
import time
import uuid
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple

import structlog
from filelock import FileLock
from pydantic import ValidationError
from tenacity import Retrying, retry_if_exception_type, stop_after_attempt, wait_random

from app.core.config import settings
from app.core.exceptions import (
    CommitConflict, CorruptObject, DanglingRef, DuplicateObject,
    InvalidKey, IoError, MissingObject, UnknownVersion,
)
from app.managers.prometheus_manager import prometheus_metrics
from app.models.schemas import (
    HASH_ALGO, DatasetManifest, ObjectKey, ObjectRef, SchemaDescriptor,
    check_name, parse_zone, utc_now,
)
from app.models.shared import Zone

logger = structlog.get_logger(__name__)

VERSION_FILE = re.compile(r"^v(\d+)\.json$")


def content_hash(payload: bytes) -> str:
    return hashlib.new(HASH_ALGO, payload).hexdigest()


class _VersionTaken(Exception):
    """目标版本号已被其他提交者占用"""


class LakeStore:
    """不可变对象存储；多读者线程安全，同一数据集的写者由内部锁串行化"""

    def __init__(self, lake_root, commit_retries: Optional[int] = None):
        self.root = Path(lake_root)
        self.zones_dir = self.root / "zones"
        self.manifests_dir = self.root / "manifests"
        self.commit_retries = commit_retries or settings.commit_retries

        self._locks: Dict[Tuple[str, str], threading.Lock] = {}
        self._locks_guard = threading.Lock()

        self.zones_dir.mkdir(parents=True, exist_ok=True)
        self.manifests_dir.mkdir(parents=True, exist_ok=True)
        self.recover()

    # ------------------------------------------------------------------
    # 崩溃恢复
    # ------------------------------------------------------------------
    def recover(self) -> Dict[str, int]:
        """删除遗留的暂存文件；每个数据集以最新可解析的清单为准"""
        removed = 0
        for base in (self.zones_dir, self.manifests_dir):
            for tmp in base.rglob(".*.tmp"):
                try:
                    tmp.unlink()
                    removed += 1
                except FileNotFoundError:
                    pass

        repaired = 0
        for zone_dir in self._iter_dirs(self.manifests_dir):
            for ds_dir in self._iter_dirs(zone_dir):
                latest = self._latest_parseable(ds_dir)
                current = self._read_current_file(ds_dir)
                if latest == 0:
                    if current is not None:
                        (ds_dir / "CURRENT").unlink(missing_ok=True)
                        repaired += 1
                elif current != latest:
                    self._write_current(ds_dir, latest)
                    repaired += 1

        if removed or repaired:
            logger.info("store_recovered", removed_temp_files=removed, repaired_pointers=repaired)
        return {"removed_temp_files": removed, "repaired_pointers": repaired}

    @staticmethod
    def _iter_dirs(path: Path) -> List[Path]:
        if not path.exists():
            return []
        return sorted(p for p in path.iterdir() if p.is_dir())

    def _latest_parseable(self, ds_dir: Path) -> int:
        versions = []
        for p in ds_dir.iterdir():
            m = VERSION_FILE.match(p.name)
            if m:
                versions.append(int(m.group(1)))
        for version in sorted(versions, reverse=True):
            try:
                DatasetManifest.model_validate_json((ds_dir / f"v{version}.json").read_bytes())
                return version
            except (ValidationError, ValueError, OSError):
                logger.warning("manifest_unparseable", path=str(ds_dir / f"v{version}.json"))
        return 0

    # ------------------------------------------------------------------
    # 路径与锁
    # ------------------------------------------------------------------
    def object_path(self, key: ObjectKey) -> Path:
        return self.root / key.relative_path

    def manifest_dir(self, dataset: str, zone) -> Path:
        zone = parse_zone(zone)
        check_name(dataset, "数据集名")
        return self.manifests_dir / zone.value / dataset

    def _dataset_lock(self, dataset: str, zone: Zone) -> threading.Lock:
        with self._locks_guard:
            return self._locks.setdefault((zone.value, dataset), threading.Lock())

    # ------------------------------------------------------------------
    # 对象
    # ------------------------------------------------------------------
    def put_object(self, key: ObjectKey, payload: bytes, record_count: Optional[int] = None) -> ObjectRef:
        """暂存后原子发布；在清单引用之前对读者不可见"""
        if not isinstance(key, ObjectKey):
            raise InvalidKey(f"非法对象键: {key!r}")
        payload = bytes(payload)
        final = self.object_path(key)
        if final.exists():
            raise DuplicateObject(f"对象已存在: {key.relative_path}")

        tmp = final.parent / f".{key.filename}.{uuid.uuid4().hex}.tmp"
        try:
            final.parent.mkdir(parents=True, exist_ok=True)
            with open(tmp, "wb") as fh:
                fh.write(payload)
                fh.flush()
                os.fsync(fh.fileno())
            self._publish(tmp, final)
        except DuplicateObject:
            raise
        except OSError as e:
            raise IoError(f"写入对象失败 {key.relative_path}: {e}") from e
        finally:
            tmp.unlink(missing_ok=True)

        ref = ObjectRef(
            key=key,
            size_bytes=len(payload),
            content_hash=content_hash(payload),
            record_count=record_count,
        )
        prometheus_metrics.record_object_written(key.zone.value, ref.size_bytes)
        logger.debug("object_written", path=str(key.relative_path), size=ref.size_bytes)
        return ref

    @staticmethod
    def _publish(tmp: Path, final: Path):
        # link 不会覆盖已存在的目标，等价于“不存在才发布”
        try:
            os.link(tmp, final)
        except FileExistsError:
            raise DuplicateObject(f"对象已存在: {final}")
        except OSError:
            if final.exists():
                raise DuplicateObject(f"对象已存在: {final}")
            os.rename(tmp, final)

    def read_object(self, ref: ObjectRef) -> bytes:
        path = self.object_path(ref.key)
        try:
            data = path.read_bytes()
        except FileNotFoundError:
            raise MissingObject(f"对象不存在: {ref.key.relative_path}")
        except OSError as e:
            raise IoError(f"读取对象失败 {ref.key.relative_path}: {e}") from e
        if len(data) != ref.size_bytes or content_hash(data) != ref.content_hash:
            raise CorruptObject(f"对象校验失败: {ref.key.relative_path}")
        return data

    # ------------------------------------------------------------------
    # 清单
    # ------------------------------------------------------------------
    def _read_current_file(self, ds_dir: Path) -> Optional[int]:
        try:
            text = (ds_dir / "CURRENT").read_text(encoding="utf-8").strip()
            return int(text)
        except (FileNotFoundError, ValueError):
            return None

    def _write_current(self, ds_dir: Path, version: int):
        tmp = ds_dir / f".CURRENT.{uuid.uuid4().hex}.tmp"
        tmp.write_text(str(version), encoding="utf-8")
        os.replace(tmp, ds_dir / "CURRENT")

    def current_version(self, dataset: str, zone) -> int:
        return self._read_current_file(self.manifest_dir(dataset, zone)) or 0

    def manifest(self, dataset: str, zone, version: int) -> DatasetManifest:
        path = self.manifest_dir(dataset, zone) / f"v{version}.json"
        try:
            return DatasetManifest.model_validate_json(path.read_bytes())
        except FileNotFoundError:
            raise UnknownVersion(f"{zone}/{dataset} 不存在版本 {version}")

    def current_manifest(self, dataset: str, zone) -> Optional[DatasetManifest]:
        version = self.current_version(dataset, zone)
        if version == 0:
            return None
        return self.manifest(dataset, zone, version)

    def commit_manifest(self, dataset: str, zone, new_files: Iterable[ObjectRef],
                        schema_hint: Optional[SchemaDescriptor] = None) -> DatasetManifest:
        """全有或全无的追加提交；并发读者只会看到旧版本或新版本"""
        zone = parse_zone(zone)
        new_files = list(new_files)
        ds_dir = self.manifest_dir(dataset, zone)
        ds_dir.mkdir(parents=True, exist_ok=True)

        start_time = time.time()
        with self._dataset_lock(dataset, zone), FileLock(str(ds_dir / ".lock")):
            try:
                for attempt in Retrying(
                    stop=stop_after_attempt(self.commit_retries),
                    wait=wait_random(0, 0.01),
                    retry=retry_if_exception_type(_VersionTaken),
                    reraise=True,
                ):
                    with attempt:
                        manifest = self._try_commit(ds_dir, dataset, zone, new_files, schema_hint)
            except _VersionTaken:
                raise CommitConflict(f"{zone.value}/{dataset} 提交冲突，重试 {self.commit_retries} 次后放弃")

        duration = time.time() - start_time
        prometheus_metrics.record_commit(zone.value, dataset, duration)
        logger.info("manifest_committed", zone=zone.value, dataset=dataset,
                    version=manifest.version, new_files=len(new_files), total_files=len(manifest.files))
        return manifest

    def _try_commit(self, ds_dir: Path, dataset: str, zone: Zone,
                    new_files: List[ObjectRef], schema_hint: Optional[SchemaDescriptor]) -> DatasetManifest:
        previous = self.current_manifest(dataset, zone)
        referenced = {ref.key for ref in previous.files} if previous else set()

        seen = set()
        for ref in new_files:
            if ref.key.zone != zone or ref.key.dataset != dataset:
                raise InvalidKey(f"对象 {ref.key.relative_path} 不属于 {zone.value}/{dataset}")
            if ref.key in referenced or ref.key in seen:
                raise DuplicateObject(f"对象已被引用: {ref.key.relative_path}")
            seen.add(ref.key)
            self._verify_exists(ref)

        version = (previous.version if previous else 0) + 1
        files = (list(previous.files) if previous else []) + new_files
        files.sort(key=lambda r: r.key.sort_key())
        manifest = DatasetManifest(
            dataset=dataset,
            zone=zone,
            version=version,
            files=files,
            committed_at=utc_now(),
            schema_hint=schema_hint or (previous.schema_hint if previous else None),
            hash_algo=HASH_ALGO,
        )

        target = ds_dir / f"v{version}.json"
        tmp = ds_dir / f".v{version}.{uuid.uuid4().hex}.tmp"
        try:
            tmp.write_text(manifest.model_dump_json(indent=2), encoding="utf-8")
            try:
                os.link(tmp, target)
            except FileExistsError:
                prometheus_metrics.commit_conflicts_total.inc()
                self._resync_current(ds_dir)
                raise _VersionTaken(str(target))
            self._write_current(ds_dir, version)
        except OSError as e:
            raise IoError(f"写入清单失败: {e}") from e
        finally:
            tmp.unlink(missing_ok=True)
        return manifest

    def _resync_current(self, ds_dir: Path):
        """版本号被占用：把 CURRENT 前移到最新可解析的清单，下一次尝试从那里继续"""
        latest = self._latest_parseable(ds_dir)
        if latest > (self._read_current_file(ds_dir) or 0):
            self._write_current(ds_dir, latest)
            logger.warning("manifest_pointer_resynced", path=str(ds_dir), version=latest)

    def _verify_exists(self, ref: ObjectRef):
        path = self.object_path(ref.key)
        if not path.is_file():
            raise DanglingRef(f"引用的对象不存在: {ref.key.relative_path}")
        data = path.read_bytes()
        if len(data) != ref.size_bytes or content_hash(data) != ref.content_hash:
            raise CorruptObject(f"引用的对象与引用不符: {ref.key.relative_path}")

    def list_objects(self, dataset: str, zone, at_version: Optional[int] = None) -> List[ObjectRef]:
        if at_version is None:
            manifest = self.current_manifest(dataset, zone)
            if manifest is None:
                return []
        else:
            manifest = self.manifest(dataset, zone, at_version)
        return sorted(manifest.files, key=lambda r: r.key.sort_key())

    def list_datasets(self) -> List[Tuple[Zone, str]]:
        found = []
        for zone_dir in self._iter_dirs(self.manifests_dir):
            for ds_dir in self._iter_dirs(zone_dir):
                if self._read_current_file(ds_dir):
                    found.append((Zone(zone_dir.name), ds_dir.name))
        return found

    def verify_dataset(self, dataset: str, zone) -> List[str]:
        """重新校验最新版本的全部对象，返回问题列表"""
        problems = []
        for ref in self.list_objects(dataset, zone):
            try:
                self.read_object(ref)
            except (MissingObject, CorruptObject, IoError) as e:
                problems.append(f"{ref.key.relative_path}: {e.message}")
        return problems


def open_store(lake_root, commit_retries: Optional[int] = None) -> LakeStore:
    """打开数据湖根目录下的存储（先执行崩溃恢复）"""
    return LakeStore(lake_root, commit_retries)
