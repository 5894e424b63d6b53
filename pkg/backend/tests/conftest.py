import os
import sys

import orjson
import pytest

backend_dir = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
if backend_dir not in sys.path:
    sys.path.insert(0, backend_dir)

from app.core.config import settings  # noqa: E402
from app.managers.lake_manager import lake_manager  # noqa: E402
from app.managers.logger_manager import logger_manager  # noqa: E402
from app.models.schemas import DatasetDescriptor, ObjectKey  # noqa: E402
from app.models.shared import DatasetFormat, Zone  # noqa: E402

# 三条真实格式的推文样例（每条一行）
SAMPLE_TWEETS = [
    b'{"tweet_id":1109349236406140929,"created_unixtime":1553324443328,"created_time":"Sat Mar 23 07:00:43 '
    b'+0000 2019","lang":"en","location":"","displayname":"StunningCamer","time_zone":"","msg":"TechnaFit '
    b'Stainless 4 Brake Lines Blue for 200816 Mitsubishi EVO 10 LANCER https://tco/li30a9qfhI"}',
    b'{"tweet_id":1109349239480561666,"created_unixtime":1553324444061,"created_time":"Sat Mar 23 07:00:44 '
    b'+0000 2019","lang":"en","location":"Brooklyn","displayname":"getraddielater","time_zone":"","msg":"RT '
    b'nytimes General Motors said that it would begin producing a new electric vehicle as part of its '
    b'Chevrolet lineup https://tco/Jqia2PMrN8"}',
    b'{"tweet_id":1109349241112195082,"created_unixtime":1553324444450,"created_time":"Sat Mar 23 07:00:44 '
    b'+0000 2019","lang":"en","location":"","displayname":"StunningCamer","time_zone":"","msg":"TechnaFit '
    b'Stainless 4 Brake Lines Kit Clear for 200209 Audi A4 QUATTRO ALL https://tco/x4QILSKq9F"}',
]


@pytest.fixture(autouse=True)
def isolated_settings(tmp_path, monkeypatch):
    """日志写到临时目录；测试结束关闭文件句柄"""
    monkeypatch.setattr(settings, "log_dir", str(tmp_path / "logs"))
    monkeypatch.setattr(settings, "lake_root", None)
    monkeypatch.setattr(settings, "strict_mode", False)
    yield
    logger_manager.shutdown()


@pytest.fixture
def lake(tmp_path):
    return lake_manager.init_lake(tmp_path / "lake")


@pytest.fixture
def store(lake):
    return lake.store


@pytest.fixture
def catalog(lake):
    return lake.catalog


def commit_lines(store, catalog, name, lines, zone=Zone.RAW, fmt=DatasetFormat.JSONL,
                 partition="p0", filename=None):
    """把若干行作为一个文件提交到数据集（必要时先登记）"""
    catalog.ensure_dataset(DatasetDescriptor(name=name, zone=zone, format=fmt, source="test"))
    if filename is None:
        version = store.current_version(name, zone)
        filename = f"part-{version:05d}.{fmt.value}"
    payload = b"".join((line if isinstance(line, bytes) else line.encode("utf-8")) + b"\n" for line in lines)
    key = ObjectKey(zone=zone, dataset=name, partition=partition, filename=filename)
    ref = store.put_object(key, payload, len(lines))
    return store.commit_manifest(name, zone, [ref])


def commit_records(store, catalog, name, records, zone=Zone.RAW):
    return commit_lines(store, catalog, name, [orjson.dumps(r) for r in records], zone=zone)


def commit_csv(store, catalog, name, header, rows, zone=Zone.RAW):
    lines = [",".join(header)] + [",".join(str(v) for v in row) for row in rows]
    return commit_lines(store, catalog, name, lines, zone=zone, fmt=DatasetFormat.CSV)
