"""
运行标识
按时间排序的小写标识，可直接用作分区段与文件名
"""
import itertools
import threading
from datetime import datetime, timezone

_counter = itertools.count()
_guard = threading.Lock()


def timestamp_id(prefix: str) -> str:
    """形如 run-20190323070043328000-0001，同一进程内唯一且按时间有序"""
    with _guard:
        seq = next(_counter) % 10000
        stamp = datetime.now(timezone.utc).strftime("%Y%m%d%H%M%S%f")
    return f"{prefix}-{stamp}-{seq:04d}"
