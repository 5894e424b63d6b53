"""
日志记录管理器
记录系统事件、流式摄取事件与性能信息 - 使用结构化日志输出
"""
import logging
import sys
from datetime import datetime
from pathlib import Path
from typing import Dict, Optional

import structlog
from pythonjsonlogger import jsonlogger


class LakeJSONFormatter(jsonlogger.JsonFormatter):
    """JSON 格式化器，统一 timestamp / level 字段"""

    def add_fields(self, log_record, record, message_dict):
        super().add_fields(log_record, record, message_dict)
        if not log_record.get('timestamp'):
            log_record['timestamp'] = datetime.now().isoformat()
        if log_record.get('level'):
            log_record['level'] = log_record['level'].upper()
        else:
            log_record['level'] = record.levelname


def configure_structlog():
    """structlog 统一交给标准库 logging 输出，不直接写标准输出"""
    structlog.configure(
        processors=[
            structlog.stdlib.filter_by_level,
            structlog.stdlib.add_logger_name,
            structlog.stdlib.add_log_level,
            structlog.processors.TimeStamper(fmt="iso"),
            structlog.processors.JSONRenderer(),
        ],
        context_class=dict,
        logger_factory=structlog.stdlib.LoggerFactory(),
        wrapper_class=structlog.stdlib.BoundLogger,
        cache_logger_on_first_use=False,
    )


class LoggerManager:
    # 各关注点对应的日志文件
    CHANNELS = {
        "system": "system.log",
        "flow": "flow.log",
        "performance": "performance.log",
    }

    def __init__(self):
        self.log_dir: Optional[Path] = None
        self._configured = False

        self.logger = structlog.get_logger()
        self.system_logger = structlog.get_logger("system")
        self.flow_logger = structlog.get_logger("flow")
        self.performance_logger = structlog.get_logger("performance")

    def setup(self, log_dir: str = "logs", level: str = "INFO", console: bool = True):
        """设置结构化日志配置（由命令行入口调用，导入模块本身不产生文件）"""
        self.log_dir = Path(log_dir)
        self.log_dir.mkdir(parents=True, exist_ok=True)
        numeric_level = getattr(logging, level.upper(), logging.INFO)

        json_formatter = LakeJSONFormatter(
            '%(timestamp)s %(levelname)s %(name)s %(message)s',
            rename_fields={'levelname': 'level', 'name': 'logger'}
        )

        root_logger = logging.getLogger()
        root_logger.handlers.clear()
        root_logger.setLevel(numeric_level)

        # 控制台只输出 WARNING 及以上，写到标准错误；标准输出留给命令结果
        if console:
            console_handler = logging.StreamHandler(sys.stderr)
            console_handler.setFormatter(json_formatter)
            console_handler.setLevel(logging.WARNING)
            root_logger.addHandler(console_handler)

        # 模块日志（app.*）写入 lake.log
        module_handler = logging.FileHandler(self.log_dir / "lake.log", encoding='utf-8')
        module_handler.setFormatter(json_formatter)
        module_handler.setLevel(numeric_level)
        root_logger.addHandler(module_handler)

        for channel, filename in self.CHANNELS.items():
            handler = logging.FileHandler(self.log_dir / filename, encoding='utf-8')
            handler.setFormatter(json_formatter)
            handler.setLevel(numeric_level)
            channel_logger = logging.getLogger(channel)
            channel_logger.handlers.clear()
            channel_logger.addHandler(handler)
            channel_logger.setLevel(numeric_level)
            channel_logger.propagate = False  # 防止重复写入 lake.log

        configure_structlog()
        self._configured = True

    def shutdown(self):
        """关闭文件句柄（测试中重复初始化时使用）"""
        for name in [None, *self.CHANNELS]:
            lg = logging.getLogger(name)
            for handler in list(lg.handlers):
                handler.close()
                lg.removeHandler(handler)
        self._configured = False

    def log_system_event(self, event_type: str, message: str, details: Optional[Dict] = None):
        """记录系统事件"""
        try:
            self.system_logger.info(
                "system_event",
                event_type=event_type,
                message=message,
                details=details or {},
            )
        except Exception as e:
            print(f"记录系统事件失败: {e}", file=sys.stderr)

    def log_flow_event(self, event_type: str, run_id: str, details: Optional[Dict] = None):
        """记录流式摄取事件"""
        try:
            self.flow_logger.info(
                "flow_event",
                event_type=event_type,
                run_id=run_id,
                details=details or {},
            )
        except Exception as e:
            print(f"记录流事件失败: {e}", file=sys.stderr)

    def log_error(self, error_type: str, error_message: str, context: Optional[Dict] = None):
        """记录错误"""
        try:
            self.system_logger.error(
                "system_error",
                error_type=error_type,
                error_message=error_message,
                context=context or {},
            )
        except Exception as e:
            print(f"记录错误日志失败: {e}", file=sys.stderr)

    def log_performance(self, operation: str, duration: float, details: Optional[Dict] = None):
        """记录性能信息"""
        try:
            log_data = {
                "operation": operation,
                "duration": duration,
                "duration_ms": duration * 1000,
                "details": details or {},
            }
            # 超过5秒的慢操作
            if duration > 5.0:
                self.performance_logger.warning("slow_operation", **log_data)
            else:
                self.performance_logger.info("performance_metric", **log_data)
        except Exception as e:
            print(f"记录性能日志失败: {e}", file=sys.stderr)


configure_structlog()

# 全局日志管理器实例
logger_manager = LoggerManager()
