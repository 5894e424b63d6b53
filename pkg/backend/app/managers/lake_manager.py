"""
数据湖管理器
负责初始化目录布局、打开已有数据湖（存储 + 目录 + 配置）
"""
from pathlib import Path
from typing import Optional

import structlog

from app.core.config import LakeConfig, settings
from app.core.exceptions import ForeignDirectory, NotALake
from app.managers.logger_manager import logger_manager
from app.services.catalog import CATALOG_FILE, Catalog
from app.services.flow.provenance import PROVENANCE_DIR
from app.services.lake_store import LakeStore, open_store

logger = structlog.get_logger(__name__)

LAYOUT_DIRS = ("zones", "manifests", PROVENANCE_DIR)
METRICS_FILE = "metrics.prom"


class Lake:
    """一个已打开的数据湖"""

    def __init__(self, config: LakeConfig, store: LakeStore, catalog: Catalog):
        self.config = config
        self.store = store
        self.catalog = catalog

    @property
    def root(self) -> Path:
        return Path(self.config.lake_root)

    @property
    def metrics_path(self) -> Path:
        return self.root / METRICS_FILE


class LakeManager:
    """数据湖管理器"""

    def resolve_root(self, lake: Optional[str] = None) -> Path:
        """命令行参数优先，其次 LAKE_ROOT 环境变量"""
        root = lake or settings.lake_root
        if not root:
            raise NotALake("未指定数据湖：使用 --lake 或设置 LAKE_ROOT")
        return Path(root).expanduser().resolve()

    @staticmethod
    def is_lake(root: Path) -> bool:
        return LakeConfig.path_for(root).is_file()

    def init_lake(self, root, default_seed: Optional[int] = None, strict_mode: Optional[bool] = None) -> Lake:
        """幂等：已是数据湖时不做修改；非空的非数据湖目录拒绝初始化"""
        root = Path(root)
        if self.is_lake(root):
            logger.info("lake_already_initialized", root=str(root))
            return self.open_lake(root)
        if root.exists() and (not root.is_dir() or any(root.iterdir())):
            raise ForeignDirectory(f"目录非空且不是数据湖: {root}")

        root.mkdir(parents=True, exist_ok=True)
        for name in LAYOUT_DIRS:
            (root / name).mkdir(exist_ok=True)
        Catalog.initialize(root)
        config = LakeConfig(
            lake_root=str(root),
            default_seed=settings.default_seed if default_seed is None else default_seed,
            strict_mode=settings.strict_mode if strict_mode is None else strict_mode,
        )
        config.save()
        logger_manager.log_system_event("lake_initialized", f"数据湖已初始化: {root}", {
            "root": str(root), "default_seed": config.default_seed, "strict_mode": config.strict_mode,
        })
        return self.open_lake(root)

    def open_lake(self, root) -> Lake:
        root = Path(root)
        if not self.is_lake(root):
            raise NotALake(f"不是数据湖（缺少 {LakeConfig.path_for(root).name}）: {root}")
        config = LakeConfig.load(root)
        # 配置随目录移动时以实际路径为准
        config = config.model_copy(update={"lake_root": str(root)})
        if not (root / CATALOG_FILE).exists():
            Catalog.initialize(root)
        store = open_store(root)
        return Lake(config, store, Catalog(root))


# 创建全局数据湖管理器实例
lake_manager = LakeManager()
