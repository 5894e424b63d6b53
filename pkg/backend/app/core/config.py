import os
from pathlib import Path
from typing import Optional

from dotenv import load_dotenv
from pydantic import BaseModel, Field

load_dotenv()

# 仓库根目录：backend/app/core/config.py -> parents[3]
REPO_ROOT = Path(__file__).resolve().parents[3]


def _env_bool(name: str, default: str = "false") -> bool:
    return os.getenv(name, default).strip().lower() in ("1", "true", "yes", "on")


class Settings(BaseModel):
    """进程级配置（环境变量 / .env）"""
    app_name: str = "lakelet"
    app_version: str = "1.0.0"

    # 湖根目录（命令行 --lake 优先）
    lake_root: Optional[str] = os.getenv("LAKE_ROOT")
    default_seed: int = int(os.getenv("LAKE_DEFAULT_SEED", "42"))
    strict_mode: bool = _env_bool("LAKE_STRICT")

    # 日志配置
    log_dir: str = os.getenv("LAKE_LOG_DIR", "logs")
    log_level: str = os.getenv("LAKE_LOG_LEVEL", "INFO")

    # 词典目录
    lexicon_dir: str = os.getenv("LAKE_LEXICON_DIR", str(REPO_ROOT / "lexicons"))

    # 提交与导入
    commit_retries: int = int(os.getenv("LAKE_COMMIT_RETRIES", "5"))
    import_workers: int = int(os.getenv("LAKE_IMPORT_WORKERS", "8"))


class LakeConfig(BaseModel):
    """单个数据湖的配置，持久化在 <lake_root>/lake.json"""
    lake_root: str
    default_seed: int = 42
    strict_mode: bool = False
    format_version: int = Field(default=1, ge=1)

    @classmethod
    def path_for(cls, lake_root: Path) -> Path:
        return Path(lake_root) / "lake.json"

    def save(self) -> Path:
        """先写临时文件再原子重命名"""
        path = self.path_for(Path(self.lake_root))
        tmp = path.with_name(f".{path.name}.tmp")
        tmp.write_text(self.model_dump_json(indent=2), encoding="utf-8")
        os.replace(tmp, path)
        return path

    @classmethod
    def load(cls, lake_root: Path) -> "LakeConfig":
        path = cls.path_for(Path(lake_root))
        return cls.model_validate_json(path.read_text(encoding="utf-8"))


# 创建全局配置实例
settings = Settings()
