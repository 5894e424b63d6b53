"""
命令行公共部分
上下文状态、错误到退出码的映射、输出格式（table / csv / json / ascii）
"""
import functools
import io
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, Sequence

import click
import orjson
import pandas as pd
import typer
from pydantic import ValidationError
from rich.console import Console
from rich.table import Table

from app.core.exceptions import LakeError
from app.managers.lake_manager import Lake, lake_manager
from app.managers.logger_manager import logger_manager
from app.managers.prometheus_manager import prometheus_metrics
from app.models.schemas import parse_dataset_ref

# 参数或输入校验失败（与 click 的用法错误一致）
USAGE_EXIT_CODE = 2


class OutputFormat(str, Enum):
    TABLE = "table"
    CSV = "csv"
    JSON = "json"
    ASCII = "ascii"


class CliState:
    def __init__(self, lake: Optional[str] = None):
        self.lake_arg = lake
        self.lake: Optional[Lake] = None

    def open(self) -> Lake:
        if self.lake is None:
            self.lake = lake_manager.open_lake(lake_manager.resolve_root(self.lake_arg))
        return self.lake


def state(ctx: typer.Context) -> CliState:
    obj = ctx.find_root().obj
    if obj is None:
        obj = ctx.find_root().obj = CliState()
    return obj


def open_lake(ctx: typer.Context) -> Lake:
    return state(ctx).open()


def lake_command(func: Callable) -> Callable:
    """统一处理错误：LakeError 映射为各自退出码，消息写标准错误；结束时写出指标文件"""

    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        ctx = kwargs.get("ctx")
        try:
            return func(*args, **kwargs)
        except LakeError as e:
            typer.echo(f"error: {type(e).__name__}: {e.message}", err=True)
            raise typer.Exit(e.exit_code)
        except (ValidationError, ValueError, FileNotFoundError, typer.BadParameter) as e:
            typer.echo(f"error: {type(e).__name__}: {e}", err=True)
            raise typer.Exit(USAGE_EXIT_CODE)
        except (typer.Exit, typer.Abort, click.ClickException, click.exceptions.Abort):
            raise
        except Exception as e:
            logger_manager.log_error(type(e).__name__, str(e), {"command": func.__name__})
            typer.echo(f"error: unexpected {type(e).__name__}: {e}", err=True)
            raise typer.Exit(1)
        finally:
            if ctx is not None:
                lake = state(ctx).lake
                if lake is not None:
                    prometheus_metrics.write_textfile(lake.metrics_path)

    return wrapper


# ==================== 输出 ====================
def emit_records(records: Sequence[Dict[str, Any]], columns: List[str], out: OutputFormat,
                 title: Optional[str] = None):
    """按列顺序输出记录；行顺序由调用方保证确定"""
    if out == OutputFormat.JSON:
        typer.echo(orjson.dumps(list(records), option=orjson.OPT_INDENT_2, default=str).decode())
        return
    if out == OutputFormat.CSV:
        frame = pd.DataFrame(list(records), columns=columns)
        typer.echo(frame.to_csv(index=False, lineterminator="\n"), nl=False)
        return

    table = Table(title=title, show_lines=False)
    for column in columns:
        table.add_column(column)
    for record in records:
        table.add_row(*["" if record.get(c) is None else str(record.get(c)) for c in columns])
    buffer = io.StringIO()
    Console(file=buffer, width=160, color_system=None).print(table)
    typer.echo(buffer.getvalue(), nl=False)


def bar_chart(title: str, values: Dict[str, int], width: int = 40) -> List[str]:
    """单组横向条形图，按输入顺序输出"""
    lines = [title]
    if not values:
        return lines + ["  (empty)"]
    label_width = max(len(k) for k in values)
    peak = max(values.values()) or 1
    for label, value in values.items():
        bar = "#" * round(width * value / peak)
        lines.append(f"  {label.ljust(label_width)} | {bar} {value}")
    return lines


def emit_ascii(charts: Sequence[List[str]]):
    blocks = ["\n".join(chart) for chart in charts]
    typer.echo("\n\n".join(blocks))


def require_dataset(lake: Lake, ref: str):
    """命令参数里的数据集必须已登记"""
    zone, name = parse_dataset_ref(ref)
    return lake.catalog.get_dataset(zone, name)
