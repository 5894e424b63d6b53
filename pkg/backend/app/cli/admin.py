"""
管理命令：init / verify / metrics / datasets ls
"""
from typing import Optional

import typer

from app.cli.common import OutputFormat, emit_records, lake_command, state
from app.managers.lake_manager import lake_manager
from app.managers.logger_manager import logger_manager
from app.managers.prometheus_manager import prometheus_metrics
from app.models.schemas import parse_dataset_ref

datasets_app = typer.Typer(help="数据集目录")


@lake_command
def init_cmd(
    ctx: typer.Context,
    path: Optional[str] = typer.Argument(None, help="数据湖目录，缺省使用 --lake / LAKE_ROOT"),
    seed: Optional[int] = typer.Option(None, "--seed", help="默认随机种子"),
    strict: Optional[bool] = typer.Option(None, "--strict/--lenient", help="默认读取模式"),
):
    """创建数据湖目录布局与空目录；对已有数据湖幂等"""
    root = lake_manager.resolve_root(path or state(ctx).lake_arg)
    existed = lake_manager.is_lake(root)
    lake = lake_manager.init_lake(root, default_seed=seed, strict_mode=strict)
    state(ctx).lake = lake
    if existed:
        typer.echo(f"already a lake: {root}")
    else:
        typer.echo(f"initialized lake: {root}")


@lake_command
def verify_cmd(
    ctx: typer.Context,
    dataset: Optional[str] = typer.Option(None, "--dataset", help="<zone>/<name>，缺省校验全部"),
):
    """重新计算最新版本每个对象的内容哈希"""
    lake = state(ctx).open()
    if dataset:
        targets = [parse_dataset_ref(dataset)]
    else:
        targets = sorted(lake.store.list_datasets(), key=lambda t: (t[0].value, t[1]))

    problems = []
    for zone, name in targets:
        found = lake.store.verify_dataset(name, zone)
        problems.extend(found)
        status = "ok" if not found else f"{len(found)} problem(s)"
        typer.echo(f"{zone.value}/{name}: {status}")
    for problem in problems:
        typer.echo(problem, err=True)
    if problems:
        logger_manager.log_error("verify_failed", f"{len(problems)} problem(s)", {"dataset": dataset})
        raise typer.Exit(1)


@lake_command
def metrics_cmd(ctx: typer.Context):
    """输出上一次命令写出的 Prometheus 指标"""
    lake = state(ctx).open()
    if lake.metrics_path.exists():
        typer.echo(lake.metrics_path.read_text(encoding="utf-8"), nl=False)
    else:
        typer.echo(prometheus_metrics.get_metrics().decode("utf-8"), nl=False)


@datasets_app.command("ls")
@lake_command
def datasets_ls(
    ctx: typer.Context,
    out: OutputFormat = typer.Option(OutputFormat.TABLE, "--out", help="table | csv | json"),
):
    """列出已登记的数据集，按 (zone, name) 排序"""
    lake = state(ctx).open()
    records = []
    for desc in lake.catalog.list_datasets():
        refs = lake.store.list_objects(desc.name, desc.zone)
        records.append({
            "zone": desc.zone.value,
            "name": desc.name,
            "format": desc.format.value,
            "version": lake.store.current_version(desc.name, desc.zone),
            "files": len(refs),
            "bytes": sum(r.size_bytes for r in refs),
            "source": desc.source,
        })
    emit_records(records, ["zone", "name", "format", "version", "files", "bytes", "source"], out,
                 title="datasets")
