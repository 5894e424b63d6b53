"""
摄取命令：import（批量） / flow run（流式）
"""
import asyncio
from pathlib import Path
from typing import List, Optional

import orjson
import typer

from app.cli.common import OutputFormat, emit_records, lake_command, state
from app.managers.lake_manager import Lake
from app.models.schemas import FlowGraphSpec, ImportReport, TableSource
from app.services.batch_import import import_table, import_tables
from app.services.flow.engine import build_graph, run_flow, tweet_ingest_spec

flow_app = typer.Typer(help="流式摄取")

IMPORT_COLUMNS = ["dataset", "rows_imported", "splits_used", "files_written", "manifest_version",
                  "skipped_lines", "split_fallback_warnings", "already_imported_warning", "noop"]
FLOW_COLUMNS = ["run_id", "records_in", "records_out", "records_dropped", "files_committed",
                "quarantined", "max_queue_depth"]


def _emit_import(reports: List[ImportReport], out: OutputFormat):
    for report in reports:
        if report.already_imported_warning:
            typer.echo(f"warning: {report.source_node} was already imported into {report.dataset}", err=True)
        if report.split_fallback_warnings:
            typer.echo(f"warning: {report.dataset} split column is not numeric, imported as one split", err=True)
    emit_records([r.model_dump() for r in reports], IMPORT_COLUMNS, out, title="import")


@lake_command
def import_cmd(
    ctx: typer.Context,
    table: Optional[Path] = typer.Option(None, "--table", help="CSV 表文件（带表头）"),
    name: Optional[str] = typer.Option(None, "--name", help="目标数据集名（raw 区），缺省取文件名"),
    split_column: Optional[str] = typer.Option(None, "--split-by", "--split-column", help="数值拆分列"),
    directory: Optional[Path] = typer.Option(None, "--dir", help="导入目录下的五张车辆交易表"),
    splits: int = typer.Option(4, "--splits", min=1, help="并行分片数"),
    strict: Optional[bool] = typer.Option(None, "--strict/--lenient", help="坏行中止 / 跳过"),
    out: OutputFormat = typer.Option(OutputFormat.TABLE, "--out", help="table | csv | json"),
):
    """把关系表按拆分列并行导入原始区，整表一次提交"""
    lake = state(ctx).open()
    strict = lake.config.strict_mode if strict is None else strict
    if (table is None) == (directory is None):
        raise typer.BadParameter("需要且只能指定 --table 或 --dir 之一")

    if directory is not None:
        reports = asyncio.run(import_tables(lake.store, lake.catalog, directory, splits, strict))
    else:
        source = TableSource(path=str(table), table_name=table.stem, split_column=split_column)
        reports = [asyncio.run(import_table(lake.store, lake.catalog, source, name or table.stem, splits, strict))]
    _emit_import(reports, out)


def load_flow_spec(lake: Lake, spec_path: Optional[Path], seed: Optional[int]) -> FlowGraphSpec:
    """读取流图 JSON；--seed 覆盖所有 tweet_source，未给种子时取数据湖默认值"""
    if spec_path is None:
        spec = tweet_ingest_spec(seed if seed is not None else lake.config.default_seed)
    else:
        spec = FlowGraphSpec.model_validate(orjson.loads(spec_path.read_bytes()))
    for proc in spec.processors:
        if proc.kind != "tweet_source":
            continue
        if seed is not None:
            proc.params["seed"] = seed
        elif proc.params.get("seed") is None:
            proc.params["seed"] = lake.config.default_seed
    return spec


@flow_app.command("run")
@lake_command
def flow_run(
    ctx: typer.Context,
    spec_path: Optional[Path] = typer.Option(None, "--spec", help="流图 JSON，缺省为推文摄取图"),
    limit: Optional[int] = typer.Option(None, "--limit", min=0, help="每个 source 最多产生的记录数"),
    duration: Optional[float] = typer.Option(None, "--duration", min=0, help="运行秒数"),
    seed: Optional[int] = typer.Option(None, "--seed", help="覆盖 tweet_source 的种子"),
    out: OutputFormat = typer.Option(OutputFormat.TABLE, "--out", help="table | csv | json"),
):
    """运行流图直到 limit / duration，返回前所有批次已提交"""
    lake = state(ctx).open()
    graph = build_graph(load_flow_spec(lake, spec_path, seed))
    report = asyncio.run(run_flow(graph, lake.store, lake.catalog, record_limit=limit, duration=duration))
    record = report.model_dump()
    record["max_queue_depth"] = max(report.max_queue_depths.values(), default=0)
    if out == OutputFormat.JSON:
        emit_records([report.model_dump()], FLOW_COLUMNS, out)
    else:
        emit_records([record], FLOW_COLUMNS, out, title="flow run")
