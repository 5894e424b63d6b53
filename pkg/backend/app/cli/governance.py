"""
治理命令：lineage / provenance / schema infer
"""
from typing import Optional

import typer

from app.cli.common import OutputFormat, emit_records, lake_command, require_dataset, state
from app.models.shared import ReadMode
from app.services.flow.provenance import provenance_query
from app.services.schema_read import infer_schema

schema_app = typer.Typer(help="读时模式")


@lake_command
def lineage_cmd(
    ctx: typer.Context,
    node: str = typer.Argument(..., help="节点，例如 dataset:raw/sales 或 raw/sales"),
    out: OutputFormat = typer.Option(OutputFormat.TABLE, "--out", help="table | csv | json"),
):
    """追溯某个节点的全部上游边，按拓扑序输出"""
    lake = state(ctx).open()
    if ":" not in node:
        node = f"dataset:{node}"
    edges = lake.catalog.lineage_of(node)
    records = [
        {"from": e.from_node, "to": e.to_node, "job_kind": e.job_kind.value, "at": e.at.isoformat()}
        for e in edges
    ]
    emit_records(records, ["from", "to", "job_kind", "at"], out, title=f"lineage of {node}")


@lake_command
def provenance_cmd(
    ctx: typer.Context,
    record_uuid: str = typer.Argument(..., metavar="UUID", help="记录 uuid"),
    out: OutputFormat = typer.Option(OutputFormat.TABLE, "--out", help="table | csv | json"),
):
    """某条流记录的溯源事件，CREATE 在前"""
    lake = state(ctx).open()
    events = provenance_query(lake.root, record_uuid)
    records = [
        {"run_id": e.run_id, "processor": e.processor_name, "kind": e.kind.value,
         "at": e.at.isoformat(), "detail": e.detail}
        for e in events
    ]
    emit_records(records, ["run_id", "processor", "kind", "at", "detail"], out, title=record_uuid)


@schema_app.command("infer")
@lake_command
def schema_infer(
    ctx: typer.Context,
    dataset: str = typer.Option(..., "--dataset", help="<zone>/<name>"),
    sample: Optional[int] = typer.Option(None, "--sample", min=1, help="只读取前 N 条记录"),
    strict: Optional[bool] = typer.Option(None, "--strict/--lenient", help="缺省取数据湖配置"),
    out: OutputFormat = typer.Option(OutputFormat.JSON, "--out", help="json | table | csv"),
):
    """推断数据集模式（字段按首次出现顺序）"""
    lake = state(ctx).open()
    require_dataset(lake, dataset)
    strict = lake.config.strict_mode if strict is None else strict
    schema = infer_schema(lake.store, dataset, sample_rows=sample,
                          mode=ReadMode.STRICT if strict else ReadMode.LENIENT)
    records = [{"name": f.name, "dtype": f.dtype.value, "nullable": f.nullable} for f in schema.fields]
    emit_records(records, ["name", "dtype", "nullable"], out, title=dataset)
