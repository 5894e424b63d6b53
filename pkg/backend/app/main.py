import os
import sys
from typing import Optional

current_dir = os.path.dirname(os.path.abspath(__file__))
backend_dir = os.path.dirname(current_dir)
if backend_dir not in sys.path:
    sys.path.insert(0, backend_dir)

import typer

from app.cli import admin, demo, governance, ingest, report
from app.cli.common import CliState
from app.core.config import settings
from app.managers.logger_manager import logger_manager

cli = typer.Typer(
    name="lake",
    help=f"{settings.app_name}：批量与流式摄取、读时模式与品牌分析的本地数据湖",
    no_args_is_help=True,
    add_completion=False,
)


@cli.callback()
def main(
    ctx: typer.Context,
    lake: Optional[str] = typer.Option(None, "--lake", envvar="LAKE_ROOT", help="数据湖根目录"),
    log_level: str = typer.Option(settings.log_level, "--log-level", help="DEBUG | INFO | WARNING | ERROR"),
):
    logger_manager.setup(settings.log_dir, log_level)
    ctx.obj = CliState(lake)


cli.command("init")(admin.init_cmd)
cli.command("import")(ingest.import_cmd)
cli.command("lineage")(governance.lineage_cmd)
cli.command("provenance")(governance.provenance_cmd)
cli.command("demo")(demo.demo_cmd)
cli.command("metrics")(admin.metrics_cmd)
cli.command("verify")(admin.verify_cmd)

cli.add_typer(ingest.flow_app, name="flow")
cli.add_typer(governance.schema_app, name="schema")
cli.add_typer(report.report_app, name="report")
cli.add_typer(admin.datasets_app, name="datasets")


if __name__ == "__main__":
    cli()
