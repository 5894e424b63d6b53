"""
报表命令：top-brands（销量 vs 推文提及） / sentiment（品牌情感）
"""
from typing import Optional

import typer

from app.cli.common import OutputFormat, bar_chart, emit_ascii, emit_records, lake_command, require_dataset, state
from app.managers.lake_manager import Lake
from app.services.query_engine import (
    bestselling_brands, brand_mentions, materialize, report_frame, sales_vs_mentions,
)
from app.services.text_analytics import brand_sentiment, load_brand_lexicon, load_sentiment_lexicon

report_app = typer.Typer(help="分析报表")

REPORT_COLUMNS = ["brand", "sales_rank", "sales_metric", "mentions"]


def top_brands_rows(lake: Lake, sales: str, product: str, tweets: str, k: int):
    for ref in (sales, product, tweets):
        require_dataset(lake, ref)
    ranks = bestselling_brands(lake.store, sales, product, k)
    mentions = brand_mentions(lake.store, tweets, load_brand_lexicon())
    return sales_vs_mentions(ranks, mentions)


def emit_top_brands(rows, out: OutputFormat):
    if out == OutputFormat.ASCII:
        emit_ascii([
            bar_chart("sales (sum of quantity)", {r.brand: r.sales_metric for r in rows}),
            bar_chart("tweet mentions", {r.brand: r.mentions for r in rows}),
        ])
    else:
        emit_records([r.model_dump() for r in rows], REPORT_COLUMNS, out, title="top brands")


@report_app.command("top-brands")
@lake_command
def top_brands(
    ctx: typer.Context,
    sales: str = typer.Option("raw/sales", "--sales"),
    product: str = typer.Option("raw/product", "--products", "--product"),
    tweets: str = typer.Option("raw/tweets", "--tweets"),
    k: int = typer.Option(10, "--k", min=1, help="取销量前 k 个品牌"),
    out: OutputFormat = typer.Option(OutputFormat.ASCII, "--out", help="ascii | table | csv | json"),
    save: Optional[str] = typer.Option(None, "--save", help="把报表暂存为 curated/<name>"),
):
    """畅销品牌排名与推文提及次数对比"""
    lake = state(ctx).open()
    rows = top_brands_rows(lake, sales, product, tweets, k)
    emit_top_brands(rows, out)
    if save:
        job_id, version = materialize(lake.store, lake.catalog, report_frame(rows), save,
                                      inputs=[sales, product, tweets])
        typer.echo(f"saved curated/{save} version {version} ({job_id})", err=True)


@report_app.command("sentiment")
@lake_command
def sentiment(
    ctx: typer.Context,
    tweets: str = typer.Option("raw/tweets", "--tweets"),
    out: OutputFormat = typer.Option(OutputFormat.TABLE, "--out", help="table | csv | json"),
):
    """每个品牌的推文数与平均情感分"""
    lake = state(ctx).open()
    require_dataset(lake, tweets)
    brand_lex = load_brand_lexicon()
    result = brand_sentiment(lake.store, tweets, brand_lex, load_sentiment_lexicon())
    records = [
        {"brand": brand, "tweets": s.tweets,
         "mean_score": None if s.mean_score is None else round(s.mean_score, 4)}
        for brand, s in result.items()
    ]
    if out == OutputFormat.ASCII:
        out = OutputFormat.TABLE
    emit_records(records, ["brand", "tweets", "mean_score"], out, title="brand sentiment")
