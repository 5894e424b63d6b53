import functools
import random

import pytest

from conftest import commit_csv, commit_records

from app.core.exceptions import InvalidReportInput, PlanError
from app.models.plan import (
    Agg, And, Compare, Const, Filter, GroupAgg, HashJoin, Limit, Not, Or, Project, Scan, Sort, SortKey,
)
from app.models.schemas import BrandRank, RankedBrands, dataset_node
from app.models.shared import JobKind, Zone
from app.services.query_engine import (
    bestselling_brands, brand_mentions, execute, materialize, report_frame, sales_vs_mentions,
)
from app.services.text_analytics import BrandLexicon

LEFT = ["id", "k", "s", "v"]
RIGHT = ["k", "name"]


# ==================== 朴素求值器 ====================
def _naive_pred(pred, row):
    if isinstance(pred, Const):
        return pred.value
    if isinstance(pred, Compare):
        value = row[pred.column]
        if pred.value is None:
            return (value is None) == (pred.op == "==")
        if value is None:
            return False
        return {
            "==": value == pred.value, "!=": value != pred.value,
            "<": value < pred.value, "<=": value <= pred.value,
            ">": value > pred.value, ">=": value >= pred.value,
        }[pred.op]
    if isinstance(pred, And):
        return all(_naive_pred(p, row) for p in pred.operands)
    if isinstance(pred, Or):
        return any(_naive_pred(p, row) for p in pred.operands)
    return not _naive_pred(pred.operand, row)


def _compare_rows(a, b, keys):
    for key in keys:
        x, y = a[key.column], b[key.column]
        if x == y:
            continue
        if x is None:
            return 1
        if y is None:
            return -1
        result = -1 if x < y else 1
        return -result if key.descending else result
    return 0


def naive(plan, tables):
    if isinstance(plan, Scan):
        return [dict(r) for r in tables[plan.dataset]]
    if isinstance(plan, Filter):
        return [r for r in naive(plan.child, tables) if _naive_pred(plan.predicate, r)]
    if isinstance(plan, Project):
        return [{c: r[c] for c in plan.columns} for r in naive(plan.child, tables)]
    if isinstance(plan, HashJoin):
        out = []
        for left in naive(plan.left, tables):
            for right in naive(plan.right, tables):
                if left[plan.left_key] is not None and left[plan.left_key] == right[plan.right_key]:
                    merged = dict(left)
                    for name, value in right.items():
                        while name in merged:
                            name = f"{name}_right"
                        merged[name] = value
                    out.append(merged)
        return out
    if isinstance(plan, GroupAgg):
        groups = {}
        for row in naive(plan.child, tables):
            groups.setdefault(tuple(row[k] for k in plan.keys), []).append(row)
        if not plan.keys and not groups:
            groups[()] = []
        out = []
        for key, rows in groups.items():
            result = dict(zip(plan.keys, key))
            for agg in plan.aggs:
                if agg.func == "count":
                    result[agg.output_name] = sum(
                        1 for r in rows if agg.column is None or r[agg.column] is not None)
                else:
                    result[agg.output_name] = sum(r[agg.column] for r in rows if r[agg.column] is not None)
            out.append(result)
        return out
    if isinstance(plan, Sort):
        rows = naive(plan.child, tables)
        return sorted(rows, key=functools.cmp_to_key(lambda a, b: _compare_rows(a, b, plan.keys)))
    if isinstance(plan, Limit):
        return naive(plan.child, tables)[:plan.k]
    raise AssertionError(plan)


# ==================== 随机计划 ====================
def _maybe_null(rng, value, p=0.15):
    return None if rng.random() < p else value


def _tables(rng):
    left = [
        {"id": i, "k": _maybe_null(rng, rng.randint(0, 5)), "s": _maybe_null(rng, rng.choice("abcd")),
         "v": _maybe_null(rng, rng.randint(-20, 50))}
        for i in range(rng.randint(30, 60))
    ]
    left[0].update(k=1, s="a", v=3)
    right = [{"k": _maybe_null(rng, rng.randint(0, 5), 0.1), "name": rng.choice(["x", "y", "z"])}
             for _ in range(rng.randint(5, 12))]
    right[0].update(k=1)
    return {"raw/left": left, "raw/right": right}


def _predicate(rng, depth=0):
    roll = rng.random()
    if depth < 2 and roll < 0.3:
        cls = rng.choice([And, Or])
        return cls(operands=[_predicate(rng, depth + 1) for _ in range(rng.randint(1, 3))])
    if depth < 2 and roll < 0.4:
        return Not(operand=_predicate(rng, depth + 1))
    if roll < 0.45:
        return Const(value=rng.random() < 0.5)
    column = rng.choice(["k", "v", "s"])
    if rng.random() < 0.1:
        return Compare(column=column, op=rng.choice(["==", "!="]), value=None)
    if column == "s":
        return Compare(column="s", op=rng.choice(["==", "!=", "<", ">="]), value=rng.choice("abcd"))
    return Compare(column=column, op=rng.choice(["==", "!=", "<", "<=", ">", ">="]), value=rng.randint(-5, 10))


def _plan(rng):
    node = Scan(dataset="raw/left")
    if rng.random() < 0.7:
        node = Filter(child=node, predicate=_predicate(rng))
    columns = list(LEFT)
    if rng.random() < 0.5:
        node = HashJoin(left=node, right=Scan(dataset="raw/right"), left_key="k", right_key="k")
        columns += ["k_right", "name"]
    if rng.random() < 0.6:
        keys = rng.sample(["k", "s"], rng.randint(0, 2))
        node = GroupAgg(child=node, keys=keys,
                        aggs=[Agg(func="sum", column="v", alias="total"), Agg(func="count"),
                              Agg(func="count", column="s", alias="named")])
        columns = keys + ["total", "count", "named"]
    elif rng.random() < 0.5:
        columns = rng.sample(columns, rng.randint(1, len(columns)))
        node = Project(child=node, columns=columns)
    if rng.random() < 0.7:
        keys = [SortKey(column=c, descending=rng.random() < 0.5)
                for c in rng.sample(columns, rng.randint(1, min(2, len(columns))))]
        node = Sort(child=node, keys=keys)
        if rng.random() < 0.6:
            node = Limit(child=node, k=rng.randint(0, 10))
    return node


@pytest.mark.parametrize("seed", range(34))
def test_random_plans_match_naive_evaluation(store, catalog, seed):
    rng = random.Random(seed)
    tables = _tables(rng)
    commit_records(store, catalog, "left", tables["raw/left"])
    commit_records(store, catalog, "right", tables["raw/right"])
    for _ in range(15):
        plan = _plan(rng)
        assert execute(store, plan) == naive(plan, tables), plan


# ==================== 校验 ====================
@pytest.fixture
def sales_and_product(store, catalog):
    commit_csv(store, catalog, "product", ["product_id", "brand"],
               [(1, "Ford"), (2, "Ford"), (3, "Audi"), (4, "Mazda"), (5, "Benz")])
    commit_csv(store, catalog, "sales", ["sale_id", "product_id", "quantity"],
               [(1, 1, 2), (2, 2, 1), (3, 3, 3), (4, 4, 1), (5, 4, 2), (6, 5, 1), (7, 9, 5)])


@pytest.mark.parametrize("plan", [
    Project(child=Scan(dataset="raw/sales"), columns=["nope"]),
    Project(child=Scan(dataset="raw/sales"), columns=["sale_id", "sale_id"]),
    Filter(child=Scan(dataset="raw/sales"), predicate=Compare(column="quantity", op="==", value="two")),
    Filter(child=Scan(dataset="raw/sales"), predicate=Compare(column="quantity", op="<", value=None)),
    HashJoin(left=Scan(dataset="raw/sales"), right=Scan(dataset="raw/product"),
             left_key="product_id", right_key="brand"),
    GroupAgg(child=Scan(dataset="raw/product"), keys=[], aggs=[Agg(func="sum", column="brand")]),
    Sort(child=Scan(dataset="raw/sales"), keys=[SortKey(column="missing")]),
])
def test_invalid_plans_raise_plan_error(store, sales_and_product, plan):
    with pytest.raises(PlanError):
        execute(store, plan)


def test_scan_of_unregistered_dataset_is_empty(store):
    assert execute(store, Scan(dataset="raw/ghost")) == []


def test_dedup_scan_keeps_first_uuid(store, catalog):
    commit_records(store, catalog, "events", [
        {"_uuid": "a", "n": 1}, {"_uuid": "b", "n": 2}, {"_uuid": "a", "n": 3}, {"n": 4},
    ])
    rows = execute(store, Scan(dataset="raw/events", dedup=True))
    assert [r["n"] for r in rows] == [1, 2, 4]
    assert len(execute(store, Scan(dataset="raw/events"))) == 4


# ==================== 报表 ====================
def test_bestselling_brands_ties_break_by_name(store, sales_and_product):
    ranks = bestselling_brands(store, "raw/sales", "raw/product", k=10)
    # Ford 3, Audi 3, Mazda 3, Benz 1；product_id=9 没有匹配的产品
    assert [(e.rank, e.brand, e.metric) for e in ranks.entries] == [
        (1, "Audi", 3), (2, "Ford", 3), (3, "Mazda", 3), (4, "Benz", 1),
    ]
    assert [e.brand for e in bestselling_brands(store, "raw/sales", "raw/product", k=2).entries] == [
        "Audi", "Ford"]


def test_brand_mentions_count_each_tweet_once(store, catalog):
    commit_records(store, catalog, "tweets", [
        {"_uuid": "1", "msg": "Ford ford FORD!"},
        {"_uuid": "2", "msg": "Ford vs Audi"},
        {"_uuid": "3", "msg": "Fordham is not a brand"},
        {"_uuid": "2", "msg": "Ford vs Audi"},
        {"_uuid": "4", "msg": None},
    ])
    mentions = brand_mentions(store, "raw/tweets", BrandLexicon(brands=["Ford", "Audi", "Dodge"])).as_dict()
    assert mentions == {"Ford": 2, "Audi": 1, "Dodge": 0}


def test_sales_vs_mentions_rows(store):
    sales = RankedBrands(entries=[BrandRank(rank=1, brand="Ford", metric=9),
                                  BrandRank(rank=2, brand="Audi", metric=4)])
    mentions = RankedBrands.from_counts({"Audi": 7, "Dodge": 1})
    rows = sales_vs_mentions(sales, mentions)
    assert [(r.brand, r.sales_rank, r.sales_metric, r.mentions) for r in rows] == [
        ("Ford", 1, 9, 0), ("Audi", 2, 4, 7)]
    with pytest.raises(InvalidReportInput):
        sales_vs_mentions(RankedBrands(), mentions)


def test_materialize_records_query_lineage(store, catalog, sales_and_product):
    commit_records(store, catalog, "tweets", [{"_uuid": "1", "msg": "new Audi"}])
    rows = sales_vs_mentions(bestselling_brands(store, "raw/sales", "raw/product"),
                             brand_mentions(store, "raw/tweets"))
    job_id, version = materialize(store, catalog, report_frame(rows), "top_brands",
                                  inputs=["raw/sales", "raw/product", "raw/tweets"])
    assert version == 1
    saved = execute(store, Scan(dataset="curated/top_brands"))
    assert [r["brand"] for r in saved] == ["Audi", "Ford", "Mazda", "Benz"]
    assert saved[0]["mentions"] == 1

    edges = catalog.lineage_of(dataset_node(Zone.CURATED, "top_brands"))
    query_edges = [e for e in edges if e.job_kind == JobKind.QUERY]
    assert {e.from_node for e in query_edges} >= {
        "dataset:raw/sales", "dataset:raw/product", "dataset:raw/tweets", f"job:{job_id}"}
