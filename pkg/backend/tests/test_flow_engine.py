import asyncio
import random
from pathlib import Path

import orjson
import pytest
from pydantic import ValidationError

from conftest import SAMPLE_TWEETS

from app.core.exceptions import (
    CycleDetected, DanglingPort, FlowFailed, InvalidWeights, UnknownProcessorKind, UnknownRecord,
)
from app.models.plan import Scan
from app.models.schemas import FlowRecord, Tweet, dataset_node
from app.models.shared import EventKind, Zone
from app.services.flow import build_graph, generate_tweets, provenance_query, run_flow, tweet_json
from app.services.flow.engine import tweet_ingest_spec
from app.services.flow.processors import MicroBatchSink, ParseTweet, inject_uuid
from app.services.flow.provenance import persisted_runs
from app.services.flow.tweet_generator import iter_tweets, tweet_uuid, uniform_weights
from app.services.query_engine import brand_mentions, execute
from app.services.text_analytics import BrandLexicon, extract_brands, tokenize

SEED = 11
FIXTURES = Path(__file__).parent / "fixtures"


def _spec(processors, connections):
    return {
        "processors": [{"name": n, "kind": k, "params": p} for n, k, p in processors],
        "connections": [c if isinstance(c, dict) else {"from": c[0], "to": c[1]} for c in connections],
    }


def _sink(name="sink", target="raw/tweets", **params):
    return (name, "micro_batch_sink", {"target": target, **params})


TWEETS = ("tweets", "tweet_source", {"seed": SEED})
PARSE = ("parse", "parse_tweet", {})


def _rows(store, dataset, dedup=True):
    return sorted(execute(store, Scan(dataset=dataset, dedup=dedup)), key=lambda r: r["_uuid"])


# ==================== 图校验 ====================
@pytest.mark.parametrize("spec,error", [
    (_spec([TWEETS, ("x", "teleport", {}), _sink()], [("tweets", "x"), ("x", "sink")]), UnknownProcessorKind),
    (_spec([TWEETS, _sink()], [("tweets", "nowhere")]), DanglingPort),
    (_spec([TWEETS, _sink()], [("ghost", "sink")]), DanglingPort),
    (_spec([TWEETS, PARSE, ("lang", "filter_lang", {}), _sink()],
           [("tweets", "parse"), ("parse", "lang"), ("lang", "parse"), ("lang", "sink")]), CycleDetected),
    (_spec([TWEETS, PARSE, _sink()], [("tweets", "parse"), ("parse", "parse"), ("parse", "sink")]), CycleDetected),
    (_spec([TWEETS, _sink()], [("tweets.quarantine", "sink")]), DanglingPort),
    (_spec([TWEETS, ("t2", "tweet_source", {}), PARSE, _sink()],
           [("tweets", "parse"), ("parse", "sink"), ("t2", "tweets")]), DanglingPort),
    (_spec([TWEETS, PARSE], [("tweets", "parse")]), DanglingPort),
    (_spec([PARSE, _sink()], [("parse", "sink")]), DanglingPort),
    (_spec([TWEETS, PARSE, _sink()], [("tweets", "sink")]), DanglingPort),
    (_spec([TWEETS, PARSE, _sink()], [("tweets", "parse"), ("tweets", "sink")]), DanglingPort),
])
def test_build_graph_rejects_invalid_graphs(spec, error):
    with pytest.raises(error):
        build_graph(spec)


@pytest.mark.parametrize("spec", [
    _spec([TWEETS, TWEETS, _sink()], [("tweets", "sink")]),
    _spec([TWEETS, _sink()], [{"from": "tweets", "to": "sink", "capacity": 4, "high_watermark": 5}]),
    _spec([TWEETS, _sink()], [{"from": "tweets", "to": "sink", "capacity": 0}]),
    _spec([TWEETS, ("sink", "micro_batch_sink", {"batch_max": 0})], [("tweets", "sink")]),
])
def test_build_graph_rejects_invalid_parameters(spec):
    with pytest.raises(ValidationError):
        build_graph(spec)


def test_invalid_weights_fail_at_build_time():
    spec = tweet_ingest_spec(SEED, brand_weights={"Ford": 0.0, "Audi": 0.0})
    with pytest.raises(InvalidWeights):
        build_graph(spec)


def test_topological_order():
    graph = build_graph(tweet_ingest_spec(SEED, keep_lang="en"))
    assert graph.order == ["tweets", "parse", "lang", "sink"]


async def test_unbounded_source_needs_a_stop_condition(store, catalog):
    graph = build_graph(tweet_ingest_spec(SEED))
    with pytest.raises(ValueError):
        await run_flow(graph, store, catalog)


# ==================== 运行 ====================
async def test_pass_through_preserves_payload_and_uuid(store, catalog):
    graph = build_graph(tweet_ingest_spec(SEED))
    report = await run_flow(graph, store, catalog, record_limit=100)

    assert (report.records_in, report.records_out, report.records_dropped) == (100, 100, 0)
    rows = execute(store, Scan(dataset="raw/tweets"))
    assert len(rows) == 100
    expected = generate_tweets(SEED, 100)
    for i, (row, tweet) in enumerate(zip(rows, expected)):
        assert row["_uuid"] == tweet_uuid(SEED, i)
        assert {k: v for k, v in row.items() if k != "_uuid"} == tweet.model_dump()


async def test_lang_filter_matches_oracle(store, catalog):
    n = 400
    oracle = sum(1 for t in generate_tweets(SEED, n) if t.lang == "en")
    graph = build_graph(tweet_ingest_spec(SEED, keep_lang="en"))
    report = await run_flow(graph, store, catalog, record_limit=n)

    assert report.records_out == oracle
    assert report.records_dropped == n - oracle
    rows = execute(store, Scan(dataset="raw/tweets"))
    assert len(rows) == oracle
    assert {r["lang"] for r in rows} == {"en"}


async def test_backpressure_bounds_queue_depth(store, catalog):
    spec = _spec(
        [TWEETS, PARSE, _sink(batch_max=500, record_delay=0.0005)],
        [{"from": "tweets", "to": "parse", "capacity": 8}, {"from": "parse", "to": "sink", "capacity": 8}],
    )
    report = await run_flow(build_graph(spec), store, catalog, record_limit=2000)
    assert report.records_out == 2000
    assert all(depth <= 8 for depth in report.max_queue_depths.values())
    assert max(report.max_queue_depths.values()) == 8


async def test_sink_flushes_by_batch_size(store, catalog):
    spec = tweet_ingest_spec(SEED, batch_max=100)
    spec.processors[-1].params["flush_interval"] = 60.0
    report = await run_flow(build_graph(spec), store, catalog, record_limit=250)

    assert report.files_committed == 3
    refs = store.list_objects("tweets", Zone.RAW)
    assert [r.record_count for r in refs] == [100, 100, 50]
    assert {r.key.partition for r in refs} == {report.run_id}
    assert store.current_version("tweets", Zone.RAW) == 3


async def test_sink_flushes_by_interval(store, catalog):
    spec = _spec([TWEETS, PARSE, _sink(batch_max=10_000, flush_interval=0.05, record_delay=0.002)],
                 [("tweets", "parse"), ("parse", "sink")])
    report = await run_flow(build_graph(spec), store, catalog, record_limit=100)
    assert report.records_out == 100
    assert report.files_committed >= 2


async def test_duration_stops_unbounded_source(store, catalog):
    report = await run_flow(build_graph(tweet_ingest_spec(SEED)), store, catalog, duration=0.2)
    assert report.records_in > 0
    assert report.records_out == report.records_in


async def test_zero_limit_commits_nothing(store, catalog):
    report = await run_flow(build_graph(tweet_ingest_spec(SEED)), store, catalog, record_limit=0)
    assert report.records_in == 0
    assert report.files_committed == 0
    assert store.current_version("tweets", Zone.RAW) == 0
    assert catalog.all_edges() == []


# ==================== 溯源与血缘 ====================
async def test_provenance_sequences(lake, store, catalog):
    graph = build_graph(tweet_ingest_spec(SEED, keep_lang="en"))
    report = await run_flow(graph, store, catalog, record_limit=40)

    kept = provenance_query(lake.root, tweet_uuid(SEED, 0))
    assert [(e.processor_name, e.kind) for e in kept] == [
        ("tweets", EventKind.CREATE), ("parse", EventKind.TRANSFORM), ("sink", EventKind.SEND)]
    assert all(e.run_id == report.run_id for e in kept)
    assert kept[-1].detail.startswith(f"zones/raw/tweets/{report.run_id}/part-")

    dropped = provenance_query(lake.root, tweet_uuid(SEED, 19))
    assert [e.kind for e in dropped] == [EventKind.CREATE, EventKind.TRANSFORM, EventKind.DROP]
    assert dropped[-1].processor_name == "lang"
    assert dropped[-1].detail.startswith("lang=")

    with pytest.raises(UnknownRecord):
        provenance_query(lake.root, "00000000-0000-0000-0000-000000000000")


async def test_flow_records_lineage(store, catalog):
    report = await run_flow(build_graph(tweet_ingest_spec(SEED)), store, catalog, record_limit=5)
    edges = catalog.lineage_of(dataset_node(Zone.RAW, "tweets"))
    assert [(e.from_node, e.to_node) for e in edges] == [
        (f"source:tweet-generator@seed={SEED}", f"job:{report.run_id}"),
        (f"job:{report.run_id}", "dataset:raw/tweets"),
    ]


async def test_crash_then_replay_equals_clean_run(lake, store, catalog):
    crashing = tweet_ingest_spec(SEED, batch_max=50)
    crashing.processors[-1].params["crash_after"] = 130
    with pytest.raises(FlowFailed) as info:
        await run_flow(build_graph(crashing), store, catalog, record_limit=300)
    assert info.value.processor == "sink"
    # 已提交的批次保留，缓冲中的记录丢失
    assert len(execute(store, Scan(dataset="raw/tweets"))) == 100
    assert len(persisted_runs(lake.root)) == 1

    await run_flow(build_graph(tweet_ingest_spec(SEED, batch_max=50)), store, catalog, record_limit=300)
    await run_flow(build_graph(tweet_ingest_spec(SEED, target="raw/clean")), store, catalog, record_limit=300)

    replayed = _rows(store, "raw/tweets")
    assert len(execute(store, Scan(dataset="raw/tweets"))) == 400
    assert replayed == _rows(store, "raw/clean")

    # 同一记录在两次运行中都有事件
    events = provenance_query(lake.root, tweet_uuid(SEED, 0))
    assert len({e.run_id for e in events}) == 3


@pytest.mark.parametrize("crash_after", sorted(random.Random(0).sample(range(1, 200), 20)))
async def test_random_crash_points_replay_to_clean_state(store, catalog, crash_after):
    crashing = tweet_ingest_spec(SEED, batch_max=25)
    crashing.processors[-1].params.update(crash_after=crash_after, flush_interval=60.0)
    with pytest.raises(FlowFailed):
        await run_flow(build_graph(crashing), store, catalog, record_limit=200)
    committed = len(execute(store, Scan(dataset="raw/tweets")))
    assert committed == crash_after // 25 * 25

    await run_flow(build_graph(tweet_ingest_spec(SEED, batch_max=25)), store, catalog, record_limit=200)
    await run_flow(build_graph(tweet_ingest_spec(SEED, target="raw/clean")), store, catalog, record_limit=200)
    assert len(execute(store, Scan(dataset="raw/tweets"))) == committed + 200
    assert _rows(store, "raw/tweets") == _rows(store, "raw/clean")


# ==================== quarantine 与扇出 ====================
@pytest.fixture
def messy_file(tmp_path):
    path = tmp_path / "tweets.jsonl"
    path.write_bytes(b"\n".join([SAMPLE_TWEETS[0], b"{broken", b"", SAMPLE_TWEETS[1], b"[1, 2]",
                                 SAMPLE_TWEETS[2]]) + b"\n")
    return path


async def test_unconnected_quarantine_lands_in_landing_zone(store, catalog, messy_file):
    spec = _spec([("file", "file_source", {"path": str(messy_file)}), PARSE, _sink()],
                 [("file", "parse"), ("parse", "sink")])
    report = await run_flow(build_graph(spec), store, catalog)

    assert (report.records_in, report.records_out, report.records_dropped) == (5, 3, 2)
    assert report.quarantined == 2
    bad = execute(store, Scan(dataset="landing/quarantine"))
    assert [r["reason"] for r in bad] == ["malformed-json", "not-an-object"]
    assert bad[0]["payload"] == "{broken"

    drop_events = provenance_query(store.root, bad[0]["_uuid"])
    assert drop_events[-1].kind == EventKind.DROP
    assert drop_events[-1].detail == "quarantined: malformed-json"

    targets = {e.to_node for e in catalog.all_edges()}
    assert {"dataset:raw/tweets", "dataset:landing/quarantine"} <= targets
    assert any(e.from_node.startswith("source:file:tweets.jsonl@sha256:") for e in catalog.all_edges())


async def test_connected_quarantine_routes_records(store, catalog, messy_file):
    spec = _spec([("file", "file_source", {"path": str(messy_file)}), PARSE, _sink(),
                  _sink("bad", target="raw/rejects")],
                 [("file", "parse"), ("parse", "sink"), ("parse.quarantine", "bad")])
    report = await run_flow(build_graph(spec), store, catalog)

    assert report.records_out == 5
    assert report.quarantined == 0
    rejects = execute(store, Scan(dataset="raw/rejects"))
    assert len(rejects) == 2
    events = provenance_query(store.root, rejects[0]["_uuid"])
    assert [e.kind for e in events] == [EventKind.CREATE, EventKind.ROUTE, EventKind.SEND]


async def test_fan_out_creates_child_records(store, catalog):
    spec = _spec([TWEETS, PARSE, _sink("a", target="raw/copy_a"), _sink("b", target="raw/copy_b")],
                 [("tweets", "parse"), ("parse", "a"), ("parse", "b")])
    report = await run_flow(build_graph(spec), store, catalog, record_limit=10)

    assert report.records_in == 20
    assert report.records_out == 20
    a = {r["_uuid"] for r in execute(store, Scan(dataset="raw/copy_a"))}
    b = {r["_uuid"] for r in execute(store, Scan(dataset="raw/copy_b"))}
    assert a == {tweet_uuid(SEED, i) for i in range(10)}
    assert len(b) == 10 and not (a & b)

    child = provenance_query(store.root, sorted(b)[0])
    assert child[0].kind == EventKind.CREATE
    assert child[0].detail.startswith("parent_uuid=")
    assert child[0].detail[len("parent_uuid="):] in a


# ==================== 推文生成与载荷 ====================
def test_generate_tweets_is_deterministic():
    first = [tweet_json(t) for t in generate_tweets(SEED, 50)]
    assert first == [tweet_json(t) for t in generate_tweets(SEED, 50)]
    assert first != [tweet_json(t) for t in generate_tweets(SEED + 1, 50)]
    assert first[:10] == [tweet_json(t) for t in generate_tweets(SEED, 10)]
    assert list(orjson.loads(first[0]).keys()) == list(Tweet.model_fields.keys())


def test_generated_tweets_are_ordered_and_mixed_language():
    tweets = generate_tweets(SEED, 60)
    ids = [t.tweet_id for t in tweets]
    times = [t.created_unixtime for t in tweets]
    assert ids == sorted(ids) and len(set(ids)) == 60
    assert times == sorted(times)
    assert [i for i, t in enumerate(tweets) if t.lang != "en"] == [19, 39, 59]


def test_brand_weights_bias_mentions():
    tweets = generate_tweets(SEED, 200, brand_weights={"Ford": 1.0, "Audi": 0.0})
    msgs = " ".join(t.msg for t in tweets)
    assert "Ford" in msgs
    assert "Audi" not in msgs


@pytest.mark.parametrize("weights", [{}, {"Ford": -1.0}, {"Ford": 0.0}, {"Ford": float("nan")}])
def test_invalid_weights(weights):
    with pytest.raises(InvalidWeights):
        iter_tweets(SEED, weights)


@pytest.mark.parametrize("payload,expected", [
    (b'{"a":1}', b'{"a":1,"_uuid":"u-1"}'),
    (b"{}", b'{"_uuid":"u-1"}'),
    (b'{"_uuid":"old"}', b'{"_uuid":"u-1"}'),
    (b"[1]", b'{"_payload":"[1]","_uuid":"u-1"}'),
])
def test_inject_uuid(payload, expected):
    assert inject_uuid(FlowRecord(uuid="u-1", payload=payload)) == expected


# ==================== 处理器单元 ====================
class _Context:
    """收集 emit 与溯源事件"""

    def __init__(self):
        self.emitted = []
        self.events = []
        self.provenance = self

    async def emit(self, processor, port, record):
        self.emitted.append((port, record))

    def record(self, record_uuid, processor, kind, detail=""):
        self.events.append((record_uuid, kind))


async def test_parse_tweet_extracts_attributes_from_sample():
    ctx = _Context()
    await ParseTweet("parse").on_record(FlowRecord(uuid="t-1", payload=SAMPLE_TWEETS[0]), ctx)
    [(port, record)] = ctx.emitted
    assert port == "success"
    assert record.attributes["tweet_id"] == "1109349236406140929"
    assert record.attributes["lang"] == "en"
    assert "Mitsubishi EVO 10 LANCER" in record.attributes["msg"]
    assert record.payload == SAMPLE_TWEETS[0]
    assert ctx.events == [("t-1", EventKind.TRANSFORM)]


async def test_parse_tweet_keeps_empty_msg():
    tweet = orjson.loads(SAMPLE_TWEETS[1])
    tweet["msg"] = ""
    ctx = _Context()
    await ParseTweet("parse").on_record(FlowRecord(uuid="t-2", payload=orjson.dumps(tweet)), ctx)
    [(port, record)] = ctx.emitted
    assert port == "success"
    assert record.attributes["msg"] == ""


async def test_parse_tweet_quarantines_non_json():
    ctx = _Context()
    await ParseTweet("parse").on_record(FlowRecord(uuid="t-3", payload=b"not json"), ctx)
    [(port, record)] = ctx.emitted
    assert port == "quarantine"
    assert record.attributes["quarantine.reason"] == "malformed-json"


async def test_interval_flush_fires_when_oldest_record_is_due():
    sink = MicroBatchSink("sink", {"target": "raw/timed", "batch_max": 1000, "flush_interval": 0.4})
    loop = asyncio.get_running_loop()
    flushed_at = []

    async def fake_flush(ctx):
        if sink._buffer:
            flushed_at.append(loop.time())
            sink._buffer = []

    sink._flush = fake_flush
    await sink.open(None)
    try:
        await asyncio.sleep(0.05)
        buffered_at = loop.time()
        await sink.on_record(FlowRecord(uuid="r-1", payload=b"{}"), None)
        await asyncio.sleep(0.7)
    finally:
        await sink.abort()

    assert len(flushed_at) == 1
    assert 0.39 < flushed_at[0] - buffered_at < 0.6


async def test_seed_42_brand_counts_are_pinned(store, catalog):
    lexicon = BrandLexicon.default()
    counts = {brand: 0 for brand in lexicon.brands}
    for tweet in generate_tweets(42, 5000, uniform_weights()):
        for brand in extract_brands(tokenize(tweet.msg), lexicon):
            counts[brand] += 1

    pinned = FIXTURES / "brand_counts_seed42_n5000.json"
    if not pinned.exists():
        pinned.write_bytes(orjson.dumps(counts, option=orjson.OPT_INDENT_2))
    assert orjson.loads(pinned.read_bytes()) == counts
    assert all(n > 0 for n in counts.values())

    # 经流式摄取与查询层得到同样的计数
    await run_flow(build_graph(tweet_ingest_spec(42)), store, catalog, record_limit=5000)
    assert brand_mentions(store, "raw/tweets", lexicon).as_dict() == counts
