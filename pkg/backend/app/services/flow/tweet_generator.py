"""
推文流模拟器
代替在线推特接口：给定 (seed, n, brand_weights) 生成逐字节可复现的推文
"""
import uuid
from datetime import datetime, timezone
from itertools import islice
from typing import Dict, Iterator, List, Mapping, Optional

import numpy as np
import orjson

from app.core.exceptions import InvalidWeights
from app.models.schemas import Tweet
from app.services.text_analytics import DEFAULT_BRANDS

BASE_TWEET_ID = 1109349236406140929
BASE_UNIXTIME_MS = 1553324443328
CREATED_TIME_FORMAT = "%a %b %d %H:%M:%S +0000 %Y"

OTHER_LANGS = ["es", "fr", "de", "pt", "it"]
LOCATIONS = ["", "", "Brooklyn", "Detroit", "Montreal", "Austin", "Toronto", "Seattle"]
DISPLAY_NAMES = ["StunningCamer", "getraddielater", "carfan88", "roadtripper", "motorhead_dan",
                 "daily_commuter", "gearbox", "autodealsnow"]
FILLER_WORDS = [
    "new", "car", "drive", "today", "deal", "lineup", "engine", "brake", "lines", "kit",
    "road", "trip", "dealer", "price", "sale", "electric", "vehicle", "model", "test", "week",
    "great", "love", "awesome", "reliable", "smooth", "fast", "best", "happy",
    "bad", "broken", "worst", "slow", "hate", "recall", "problem", "noisy",
]

# 推文 uuid 的命名空间，同一 (seed, index) 总是得到同一 uuid
TWEET_NAMESPACE = uuid.UUID("6f1c2a9e-4b7d-5e13-9a0c-2d8f6b3e7a41")


def uniform_weights(brands: Optional[List[str]] = None) -> Dict[str, float]:
    return {b: 1.0 for b in (brands or DEFAULT_BRANDS)}


def _probabilities(brand_weights: Mapping[str, float]) -> np.ndarray:
    if not brand_weights:
        raise InvalidWeights("品牌权重为空")
    weights = np.array([float(w) for w in brand_weights.values()], dtype=float)
    if np.any(weights < 0) or not np.all(np.isfinite(weights)):
        raise InvalidWeights("品牌权重必须为非负有限数")
    total = weights.sum()
    if total <= 0:
        raise InvalidWeights("品牌权重不能全为 0")
    return weights / total


def tweet_uuid(seed: int, index: int) -> str:
    return str(uuid.uuid5(TWEET_NAMESPACE, f"{seed}:{index}"))


def format_created_time(unixtime_ms: int) -> str:
    return datetime.fromtimestamp(unixtime_ms / 1000, tz=timezone.utc).strftime(CREATED_TIME_FORMAT)


def iter_tweets(seed: int, brand_weights: Optional[Mapping[str, float]] = None) -> Iterator[Tweet]:
    """无限推文流；任意前缀与 generate_tweets 的输出一致，权重在取第一条之前校验"""
    brand_weights = brand_weights if brand_weights is not None else uniform_weights()
    return _tweet_stream(seed, brand_weights, _probabilities(brand_weights))


def _tweet_stream(seed: int, brand_weights: Mapping[str, float], probs: np.ndarray) -> Iterator[Tweet]:
    brands = list(brand_weights.keys())
    folded = {b.casefold() for b in brands}
    filler = [w for w in FILLER_WORDS if w not in folded]

    rng = np.random.default_rng(seed % 2 ** 64)
    tweet_id = BASE_TWEET_ID
    unixtime = BASE_UNIXTIME_MS
    index = 0
    while True:
        tweet_id += int(rng.integers(1, 4096))
        unixtime += int(rng.integers(50, 1000))

        words = [filler[int(i)] for i in rng.integers(0, len(filler), size=int(rng.integers(3, 10)))]
        mention_count = int(rng.integers(0, 4))
        for b in rng.choice(len(brands), size=mention_count, p=probs):
            words.insert(int(rng.integers(0, len(words) + 1)), brands[int(b)])

        lang = "en"
        if index % 20 == 19:
            lang = OTHER_LANGS[int(rng.integers(0, len(OTHER_LANGS)))]

        yield Tweet(
            tweet_id=tweet_id,
            created_unixtime=unixtime,
            created_time=format_created_time(unixtime),
            lang=lang,
            location=LOCATIONS[int(rng.integers(0, len(LOCATIONS)))],
            displayname=DISPLAY_NAMES[int(rng.integers(0, len(DISPLAY_NAMES)))],
            time_zone="",
            msg=" ".join(words),
        )
        index += 1


def generate_tweets(seed: int, n: int, brand_weights: Optional[Mapping[str, float]] = None) -> List[Tweet]:
    if n < 0:
        raise ValueError("n 不能为负")
    stream = iter_tweets(seed, brand_weights)
    return list(islice(stream, n))


def tweet_json(tweet: Tweet) -> bytes:
    """单行 JSON，字段顺序与推文样例一致"""
    return orjson.dumps(tweet.model_dump())
