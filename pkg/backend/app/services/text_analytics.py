"""
文本分析
分词、品牌提及抽取与基于词典的情感打分
"""
import re
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, List, Optional, Set

import structlog
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from app.core.config import settings
from app.models.schemas import BrandSentiment

logger = structlog.get_logger(__name__)

# 字母数字串（排除下划线）
_TOKEN_RE = re.compile(r"[^\W_]+")

DEFAULT_BRANDS = [
    "Ford", "Chevrolet", "Dodge", "Toyota", "GMC",
    "Mitsubishi", "Mazda", "Audi", "Benz", "Volkswagen",
]


class BrandLexicon(BaseModel):
    """品牌词典：单词品牌名，规范大小写"""
    model_config = ConfigDict(frozen=True)

    brands: List[str]

    @field_validator("brands")
    @classmethod
    def _check(cls, brands: List[str]) -> List[str]:
        if not brands:
            raise ValueError("品牌词典不能为空")
        folded = [b.casefold() for b in brands]
        if len(set(folded)) != len(folded):
            raise ValueError("品牌名大小写不敏感地重复")
        for brand in brands:
            if tokenize(brand) != [brand.casefold()]:
                raise ValueError(f"品牌名必须是单个词: {brand!r}")
        return brands

    @classmethod
    def default(cls) -> "BrandLexicon":
        return cls(brands=list(DEFAULT_BRANDS))

    def lookup(self) -> Dict[str, str]:
        return {b.casefold(): b for b in self.brands}


class SentimentLexicon(BaseModel):
    """情感词典：正负词集合互不相交，成员判断大小写不敏感"""
    model_config = ConfigDict(frozen=True)

    positive: FrozenSet[str]
    negative: FrozenSet[str]

    @field_validator("positive", "negative", mode="before")
    @classmethod
    def _fold(cls, tokens: Iterable[str]) -> FrozenSet[str]:
        return frozenset(t.casefold() for t in tokens)

    @model_validator(mode="after")
    def _disjoint(self):
        overlap = self.positive & self.negative
        if overlap:
            raise ValueError(f"正负词典相交: {sorted(overlap)}")
        return self

    def swapped(self) -> "SentimentLexicon":
        return SentimentLexicon(positive=self.negative, negative=self.positive)


def tokenize(text: str) -> List[str]:
    """大小写折叠后按非字母数字串切分，保持顺序"""
    if not text:
        return []
    return _TOKEN_RE.findall(text.casefold())


def extract_brands(tokens: Iterable[str], lexicon: BrandLexicon) -> Set[str]:
    """按词精确匹配（不做子串匹配），集合语义"""
    lookup = lexicon.lookup()
    return {lookup[t] for t in tokens if t in lookup}


def sentiment_score(tokens: Iterable[str], lexicon: SentimentLexicon) -> float:
    """(P - N) / (P + N)，无命中时为 0"""
    positive = negative = 0
    for token in tokens:
        if token in lexicon.positive:
            positive += 1
        elif token in lexicon.negative:
            negative += 1
    total = positive + negative
    if total == 0:
        return 0.0
    return (positive - negative) / total


# ==================== 词典文件 ====================
def read_token_file(path) -> List[str]:
    """UTF-8，每行一个词，# 开头为注释"""
    tokens = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            tokens.append(line)
    return tokens


def load_brand_lexicon(path=None) -> BrandLexicon:
    path = Path(path) if path else Path(settings.lexicon_dir) / "brands.txt"
    if not path.exists():
        logger.warning("brand_lexicon_missing", path=str(path))
        return BrandLexicon.default()
    return BrandLexicon(brands=read_token_file(path))


def load_sentiment_lexicon(positive_path=None, negative_path=None) -> SentimentLexicon:
    base = Path(settings.lexicon_dir)
    positive_path = Path(positive_path) if positive_path else base / "positive.txt"
    negative_path = Path(negative_path) if negative_path else base / "negative.txt"
    return SentimentLexicon(
        positive=read_token_file(positive_path),
        negative=read_token_file(negative_path),
    )


# ==================== 品牌情感 ====================
def brand_sentiment_from_messages(messages: Iterable[Optional[str]], brand_lex: BrandLexicon,
                                  sent_lex: SentimentLexicon) -> Dict[str, BrandSentiment]:
    totals = {b: 0.0 for b in brand_lex.brands}
    counts = {b: 0 for b in brand_lex.brands}
    for msg in messages:
        tokens = tokenize(msg or "")
        brands = extract_brands(tokens, brand_lex)
        if not brands:
            continue
        score = sentiment_score(tokens, sent_lex)
        for brand in brands:
            counts[brand] += 1
            totals[brand] += score
    return {
        brand: BrandSentiment(
            tweets=counts[brand],
            mean_score=(totals[brand] / counts[brand]) if counts[brand] else None,
        )
        for brand in brand_lex.brands
    }


def brand_sentiment(store, tweets_ds, brand_lex: BrandLexicon,
                    sent_lex: SentimentLexicon) -> Dict[str, BrandSentiment]:
    """去重后每个品牌的推文数与平均情感分"""
    from app.services.query_engine import tweet_messages

    return brand_sentiment_from_messages(tweet_messages(store, tweets_ds), brand_lex, sent_lex)
