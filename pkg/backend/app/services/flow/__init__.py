"""
流式摄取模块 - 处理器图、有界队列与溯源
包含：图构建与运行、内置处理器、推文流模拟器、溯源日志
"""
from .engine import FlowGraph, FlowRunner, build_graph, run_flow
from .provenance import ProvenanceLog, provenance_query
from .tweet_generator import generate_tweets, tweet_json

__all__ = [
    'FlowGraph', 'FlowRunner', 'build_graph', 'run_flow',
    'ProvenanceLog', 'provenance_query',
    'generate_tweets', 'tweet_json',
]
