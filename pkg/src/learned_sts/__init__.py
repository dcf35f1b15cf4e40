"""Learned and classic search over sorted tables."""

from .search import SearchRange, bbs, bfs, bfs_prefetch, eytzinger_search, interpolation_search, kary_search, tip_search
from .tables import QueryBatch, SortedTable, load_keys, make_query_batch, store_keys

__version__ = "0.1.0"

__all__ = [
    "QueryBatch",
    "SearchRange",
    "SortedTable",
    "bbs",
    "bfs",
    "bfs_prefetch",
    "eytzinger_search",
    "interpolation_search",
    "kary_search",
    "load_keys",
    "make_query_batch",
    "store_keys",
    "tip_search",
]
