"""Multilingual question-answer retrieval benchmarking toolkit.

Converts SQuAD-style extractive QA data into cross-language retrieval
tasks, ranks multilingual candidate pools with pluggable dual-encoder
embeddings, and quantifies same-language bias.
"""

__version__ = "0.1.0"

from .corpus import (  # noqa: F401
    Candidate,
    Question,
    RetrievalTask,
    build_retrieval_task,
    parse_squad_json,
    restrict_pool,
    segment_text,
    task_stats,
)
from .embed import EmbeddingSet, load_embeddings, normalize, toy_encode  # noqa: F401
from .metrics import EvalResult, average_precision, mean_average_precision  # noqa: F401
from .retrieval import Ranking, rank_all, score  # noqa: F401
