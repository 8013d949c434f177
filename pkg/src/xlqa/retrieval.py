"""Exhaustive dot-product scoring and deterministic full rankings.

Pools here are small enough (~14k candidates) that exact scoring is
cheap; approximate search is deliberately excluded so metric numbers are
reproducible.  Ties are broken by ascending candidate_id.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .corpus import RetrievalTask
from .embed import EmbeddingSet


class RetrievalError(ValueError):
    pass


@dataclass(frozen=True)
class Ranking:
    """A question's ordering over the candidate pool, best first."""

    question_id: str
    ordered: tuple[tuple[str, float], ...]


def score(q, a) -> float:
    """Dot product of two unit vectors, accumulated in float64."""
    qv = np.asarray(q, dtype=np.float64)
    av = np.asarray(a, dtype=np.float64)
    if qv.ndim != 1 or qv.shape != av.shape:
        raise RetrievalError(f"dimension mismatch: {qv.shape} vs {av.shape}")
    return float(qv @ av)


def batch_score(Q, C) -> np.ndarray:
    """All-pairs scores: entry (i, j) is score(Q[i], C[j])."""
    Qm = np.asarray(Q, dtype=np.float64)
    Cm = np.asarray(C, dtype=np.float64)
    if Qm.ndim != 2 or Cm.ndim != 2 or Qm.shape[1] != Cm.shape[1]:
        raise RetrievalError(f"shape mismatch: {Qm.shape} vs {Cm.shape}")
    return Qm @ Cm.T


def ranked_candidates(task: RetrievalTask, c_emb: EmbeddingSet) -> tuple[list[str], np.ndarray]:
    """Candidate ids in tie-break (ascending id) order with their matrix."""
    cand_ids = sorted(c.candidate_id for c in task.candidates)
    rows = []
    for cid in cand_ids:
        if cid not in c_emb:
            raise RetrievalError(f"missing candidate embedding for id {cid!r}")
        rows.append(c_emb.vector(cid))
    matrix = np.stack(rows) if rows else np.zeros((0, c_emb.dim), dtype=np.float32)
    return cand_ids, matrix


def iter_ranked_indices(
    task: RetrievalTask,
    q_emb: EmbeddingSet,
    cand_matrix: np.ndarray,
    chunk_size: int = 256,
) -> Iterator[tuple[object, np.ndarray, np.ndarray]]:
    """Yield (question, order, scores) per question.

    ``order`` ranks candidate indices (into the sorted-id candidate list)
    by descending score; exact ties keep ascending index, i.e. ascending
    candidate_id.
    """
    questions = task.questions
    m = cand_matrix.shape[0]
    for start in range(0, len(questions), chunk_size):
        block = questions[start : start + chunk_size]
        rows = []
        for q in block:
            if q.question_id not in q_emb:
                raise RetrievalError(f"missing question embedding for id {q.question_id!r}")
            rows.append(q_emb.vector(q.question_id))
        if m == 0:
            empty = np.zeros(0, dtype=np.int64)
            for q in block:
                yield q, empty, np.zeros(0)
            continue
        scores = batch_score(np.stack(rows), cand_matrix)
        for q, row in zip(block, scores):
            order = np.argsort(-row, kind="stable")
            yield q, order, row


def iter_rankings(
    task: RetrievalTask,
    q_emb: EmbeddingSet,
    c_emb: EmbeddingSet,
    top_k: int | None = None,
    chunk_size: int = 256,
) -> Iterator[Ranking]:
    """Stream one Ranking per question in task question order."""
    cand_ids, matrix = ranked_candidates(task, c_emb)
    for q, order, row in iter_ranked_indices(task, q_emb, matrix, chunk_size):
        if top_k is not None:
            order = order[: max(0, top_k)]
        yield Ranking(
            q.question_id,
            tuple((cand_ids[j], float(row[j])) for j in order),
        )


def rank_all(
    task: RetrievalTask,
    q_emb: EmbeddingSet,
    c_emb: EmbeddingSet,
    top_k: int | None = None,
) -> list[Ranking]:
    """Exhaustive rankings for every question (see :func:`iter_rankings`)."""
    return list(iter_rankings(task, q_emb, c_emb, top_k=top_k))


def save_rankings_jsonl(rankings: Iterable[Ranking], path) -> None:
    """Dump rankings one per line with scores at 6 decimal places."""
    with open(Path(path), "w", encoding="utf-8") as f:
        for rk in rankings:
            record = {
                "question_id": rk.question_id,
                "ranking": [[cid, round(s, 6)] for cid, s in rk.ordered],
            }
            f.write(json.dumps(record, ensure_ascii=False) + "\n")
