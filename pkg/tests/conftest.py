from __future__ import annotations

import hashlib

import numpy as np
import pytest

from xlqa.corpus import (
    AnswerSpan,
    ParagraphRecord,
    QAEntry,
    RetrievalTask,
    build_retrieval_task,
)
from xlqa.embed import EmbeddingSet, toy_encode


def record_from_sentences(
    language: str,
    sentences: list[str],
    questions: list[tuple[str, str, int, str]] = (),
    boundary_source: str = "annotated",
) -> ParagraphRecord:
    """Build a paragraph record from sentences joined by single spaces.

    ``questions`` entries are (qas_id, question_text, answer_sentence_idx,
    answer_text); the answer text must occur inside the named sentence.
    """
    context = " ".join(sentences)
    bounds = []
    cursor = 0
    for sent in sentences:
        start = context.index(sent, cursor)
        bounds.append((start, start + len(sent)))
        cursor = start + len(sent)
    qas = []
    for qas_id, question, sent_idx, answer_text in questions:
        s, _ = bounds[sent_idx]
        offset = sentences[sent_idx].index(answer_text)
        qas.append(QAEntry(qas_id, question, (AnswerSpan(answer_text, s + offset),)))
    return ParagraphRecord(
        context, tuple(bounds), tuple(qas), language, boundary_source
    )


def parallel_task(
    languages: tuple[str, ...] = ("de", "en", "zh"),
    n_items: int = 12,
    content_style: str = "parallel",
) -> RetrievalTask:
    """Task where every question has one answer sentence per language.

    With ``content_style="parallel"`` sentences are translations (same
    content key across languages, via the ``[xx]`` marker convention) and
    the question text equals its answer sentence, so the toy encoder at
    s=0 retrieves perfectly.  With ``"unique"`` every sentence's content
    is particular to its language, which is what the top-k distribution
    checks want.
    """
    records = []
    for lang in languages:
        for i in range(n_items):
            if content_style == "parallel":
                answer = f"shared fact {i:03d} about token{i:03d} [{lang}]."
                filler = f"unrelated filler number {i:03d} padding{i:03d} [{lang}]."
            else:
                answer = f"own fact {lang} {i:03d} tok{i:03d}{lang} mentions token{i:03d}."
                filler = f"unique filler {lang} slot {i:03d} blob{i:03d}{lang}."
            records.append(
                record_from_sentences(
                    lang,
                    [answer, filler],
                    [(f"q{i:03d}", answer, 0, f"token{i:03d}")],
                )
            )
    return build_retrieval_task(records)


def scrambled_word(*parts) -> str:
    """Unique pseudorandom token with no systematic overlap across items."""
    return hashlib.blake2b(":".join(str(p) for p in parts).encode(), digest_size=4).hexdigest()


def unlinked_task(
    languages: tuple[str, ...] = ("de", "en", "zh"), n_items: int = 40
) -> RetrievalTask:
    """Task whose texts carry no language signal and no cross-item overlap.

    Item tokens are hashed so their characters cannot correlate with the
    language; at s=0 the toy embeddings are language-neutral noise, which
    is what distribution and probe baselines want.
    """
    records = []
    for lang in languages:
        for i in range(n_items):
            w1 = scrambled_word("ans", lang, i)
            w2 = scrambled_word("fill", lang, i)
            wq = scrambled_word("query", lang, i)
            answer = f"assorted text {w1} piece tok{w1}."
            filler = f"assorted text {w2} piece tok{w2}."
            records.append(
                record_from_sentences(
                    lang,
                    [answer, filler],
                    [(f"q{i:03d}", f"query gibberish {wq} wonder", 0, f"tok{w1}")],
                )
            )
    return build_retrieval_task(records)


def toy_embeddings(
    task: RetrievalTask, dim: int = 64, seed: int = 0, strength: float = 0.0
) -> tuple[EmbeddingSet, EmbeddingSet]:
    q_emb = EmbeddingSet.from_vectors(
        "question",
        ((q.question_id, toy_encode(q.text, q.language, dim, seed, strength)) for q in task.questions),
    )
    c_emb = EmbeddingSet.from_vectors(
        "candidate",
        ((c.candidate_id, toy_encode(c.sentence, c.language, dim, seed, strength)) for c in task.candidates),
    )
    return q_emb, c_emb


def random_embeddings(
    task: RetrievalTask, dim: int, seed: int
) -> tuple[EmbeddingSet, EmbeddingSet]:
    rng = np.random.default_rng(seed)
    q_emb = EmbeddingSet.from_vectors(
        "question", ((q.question_id, rng.standard_normal(dim)) for q in task.questions)
    )
    c_emb = EmbeddingSet.from_vectors(
        "candidate", ((c.candidate_id, rng.standard_normal(dim)) for c in task.candidates)
    )
    return q_emb, c_emb


@pytest.fixture
def two_language_task() -> RetrievalTask:
    return parallel_task(("de", "en"), n_items=6)
