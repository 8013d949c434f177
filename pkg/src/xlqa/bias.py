"""Language-bias diagnostics over a multilingual retrieval task.

All diagnostics restrict pools per question by masking candidates out of
an already-computed full ranking; the shared task is never mutated.  For
tasks rewritten to English by translate_task, languages are resolved
through ``meta["original_languages"]`` so bias is still reported against
the source languages.
"""

from __future__ import annotations

import io
import csv
from bisect import bisect_left
from dataclasses import dataclass, replace
from typing import Mapping

import numpy as np

from .corpus import RetrievalTask, restrict_pool
from .embed import EmbeddingSet
from .metrics import EvalResult, ap_from_positions, mean_average_precision
from .retrieval import iter_ranked_indices, iter_rankings, ranked_candidates
from .util import canonical_json, stable_rng


class BiasError(ValueError):
    pass


@dataclass
class LanguageMatrix:
    """Square per-language matrix; rows are question languages, columns answer languages.

    NaN marks absent cells (language pairs with no data).  Distribution
    rows sum to 1.
    """

    languages: tuple[str, ...]
    values: np.ndarray
    kind: str  # "map_matrix" | "distribution"

    def cell(self, question_lang: str, answer_lang: str) -> float | None:
        i = self.languages.index(question_lang)
        j = self.languages.index(answer_lang)
        v = float(self.values[i, j])
        return None if np.isnan(v) else v

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["language", *self.languages])
        for lang, row in zip(self.languages, self.values):
            writer.writerow([lang] + ["" if np.isnan(v) else f"{v:.6f}" for v in row])
        return buf.getvalue()

    def to_json(self) -> str:
        rows = [
            [None if np.isnan(v) else round(float(v), 6) for v in row]
            for row in self.values
        ]
        return canonical_json(
            {"kind": self.kind, "languages": list(self.languages), "values": rows}
        )


@dataclass
class RemoveOneReport:
    """mAP after deleting one target per question: same-language vs random other."""

    map_minus_rand: float
    map_minus_same: float
    pct_delta: float
    seed: int
    skipped_same: int = 0
    skipped_rand: int = 0
    num_questions: int = 0

    def to_json(self) -> str:
        return canonical_json(
            {
                "map_minus_rand": round(self.map_minus_rand, 6),
                "map_minus_same": round(self.map_minus_same, 6),
                "pct_delta": round(self.pct_delta, 6),
                "seed": self.seed,
                "skipped_same": self.skipped_same,
                "skipped_rand": self.skipped_rand,
                "num_questions": self.num_questions,
            }
        )


def _original_languages(task: RetrievalTask) -> Mapping[str, str]:
    orig = task.meta.get("original_languages")
    return orig if isinstance(orig, Mapping) else {}


def _effective_lang(orig: Mapping[str, str], obj_id: str, declared: str) -> str:
    return str(orig.get(obj_id, declared))


def language_axis(task: RetrievalTask) -> tuple[str, ...]:
    """Sorted effective languages present among questions and candidates."""
    orig = _original_languages(task)
    langs = {_effective_lang(orig, q.question_id, q.language) for q in task.questions}
    langs |= {_effective_lang(orig, c.candidate_id, c.language) for c in task.candidates}
    return tuple(sorted(langs))


def _prepared(task: RetrievalTask, c_emb: EmbeddingSet):
    orig = _original_languages(task)
    cand_ids, matrix = ranked_candidates(task, c_emb)
    col = {cid: j for j, cid in enumerate(cand_ids)}
    by_id = {c.candidate_id: c for c in task.candidates}
    cand_langs = np.array(
        [_effective_lang(orig, cid, by_id[cid].language) for cid in cand_ids]
    )
    return orig, cand_ids, col, cand_langs, matrix


def _inverse_permutation(order: np.ndarray) -> np.ndarray:
    inv = np.empty(order.shape[0], dtype=np.int64)
    inv[order] = np.arange(order.shape[0])
    return inv


def remove_one_eval(
    task: RetrievalTask,
    q_emb: EmbeddingSet,
    c_emb: EmbeddingSet,
    mode: str,
    seed: int = 0,
) -> tuple[float, int]:
    """mAP with one target removed per question.

    mode="same" removes the single same-language target; mode="rand"
    removes a seeded uniform choice among the other-language targets (one
    independent draw per question, derived from the task-level seed).
    Questions without an applicable target are skipped; returns
    (mAP, skipped count).
    """
    if mode not in ("same", "rand"):
        raise BiasError(f"unknown removal mode {mode!r}")
    orig, _, col, cand_langs, matrix = _prepared(task, c_emb)
    aps: list[float] = []
    skipped = 0
    for q, order, _ in iter_ranked_indices(task, q_emb, matrix):
        rel = sorted(task.relevance[q.question_id])
        if len(rel) < 2:
            skipped += 1
            continue
        q_lang = _effective_lang(orig, q.question_id, q.language)
        same = [cid for cid in rel if cand_langs[col[cid]] == q_lang]
        other = [cid for cid in rel if cand_langs[col[cid]] != q_lang]
        if mode == "same":
            if not same:
                skipped += 1
                continue
            removed = same[0]
        else:
            if not other:
                skipped += 1
                continue
            rng = stable_rng("remove-one", q.question_id, seed=seed)
            removed = other[int(rng.integers(len(other)))]
        inv = _inverse_permutation(order)
        removed_pos = int(inv[col[removed]]) + 1
        positions = sorted(int(inv[col[cid]]) + 1 for cid in rel if cid != removed)
        adjusted = [p - 1 if p > removed_pos else p for p in positions]
        aps.append(ap_from_positions(adjusted))
    if not aps:
        raise BiasError("no evaluable questions for remove-one diagnostic")
    return float(np.mean(aps)), skipped


def remove_one_report(
    task: RetrievalTask, q_emb: EmbeddingSet, c_emb: EmbeddingSet, seed: int = 0
) -> RemoveOneReport:
    map_rand, skipped_rand = remove_one_eval(task, q_emb, c_emb, "rand", seed)
    map_same, skipped_same = remove_one_eval(task, q_emb, c_emb, "same", seed)
    pct = (map_rand - map_same) / map_rand if map_rand > 0 else float("nan")
    return RemoveOneReport(
        map_minus_rand=map_rand,
        map_minus_same=map_same,
        pct_delta=pct,
        seed=seed,
        skipped_same=skipped_same,
        skipped_rand=skipped_rand,
        num_questions=len(task.questions),
    )


def single_target_matrix(
    task: RetrievalTask, q_emb: EmbeddingSet, c_emb: EmbeddingSet
) -> LanguageMatrix:
    """Per language pair: mean AP retrieving one target with the others removed.

    Cell (ql, al) averages, over questions in language ql, the reciprocal
    rank of the al-language target once the question's other targets are
    masked out of the pool (single relevance makes AP = MRR).  Pairs with
    no data stay NaN.
    """
    langs = language_axis(task)
    index = {lang: i for i, lang in enumerate(langs)}
    sums = np.zeros((len(langs), len(langs)))
    counts = np.zeros((len(langs), len(langs)))
    orig, _, col, cand_langs, matrix = _prepared(task, c_emb)
    for q, order, _ in iter_ranked_indices(task, q_emb, matrix):
        rel = sorted(task.relevance[q.question_id])
        q_lang = _effective_lang(orig, q.question_id, q.language)
        inv = _inverse_permutation(order)
        targets = [(str(cand_langs[col[cid]]), int(inv[col[cid]]) + 1) for cid in rel]
        target_positions = sorted(p for _, p in targets)
        qi = index[q_lang]
        for a_lang, pos in targets:
            removed_above = bisect_left(target_positions, pos)
            adjusted_rank = pos - removed_above
            sums[qi, index[a_lang]] += 1.0 / adjusted_rank
            counts[qi, index[a_lang]] += 1.0
    with np.errstate(invalid="ignore"):
        values = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    return LanguageMatrix(langs, values, "map_matrix")


def top_k_language_distribution(
    task: RetrievalTask, q_emb: EmbeddingSet, c_emb: EmbeddingSet, k: int = 100
) -> LanguageMatrix:
    """Language histogram of each question's top-k candidates, averaged per row."""
    pool = len(task.candidates)
    if not 1 <= k <= pool:
        raise BiasError(f"k={k} exceeds pool size {pool}")
    langs = language_axis(task)
    index = {lang: i for i, lang in enumerate(langs)}
    sums = np.zeros((len(langs), len(langs)))
    row_counts = np.zeros(len(langs))
    orig, _, _, cand_langs, matrix = _prepared(task, c_emb)
    for q, order, _ in iter_ranked_indices(task, q_emb, matrix):
        qi = index[_effective_lang(orig, q.question_id, q.language)]
        top_langs = cand_langs[order[:k]]
        for lang, n in zip(*np.unique(top_langs, return_counts=True)):
            sums[qi, index[str(lang)]] += n / k
        row_counts[qi] += 1.0
    values = np.full((len(langs), len(langs)), np.nan)
    for i in range(len(langs)):
        if row_counts[i] > 0:
            row = sums[i] / row_counts[i]
            values[i] = row / row.sum()
    return LanguageMatrix(langs, values, "distribution")


def zero_shot_eval(
    task: RetrievalTask, q_emb: EmbeddingSet, c_emb: EmbeddingSet
) -> dict[str, EvalResult]:
    """Per-language mAP restricting candidates to the question language.

    For each language the pool is monolingual and relevance is
    intersected; questions of that language left without a target are
    dropped and counted.  With one target per question this equals MRR.
    """
    orig = _original_languages(task)

    def lang_of(candidate):
        return _effective_lang(orig, candidate.candidate_id, candidate.language)

    results: dict[str, EvalResult] = {}
    for lang in language_axis(task):
        total_lang_questions = sum(
            1
            for q in task.questions
            if _effective_lang(orig, q.question_id, q.language) == lang
        )
        if total_lang_questions == 0:
            continue
        sub = restrict_pool(task, lambda c, target=lang: lang_of(c) == target)
        kept = tuple(
            q
            for q in sub.questions
            if _effective_lang(orig, q.question_id, q.language) == lang
        )
        dropped = total_lang_questions - len(kept)
        if not kept:
            results[lang] = EvalResult(float("nan"), {}, 0, dropped)
            continue
        sub = replace(
            sub,
            questions=kept,
            relevance={q.question_id: sub.relevance[q.question_id] for q in kept},
        )
        rankings = iter_rankings(sub, q_emb, c_emb)
        results[lang] = mean_average_precision(rankings, sub.relevance, num_dropped=dropped)
    return results
