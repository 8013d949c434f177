"""SQuAD-style multilingual QA data -> cross-language retrieval tasks.

Questions that are translations of each other share a ``qas_id``.  Every
sentence of every context paragraph becomes a retrieval candidate, and a
candidate is relevant to a question when it contains the answer span for
that question in *any* language: relevance sets are unioned across
languages through the shared ``qas_id``.
"""

from __future__ import annotations

import json
import warnings
from bisect import bisect_right
from collections import Counter, defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

from .util import canonical_json

Boundary = tuple[int, int]

_TERMINATORS = frozenset(".!?。？！")


class CorpusError(ValueError):
    """Malformed input data or a violated task invariant."""


@dataclass(frozen=True, slots=True)
class AnswerSpan:
    text: str
    answer_start: int


@dataclass(frozen=True, slots=True)
class QAEntry:
    qas_id: str
    question: str
    answers: tuple[AnswerSpan, ...]


@dataclass(frozen=True, slots=True)
class ParagraphRecord:
    """One context paragraph with sentence boundaries and its questions.

    ``boundary_source`` records whether the boundaries came from an
    annotated sidecar ("annotated") or the rule-based fallback ("rule");
    counts depend on the segmentation, so provenance is kept.
    """

    context: str
    sentence_boundaries: tuple[Boundary, ...]
    qas: tuple[QAEntry, ...]
    language: str
    boundary_source: str = "annotated"


@dataclass(frozen=True, slots=True)
class Question:
    question_id: str
    qas_id: str
    text: str
    language: str


@dataclass(frozen=True, slots=True)
class Candidate:
    candidate_id: str
    sentence: str
    context: str
    language: str


@dataclass(frozen=True)
class RetrievalTask:
    """Immutable retrieval task: questions, candidate pool, relevance links.

    ``relevance`` maps question_id to the set of relevant candidate_ids;
    questions sharing a qas_id always carry identical sets.
    """

    questions: tuple[Question, ...]
    candidates: tuple[Candidate, ...]
    relevance: Mapping[str, frozenset[str]]
    languages: tuple[str, ...]
    meta: Mapping[str, object] = field(default_factory=dict)


def segment_text(context: str) -> list[Boundary]:
    """Rule-based sentence split on terminal punctuation.

    A sentence ends at ``. ! ? 。 ？ ！`` when followed by whitespace or
    end-of-string; trailing text without a terminator forms a final
    sentence.  Boundaries cover every non-whitespace character.
    """
    bounds: list[Boundary] = []
    n = len(context)
    start: int | None = None
    for i, ch in enumerate(context):
        if start is None and not ch.isspace():
            start = i
        if start is not None and ch in _TERMINATORS:
            if i + 1 >= n or context[i + 1].isspace():
                bounds.append((start, i + 1))
                start = None
    if start is not None:
        end = n
        while end > start and context[end - 1].isspace():
            end -= 1
        bounds.append((start, end))
    return bounds


def load_boundary_sidecar(path) -> list[list[Boundary]]:
    """Read a sidecar file: a JSON list with one ``[[start, end], ...]`` per paragraph."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(doc, list):
        raise CorpusError(f"boundary sidecar {path} is not a JSON list")
    return [[(int(s), int(e)) for s, e in para] for para in doc]


def parse_squad_json(
    raw: bytes,
    language: str,
    boundaries: Sequence[Sequence[Boundary]] | None = None,
) -> list[ParagraphRecord]:
    """Parse SQuAD v1.1 JSON bytes into paragraph records for one language.

    When ``boundaries`` (one entry per paragraph, in document order) is
    given it is used verbatim; otherwise sentences come from
    :func:`segment_text` and the records are marked accordingly.
    """
    try:
        doc = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorpusError(f"not valid SQuAD JSON: {exc}") from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("data"), list):
        raise CorpusError("not valid SQuAD JSON: missing top-level 'data' list")

    records: list[ParagraphRecord] = []
    index = 0
    for article in doc["data"]:
        for para in article.get("paragraphs", []):
            sidecar = None
            if boundaries is not None:
                if index >= len(boundaries):
                    raise CorpusError(
                        f"boundary sidecar too short: no entry for paragraph {index}"
                    )
                sidecar = boundaries[index]
            records.append(_parse_paragraph(para, index, language, sidecar))
            index += 1
    if boundaries is not None and len(boundaries) != index:
        raise CorpusError(
            f"boundary sidecar has {len(boundaries)} entries for {index} paragraphs"
        )
    return records


def _parse_paragraph(
    para, index: int, language: str, sidecar: Sequence[Boundary] | None
) -> ParagraphRecord:
    context = para.get("context")
    if not isinstance(context, str) or not context:
        raise CorpusError(f"paragraph {index}: missing or empty 'context'")

    if sidecar is not None:
        bounds = _validated_boundaries(sidecar, context, index)
        source = "annotated"
    else:
        bounds = tuple(segment_text(context))
        source = "rule"

    entries = []
    for qa in para.get("qas", []):
        qas_id = qa.get("id")
        question = qa.get("question")
        if not qas_id or not isinstance(question, str):
            raise CorpusError(f"paragraph {index}: qas entry missing 'id' or 'question'")
        answers = []
        for ans in qa.get("answers", []):
            text = ans.get("text")
            start = ans.get("answer_start")
            if not isinstance(text, str) or not isinstance(start, int):
                raise CorpusError(f"qas_id {qas_id!r}: malformed answer entry")
            if start < 0 or start + len(text) > len(context):
                raise CorpusError(
                    f"qas_id {qas_id!r}: answer_start {start} out of range for context"
                )
            if context[start : start + len(text)] != text:
                raise CorpusError(
                    f"qas_id {qas_id!r}: answer text does not match context at offset {start}"
                )
            if not any(bs <= start < be for bs, be in bounds):
                raise CorpusError(
                    f"qas_id {qas_id!r}: answer_start {start} not covered by sentence boundaries"
                )
            answers.append(AnswerSpan(text, start))
        entries.append(QAEntry(str(qas_id), question, tuple(answers)))

    return ParagraphRecord(context, bounds, tuple(entries), language, source)


def _validated_boundaries(
    sidecar: Sequence[Boundary], context: str, index: int
) -> tuple[Boundary, ...]:
    prev_end = 0
    out = []
    for s, e in sidecar:
        if not (0 <= s < e <= len(context)):
            raise CorpusError(f"paragraph {index}: boundary ({s}, {e}) out of range")
        if s < prev_end:
            raise CorpusError(f"paragraph {index}: boundaries overlap or are unsorted")
        prev_end = e
        out.append((int(s), int(e)))
    return tuple(out)


def _sentence_for_span(
    bounds: Sequence[Boundary], span: AnswerSpan, qas_id: str
) -> int:
    """Index of the sentence holding the span; maximal overlap on crossing."""
    s = span.answer_start
    e = span.answer_start + len(span.text)
    starts = [b[0] for b in bounds]
    i = bisect_right(starts, s) - 1
    if i >= 0 and bounds[i][0] <= s < bounds[i][1]:
        if e <= bounds[i][1]:
            return i
        warnings.warn(
            f"answer span for qas_id {qas_id!r} crosses a sentence boundary; "
            "assigning by maximal character overlap",
            stacklevel=3,
        )
    best, best_overlap = -1, 0
    for j, (bs, be) in enumerate(bounds):
        overlap = min(e, be) - max(s, bs)
        if overlap > best_overlap:
            best, best_overlap = j, overlap
    if best < 0:
        raise CorpusError(f"answer span for qas_id {qas_id!r} overlaps no sentence")
    return best


def build_retrieval_task(records: Iterable[ParagraphRecord]) -> RetrievalTask:
    """Assemble the multilingual task from per-language paragraph records.

    Every sentence becomes a candidate (no deduplication); the sentence
    containing each answer span is relevant to all questions sharing that
    qas_id in every language.
    """
    by_lang: dict[str, list[ParagraphRecord]] = defaultdict(list)
    for rec in records:
        by_lang[rec.language].append(rec)
    if not by_lang:
        raise CorpusError("no paragraph records")

    languages = tuple(sorted(by_lang))
    questions: list[Question] = []
    candidates: list[Candidate] = []
    qas_targets: dict[str, set[str]] = defaultdict(set)
    qas_langs: dict[str, set[str]] = defaultdict(set)
    boundary_sources: dict[str, str] = {}

    for lang in languages:
        sources = {rec.boundary_source for rec in by_lang[lang]}
        boundary_sources[lang] = sources.pop() if len(sources) == 1 else "mixed"
        for p_idx, rec in enumerate(by_lang[lang]):
            for s_idx, (bs, be) in enumerate(rec.sentence_boundaries):
                sentence = rec.context[bs:be]
                if not sentence.strip():
                    raise CorpusError(
                        f"empty sentence: {lang} paragraph {p_idx} sentence {s_idx}"
                    )
                candidates.append(
                    Candidate(f"{lang}_{p_idx:04d}_{s_idx:03d}", sentence, rec.context, lang)
                )
            for qa in rec.qas:
                if lang in qas_langs[qa.qas_id]:
                    raise CorpusError(
                        f"duplicate qas_id {qa.qas_id!r} within language {lang!r}"
                    )
                qas_langs[qa.qas_id].add(lang)
                questions.append(
                    Question(f"{qa.qas_id}_{lang}", qa.qas_id, qa.question, lang)
                )
                for span in qa.answers:
                    s_idx = _sentence_for_span(rec.sentence_boundaries, span, qa.qas_id)
                    qas_targets[qa.qas_id].add(f"{lang}_{p_idx:04d}_{s_idx:03d}")

    relevance: dict[str, frozenset[str]] = {}
    for q in questions:
        targets = qas_targets[q.qas_id]
        if not targets:
            raise CorpusError(f"question {q.question_id} has no relevant candidate")
        relevance[q.question_id] = frozenset(targets)

    meta = {"boundary_source": boundary_sources, "dropped_questions": 0}
    return RetrievalTask(tuple(questions), tuple(candidates), relevance, languages, meta)


def restrict_pool(task: RetrievalTask, keep: Callable[[Candidate], bool]) -> RetrievalTask:
    """Filter the candidate pool; intersect relevance; drop orphaned questions.

    The number of dropped questions accumulates in ``meta["dropped_questions"]``.
    """
    kept = tuple(c for c in task.candidates if keep(c))
    kept_ids = frozenset(c.candidate_id for c in kept)
    questions: list[Question] = []
    relevance: dict[str, frozenset[str]] = {}
    dropped = 0
    for q in task.questions:
        rel = task.relevance[q.question_id] & kept_ids
        if rel:
            questions.append(q)
            relevance[q.question_id] = rel
        else:
            dropped += 1
    meta = dict(task.meta)
    meta["dropped_questions"] = int(meta.get("dropped_questions", 0)) + dropped
    return replace(
        task, questions=tuple(questions), candidates=kept, relevance=relevance, meta=meta
    )


def task_stats(task: RetrievalTask) -> dict[str, tuple[int, int]]:
    """Per-language (question count, candidate count)."""
    nq = Counter(q.language for q in task.questions)
    nc = Counter(c.language for c in task.candidates)
    return {lang: (nq.get(lang, 0), nc.get(lang, 0)) for lang in task.languages}


def task_to_json(task: RetrievalTask) -> str:
    """Canonical JSON serialization; byte-identical for identical inputs."""
    payload = {
        "questions": [
            {"question_id": q.question_id, "qas_id": q.qas_id, "text": q.text, "language": q.language}
            for q in task.questions
        ],
        "candidates": [
            {"candidate_id": c.candidate_id, "sentence": c.sentence, "context": c.context, "language": c.language}
            for c in task.candidates
        ],
        "relevance": {qid: sorted(cids) for qid, cids in task.relevance.items()},
        "languages": list(task.languages),
        "meta": dict(task.meta),
    }
    return canonical_json(payload)


def save_task(task: RetrievalTask, path) -> None:
    Path(path).write_text(task_to_json(task) + "\n", encoding="utf-8")


def load_task(path) -> RetrievalTask:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    try:
        questions = tuple(Question(**q) for q in doc["questions"])
        candidates = tuple(Candidate(**c) for c in doc["candidates"])
        relevance = {qid: frozenset(cids) for qid, cids in doc["relevance"].items()}
        languages = tuple(doc["languages"])
        meta = dict(doc.get("meta", {}))
    except (KeyError, TypeError) as exc:
        raise CorpusError(f"malformed task file {path}: {exc}") from exc
    return RetrievalTask(questions, candidates, relevance, languages, meta)
