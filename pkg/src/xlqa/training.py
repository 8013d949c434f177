"""Training pairs, batching strategies, and the in-batch sampled softmax.

Four batching strategies are supported: en-en (English only), x-x
(question and answer share a language, shuffled naively), x-x-mono
(whole monolingual sub-batches, cycling languages in seeded order) and
x-y (question and answer languages drawn independently).

The default loss excludes the positive pair from the softmax denominator
(j != i), matching the printed form of the objective; the standard
inclusive softmax is available via ``exclude_diagonal=False``.
"""

from __future__ import annotations

import json
import random
import warnings
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .corpus import RetrievalTask


class TrainingError(ValueError):
    pass


class Strategy(str, Enum):
    EN_EN = "en-en"
    X_X = "x-x"
    X_X_MONO = "x-x-mono"
    X_Y = "x-y"


@dataclass(slots=True)
class TrainingPair:
    qas_id: str
    question_text: str
    question_lang: str
    answer_text: str
    answer_context: str
    answer_lang: str


@dataclass(frozen=True)
class Batch:
    pairs: tuple[TrainingPair, ...]
    strategy: Strategy


@dataclass(frozen=True)
class LossConfig:
    scale: float = 1.0
    exclude_diagonal: bool = True

    def __post_init__(self):
        if self.scale <= 0:
            raise TrainingError("scale must be positive")


def validate_batch(batch: Batch) -> None:
    """Raise unless the batch satisfies its strategy invariant."""
    if not batch.pairs:
        raise TrainingError("empty batch")
    if batch.strategy is Strategy.EN_EN:
        if any(p.question_lang != "en" or p.answer_lang != "en" for p in batch.pairs):
            raise TrainingError("en-en batch contains a non-English pair")
    elif batch.strategy is Strategy.X_X:
        if any(p.question_lang != p.answer_lang for p in batch.pairs):
            raise TrainingError("x-x batch contains a mixed-language pair")
    elif batch.strategy is Strategy.X_X_MONO:
        langs = {p.question_lang for p in batch.pairs} | {p.answer_lang for p in batch.pairs}
        if len(langs) != 1:
            raise TrainingError(f"x-x-mono batch spans languages {sorted(langs)}")


Translations = Mapping[tuple[str, str], tuple[str, str, str]]


def expand_pairs(
    base: Sequence[TrainingPair],
    translations: Translations,
    strategy: Strategy,
    languages: Sequence[str],
) -> list[TrainingPair]:
    """Expand base pairs via the translation table.

    x-x pairs each example with every language (|base| * |L| results);
    x-y crosses question and answer languages independently
    (|base| * |L|^2); en-en returns the base unchanged.
    """
    strategy = Strategy(strategy)
    if strategy is Strategy.EN_EN:
        return list(base)
    langs = sorted(set(languages))

    def lookup(qas_id: str, lang: str) -> tuple[str, str, str]:
        try:
            return translations[(qas_id, lang)]
        except KeyError:
            raise TrainingError(f"missing translation for ({qas_id!r}, {lang!r})") from None

    out: list[TrainingPair] = []
    if strategy in (Strategy.X_X, Strategy.X_X_MONO):
        for pair in base:
            for lang in langs:
                q_text, a_text, a_ctx = lookup(pair.qas_id, lang)
                out.append(TrainingPair(pair.qas_id, q_text, lang, a_text, a_ctx, lang))
    else:  # X_Y
        for pair in base:
            for q_lang in langs:
                q_text, _, _ = lookup(pair.qas_id, q_lang)
                for a_lang in langs:
                    _, a_text, a_ctx = lookup(pair.qas_id, a_lang)
                    out.append(
                        TrainingPair(pair.qas_id, q_text, q_lang, a_text, a_ctx, a_lang)
                    )
    return out


@dataclass
class BatchingResult:
    batches: list[Batch]
    dropped_pairs: int
    dropped_languages: tuple[str, ...] = ()


def make_batches(
    pairs: Sequence[TrainingPair],
    strategy: Strategy,
    sub_batch_size: int = 64,
    seed: int = 0,
) -> BatchingResult:
    """Deterministic seeded batch stream.

    x-x-mono groups pairs by language, shuffles within groups, and emits
    whole monolingual sub-batches cycling languages in seeded order.
    Other strategies shuffle globally.  Trailing remainders smaller than
    ``sub_batch_size`` are dropped and counted; under x-x-mono a whole
    language bucket smaller than the sub-batch is dropped with a warning.
    """
    strategy = Strategy(strategy)
    if sub_batch_size < 1:
        raise TrainingError("sub_batch_size must be >= 1")
    if len(pairs) < sub_batch_size:
        raise TrainingError(
            f"need at least {sub_batch_size} pairs, got {len(pairs)}"
        )
    rnd = random.Random(seed)

    if strategy is not Strategy.X_X_MONO:
        indices = list(range(len(pairs)))
        rnd.shuffle(indices)
        n_full = len(indices) // sub_batch_size
        batches = [
            Batch(
                tuple(pairs[j] for j in indices[i * sub_batch_size : (i + 1) * sub_batch_size]),
                strategy,
            )
            for i in range(n_full)
        ]
        return BatchingResult(batches, dropped_pairs=len(indices) - n_full * sub_batch_size)

    buckets: dict[str, list[int]] = {}
    for j, pair in enumerate(pairs):
        if pair.question_lang != pair.answer_lang:
            raise TrainingError(
                f"x-x-mono batching requires same-language pairs; got "
                f"({pair.question_lang!r}, {pair.answer_lang!r})"
            )
        buckets.setdefault(pair.question_lang, []).append(j)

    lang_order = sorted(buckets)
    rnd.shuffle(lang_order)
    dropped_pairs = 0
    dropped_languages = []
    chunks: dict[str, list[list[int]]] = {}
    for lang in sorted(buckets):
        bucket = buckets[lang]
        rnd.shuffle(bucket)
        if len(bucket) < sub_batch_size:
            warnings.warn(
                f"language bucket {lang!r} has {len(bucket)} pairs "
                f"(< {sub_batch_size}); dropping it",
                stacklevel=2,
            )
            dropped_languages.append(lang)
            dropped_pairs += len(bucket)
            continue
        n_full = len(bucket) // sub_batch_size
        chunks[lang] = [
            bucket[i * sub_batch_size : (i + 1) * sub_batch_size] for i in range(n_full)
        ]
        dropped_pairs += len(bucket) - n_full * sub_batch_size

    batches = []
    active_langs = [lang for lang in lang_order if lang in chunks]
    max_rounds = max((len(chunks[lang]) for lang in active_langs), default=0)
    for round_no in range(max_rounds):
        for lang in active_langs:
            if round_no < len(chunks[lang]):
                batches.append(
                    Batch(tuple(pairs[j] for j in chunks[lang][round_no]), strategy)
                )
    return BatchingResult(batches, dropped_pairs, tuple(sorted(dropped_languages)))


def save_batches_jsonl(batches: Iterable[Batch], path) -> None:
    """One batch per line, for consumption by an external trainer."""
    with open(Path(path), "w", encoding="utf-8") as f:
        for batch in batches:
            record = {
                "strategy": batch.strategy.value,
                "pairs": [
                    {
                        "qas_id": p.qas_id,
                        "question_text": p.question_text,
                        "question_lang": p.question_lang,
                        "answer_text": p.answer_text,
                        "answer_context": p.answer_context,
                        "answer_lang": p.answer_lang,
                    }
                    for p in batch.pairs
                ],
            }
            f.write(json.dumps(record, ensure_ascii=False) + "\n")


def _scaled_row_lse(S: np.ndarray, cfg: LossConfig) -> tuple[np.ndarray, np.ndarray]:
    Z = cfg.scale * np.asarray(S, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[0] != Z.shape[1]:
        raise TrainingError(f"score matrix must be square, got shape {Z.shape}")
    if Z.shape[0] < 2:
        raise TrainingError("need a batch of at least 2 pairs")
    A = Z.copy()
    if cfg.exclude_diagonal:
        np.fill_diagonal(A, -np.inf)
    m = A.max(axis=1)
    lse = m + np.log(np.exp(A - m[:, None]).sum(axis=1))
    return Z, lse


def in_batch_softmax_loss(S, cfg: LossConfig = LossConfig()) -> float:
    """-(1/K) sum_i [z_ii - log sum_j exp(z_ij)] with z = scale * S.

    With ``exclude_diagonal`` (the default) the positive pair is left out
    of the denominator; otherwise the standard inclusive softmax is used.
    Log-sum-exp uses max subtraction for stability.
    """
    Z, lse = _scaled_row_lse(S, cfg)
    return float(-np.mean(np.diag(Z) - lse))


def loss_gradient(S, cfg: LossConfig = LossConfig()) -> np.ndarray:
    """Analytic d loss / d S; rows of the result sum to zero."""
    Z, lse = _scaled_row_lse(S, cfg)
    A = Z.copy()
    if cfg.exclude_diagonal:
        np.fill_diagonal(A, -np.inf)
    probs = np.exp(A - lse[:, None])
    k = Z.shape[0]
    grad = (cfg.scale / k) * (probs - np.eye(k))
    return grad


def finite_difference_gradient(S, cfg: LossConfig = LossConfig(), h: float = 1e-4) -> np.ndarray:
    """Central-difference gradient of the loss, for self-checks."""
    S = np.asarray(S, dtype=np.float64)
    grad = np.zeros_like(S)
    for i in range(S.shape[0]):
        for j in range(S.shape[1]):
            plus = S.copy()
            minus = S.copy()
            plus[i, j] += h
            minus[i, j] -= h
            grad[i, j] = (
                in_batch_softmax_loss(plus, cfg) - in_batch_softmax_loss(minus, cfg)
            ) / (2 * h)
    return grad


def load_translation_table(path) -> dict[str, tuple[str, str | None]]:
    """JSONL rows {"id": str, "en": str} with an optional "context" field."""
    table: dict[str, tuple[str, str | None]] = {}
    with open(Path(path), encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                table[str(obj["id"])] = (str(obj["en"]), obj.get("context"))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise TrainingError(f"{path}:{line_no}: bad translation row: {exc}") from exc
    return table


def translate_task(
    task: RetrievalTask,
    translation_table: Mapping[str, str | tuple[str, str | None]],
) -> RetrievalTask:
    """Rewrite all texts to English, keeping ids, relevance, and structure.

    Candidate rows may carry a translated context; when absent the
    translated sentence stands in for it.  Original languages are
    retained in ``meta["original_languages"]`` so bias diagnostics keep
    reporting against the source languages.
    """

    def lookup(obj_id: str) -> tuple[str, str | None]:
        if obj_id not in translation_table:
            raise TrainingError(f"missing translation for id {obj_id!r}")
        value = translation_table[obj_id]
        return (value, None) if isinstance(value, str) else (value[0], value[1])

    existing = task.meta.get("original_languages")
    existing = dict(existing) if isinstance(existing, Mapping) else {}
    originals: dict[str, str] = {}

    questions = []
    for q in task.questions:
        text, _ = lookup(q.question_id)
        originals[q.question_id] = existing.get(q.question_id, q.language)
        questions.append(replace(q, text=text, language="en"))
    candidates = []
    for c in task.candidates:
        sentence, context = lookup(c.candidate_id)
        originals[c.candidate_id] = existing.get(c.candidate_id, c.language)
        candidates.append(
            replace(c, sentence=sentence, context=context if context is not None else sentence, language="en")
        )

    meta = dict(task.meta)
    meta["original_languages"] = originals
    meta["translated"] = True
    return replace(
        task,
        questions=tuple(questions),
        candidates=tuple(candidates),
        languages=("en",),
        meta=meta,
    )
