"""Synthetic SQuAD-format dataset files with exact per-language counts.

The two benchmark-scale generators mirror the published corpus shapes:
one fully parallel set (240 paragraphs, 1190 questions in each of 11
languages) and one partially parallel set (7 languages, variable question
overlap), with per-language candidate counts fixed by construction via
the boundary sidecars.
"""

from __future__ import annotations

import json
from pathlib import Path

PARALLEL_CORPUS_COUNTS: dict[str, tuple[int, int]] = {
    "ar": (1190, 1222),
    "de": (1190, 1276),
    "el": (1190, 1234),
    "en": (1190, 1180),
    "es": (1190, 1215),
    "hi": (1190, 1244),
    "ru": (1190, 1219),
    "th": (1190, 852),
    "tr": (1190, 1167),
    "vi": (1190, 1209),
    "zh": (1190, 1196),
}

PARTIAL_CORPUS_COUNTS: dict[str, tuple[int, int]] = {
    "ar": (517, 2545),
    "de": (512, 2362),
    "en": (1148, 6264),
    "es": (500, 1787),
    "hi": (507, 2426),
    "vi": (511, 2828),
    "zh": (504, 2322),
}

_PARTIAL_OFFSETS = {"ar": 0, "de": 100, "en": 0, "es": 200, "hi": 300, "vi": 400, "zh": 500}

_DECORATION = {"zh": "答案", "ar": "جواب", "th": "คำตอบ", "el": "απάντηση"}


def _sentence_counts(n_candidates: int, n_paragraphs: int) -> list[int]:
    base, rem = divmod(n_candidates, n_paragraphs)
    assert base >= 1, "every paragraph needs at least one sentence"
    return [base + 1 if p < rem else base for p in range(n_paragraphs)]


def _write_language_file(
    out_dir: Path,
    language: str,
    qas_ids: list[str],
    n_paragraphs: int,
    n_candidates: int,
) -> dict[str, str]:
    """One SQuAD JSON + boundary sidecar; question i sits in paragraph i % P."""
    counts = _sentence_counts(n_candidates, n_paragraphs)
    deco = _DECORATION.get(language, "")
    per_paragraph_qas: list[list[tuple[int, str]]] = [[] for _ in range(n_paragraphs)]
    for ordinal, qas_id in enumerate(qas_ids):
        per_paragraph_qas[ordinal % n_paragraphs].append((ordinal, qas_id))

    paragraphs = []
    sidecar = []
    for p in range(n_paragraphs):
        sentences = []
        for s in range(counts[p]):
            extra = f" {deco}" if deco else ""
            sentences.append(f"Fact {p:03d}-{s:03d}{extra} mark{p}x{s} holds in {language}.")
        context = " ".join(sentences)
        bounds = []
        cursor = 0
        for sent in sentences:
            start = context.index(sent, cursor)
            bounds.append([start, start + len(sent)])
            cursor = start + len(sent)
        qas = []
        for ordinal, qas_id in per_paragraph_qas[p]:
            sent_idx = ordinal % counts[p]
            token = f"mark{p}x{sent_idx}"
            answer_start = bounds[sent_idx][0] + sentences[sent_idx].index(token)
            qas.append(
                {
                    "id": qas_id,
                    "question": f"Question {qas_id} asked in {language}?",
                    "answers": [{"text": token, "answer_start": answer_start}],
                }
            )
        paragraphs.append({"context": context, "qas": qas})
        sidecar.append(bounds)

    data_path = out_dir / f"{language}.json"
    sidecar_path = out_dir / f"{language}.boundaries.json"
    data_path.write_text(
        json.dumps({"version": "1.1", "data": [{"title": language, "paragraphs": paragraphs}]}, ensure_ascii=False),
        encoding="utf-8",
    )
    sidecar_path.write_text(json.dumps(sidecar), encoding="utf-8")
    return {"data": str(data_path), "boundaries": str(sidecar_path)}


def write_parallel_corpus(
    out_dir: Path,
    counts: dict[str, tuple[int, int]] = PARALLEL_CORPUS_COUNTS,
    n_paragraphs: int = 240,
) -> dict[str, dict[str, str]]:
    """Fully parallel corpus: every language shares the complete qas set."""
    out_dir.mkdir(parents=True, exist_ok=True)
    n_questions = {nq for nq, _ in counts.values()}
    assert len(n_questions) == 1
    qas_ids = [f"xq{i:04d}" for i in range(n_questions.pop())]
    return {
        lang: _write_language_file(out_dir, lang, qas_ids, n_paragraphs, nc)
        for lang, (_, nc) in counts.items()
    }


def write_partial_corpus(
    out_dir: Path, counts: dict[str, tuple[int, int]] = PARTIAL_CORPUS_COUNTS
) -> dict[str, dict[str, str]]:
    """Partially parallel corpus: each language covers a slice of the qas ids."""
    out_dir.mkdir(parents=True, exist_ok=True)
    total = max(nq for nq, _ in counts.values())
    all_ids = [f"mq{i:04d}" for i in range(total)]
    inputs = {}
    for lang, (nq, nc) in counts.items():
        offset = _PARTIAL_OFFSETS.get(lang, 0)
        qas_ids = all_ids[offset : offset + nq]
        assert len(qas_ids) == nq
        n_paragraphs = max(1, nq // 5)
        inputs[lang] = _write_language_file(out_dir, lang, qas_ids, n_paragraphs, nc)
    return inputs


def write_separable_corpus(
    out_dir: Path, languages: tuple[str, ...] = ("de", "en"), n_items: int = 6
) -> dict[str, dict[str, str]]:
    """Tiny parallel corpus whose question text equals its answer sentence.

    With the toy encoder at s=0 the content keys of a question and all of
    its targets coincide, so retrieval is perfect.
    """
    out_dir.mkdir(parents=True, exist_ok=True)
    inputs = {}
    for lang in languages:
        paragraphs = []
        sidecar = []
        for i in range(n_items):
            answer = f"shared fact {i:03d} about token{i:03d} [{lang}]."
            filler = f"unrelated filler number {i:03d} padding{i:03d} [{lang}]."
            context = f"{answer} {filler}"
            bounds = [[0, len(answer)], [len(answer) + 1, len(context)]]
            token = f"token{i:03d}"
            paragraphs.append(
                {
                    "context": context,
                    "qas": [
                        {
                            "id": f"q{i:03d}",
                            "question": answer,
                            "answers": [
                                {"text": token, "answer_start": answer.index(token)}
                            ],
                        }
                    ],
                }
            )
            sidecar.append(bounds)
        data_path = out_dir / f"{lang}.json"
        sidecar_path = out_dir / f"{lang}.boundaries.json"
        data_path.write_text(
            json.dumps({"version": "1.1", "data": [{"title": lang, "paragraphs": paragraphs}]}, ensure_ascii=False),
            encoding="utf-8",
        )
        sidecar_path.write_text(json.dumps(sidecar), encoding="utf-8")
        inputs[lang] = {"data": str(data_path), "boundaries": str(sidecar_path)}
    return inputs


def write_config(path: Path, **entries) -> Path:
    path.write_text(json.dumps(entries, indent=2), encoding="utf-8")
    return path
