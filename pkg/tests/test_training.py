from __future__ import annotations

import json
import math

import numpy as np
import pytest

from xlqa.training import (
    Batch,
    LossConfig,
    Strategy,
    TrainingError,
    TrainingPair,
    expand_pairs,
    in_batch_softmax_loss,
    load_translation_table,
    loss_gradient,
    make_batches,
    save_batches_jsonl,
    translate_task,
    validate_batch,
)

from conftest import parallel_task


def base_pairs(n: int) -> list[TrainingPair]:
    return [
        TrainingPair(f"id{i:04d}", f"question {i}?", "en", f"answer {i}.", f"context {i}", "en")
        for i in range(n)
    ]


def translation_table(qas_ids, languages):
    return {
        (qid, lang): (f"q {qid} {lang}", f"a {qid} {lang}", f"ctx {qid} {lang}")
        for qid in qas_ids
        for lang in languages
    }


def naive_loss(S, scale: float, exclusive: bool) -> float:
    """Independent literal transcription of the in-batch objective."""
    k = len(S)
    total = 0.0
    for i in range(k):
        denom = sum(
            math.exp(scale * S[i][j]) for j in range(k) if (j != i or not exclusive)
        )
        total += scale * S[i][i] - math.log(denom)
    return -total / k


class TestExpandPairs:
    LANGS = ["en", "de", "zh"]

    def test_en_en_unchanged(self):
        base = base_pairs(3)
        assert expand_pairs(base, {}, Strategy.EN_EN, self.LANGS) == base

    def test_xx_size_and_languages(self):
        base = base_pairs(3)
        table = translation_table([p.qas_id for p in base], self.LANGS)
        out = expand_pairs(base, table, Strategy.X_X, self.LANGS)
        assert len(out) == 9
        assert all(p.question_lang == p.answer_lang for p in out)
        assert {p.question_lang for p in out} == set(self.LANGS)

    def test_xy_size_and_cross_product(self):
        base = base_pairs(2)
        table = translation_table([p.qas_id for p in base], self.LANGS)
        out = expand_pairs(base, table, Strategy.X_Y, self.LANGS)
        assert len(out) == 2 * 9
        combos = {(p.question_lang, p.answer_lang) for p in out}
        assert len(combos) == 9

    def test_xy_contains_xx_as_same_language_subset(self):
        base = base_pairs(4)
        table = translation_table([p.qas_id for p in base], self.LANGS)
        xx = expand_pairs(base, table, Strategy.X_X, self.LANGS)
        xy = expand_pairs(base, table, Strategy.X_Y, self.LANGS)
        assert [p for p in xy if p.question_lang == p.answer_lang] == xx

    def test_single_language_degenerates(self):
        base = base_pairs(3)
        table = translation_table([p.qas_id for p in base], ["en"])
        xx = expand_pairs(base, table, Strategy.X_X, ["en"])
        xy = expand_pairs(base, table, Strategy.X_Y, ["en"])
        assert len(xx) == len(xy) == len(base)
        assert [p.qas_id for p in xx] == [p.qas_id for p in base]

    def test_missing_translation_names_key(self):
        base = base_pairs(2)
        table = translation_table(["id0000"], self.LANGS)
        with pytest.raises(TrainingError, match=r"\('id0001', 'de'\)"):
            expand_pairs(base, table, Strategy.X_X, self.LANGS)


class TestMakeBatches:
    def xx_pairs(self, per_lang=10, langs=("de", "en", "zh")):
        pairs = []
        for lang in langs:
            for i in range(per_lang):
                pairs.append(
                    TrainingPair(f"id{i}", f"q {i} {lang}", lang, f"a {i} {lang}", "ctx", lang)
                )
        return pairs

    def test_batches_have_exact_size_and_remainder_reported(self):
        pairs = self.xx_pairs(per_lang=10)  # 30 total
        result = make_batches(pairs, Strategy.X_X, sub_batch_size=8, seed=0)
        assert all(len(b.pairs) == 8 for b in result.batches)
        assert len(result.batches) == 3
        assert result.dropped_pairs == 6

    def test_same_seed_identical_stream(self):
        pairs = self.xx_pairs(per_lang=12)
        a = make_batches(pairs, Strategy.X_X, sub_batch_size=4, seed=9)
        b = make_batches(pairs, Strategy.X_X, sub_batch_size=4, seed=9)
        assert a.batches == b.batches

    def test_different_seed_different_stream(self):
        pairs = self.xx_pairs(per_lang=12)
        a = make_batches(pairs, Strategy.X_X, sub_batch_size=4, seed=1)
        b = make_batches(pairs, Strategy.X_X, sub_batch_size=4, seed=2)
        assert a.batches != b.batches

    def test_mono_batches_are_monolingual(self):
        pairs = self.xx_pairs(per_lang=9)
        result = make_batches(pairs, Strategy.X_X_MONO, sub_batch_size=4, seed=3)
        assert result.batches
        for batch in result.batches:
            validate_batch(batch)
            langs = {p.question_lang for p in batch.pairs}
            assert len(langs) == 1

    def test_mono_cycles_languages_in_seeded_order(self):
        pairs = self.xx_pairs(per_lang=8)
        result = make_batches(pairs, Strategy.X_X_MONO, sub_batch_size=4, seed=5)
        langs = [b.pairs[0].question_lang for b in result.batches]
        # two full rounds over the same language order
        assert langs[:3] == langs[3:6]
        assert sorted(langs[:3]) == ["de", "en", "zh"]

    def test_mono_small_bucket_dropped_with_warning(self):
        pairs = self.xx_pairs(per_lang=8) + [
            TrainingPair("x", "q", "th", "a", "ctx", "th")
        ]
        with pytest.warns(UserWarning, match="'th'"):
            result = make_batches(pairs, Strategy.X_X_MONO, sub_batch_size=4, seed=0)
        assert result.dropped_languages == ("th",)
        assert all(p.question_lang != "th" for b in result.batches for p in b.pairs)

    def test_mono_rejects_mixed_language_pairs(self):
        pairs = self.xx_pairs(per_lang=4)
        pairs.append(TrainingPair("x", "q", "en", "a", "ctx", "de"))
        with pytest.raises(TrainingError, match="same-language"):
            make_batches(pairs, Strategy.X_X_MONO, sub_batch_size=4, seed=0)

    def test_too_few_pairs_rejected(self):
        with pytest.raises(TrainingError, match="at least"):
            make_batches(base_pairs(3), Strategy.EN_EN, sub_batch_size=64, seed=0)

    def test_validate_batch_catches_violations(self):
        good_en = Batch(tuple(base_pairs(2)), Strategy.EN_EN)
        validate_batch(good_en)
        bad = Batch(
            (TrainingPair("a", "q", "de", "a", "c", "de"),), Strategy.EN_EN
        )
        with pytest.raises(TrainingError, match="non-English"):
            validate_batch(bad)
        mixed = Batch(
            (TrainingPair("a", "q", "de", "a", "c", "en"),), Strategy.X_X
        )
        with pytest.raises(TrainingError, match="mixed-language"):
            validate_batch(mixed)
        polyglot = Batch(
            (
                TrainingPair("a", "q", "de", "a", "c", "de"),
                TrainingPair("b", "q", "en", "a", "c", "en"),
            ),
            Strategy.X_X_MONO,
        )
        with pytest.raises(TrainingError, match="spans languages"):
            validate_batch(polyglot)

    def test_batch_export_jsonl(self, tmp_path):
        pairs = self.xx_pairs(per_lang=4)
        result = make_batches(pairs, Strategy.X_X, sub_batch_size=4, seed=0)
        path = tmp_path / "batches.jsonl"
        save_batches_jsonl(result.batches, path)
        lines = path.read_text().splitlines()
        assert len(lines) == len(result.batches)
        record = json.loads(lines[0])
        assert record["strategy"] == "x-x"
        assert len(record["pairs"]) == 4
        assert set(record["pairs"][0]) == {
            "qas_id",
            "question_text",
            "question_lang",
            "answer_text",
            "answer_context",
            "answer_lang",
        }


class TestInBatchSoftmaxLoss:
    def test_hand_expanded_exclusive(self):
        S = np.array([[1.0, 0.0], [0.0, 1.0]])
        assert in_batch_softmax_loss(S, LossConfig()) == pytest.approx(-1.0, abs=1e-12)

    def test_hand_expanded_inclusive(self):
        S = np.array([[1.0, 0.0], [0.0, 1.0]])
        loss = in_batch_softmax_loss(S, LossConfig(exclude_diagonal=False))
        assert loss == pytest.approx(0.3132616875182228, abs=1e-12)

    def test_uniform_inclusive_is_log_k_for_any_scale(self):
        for k in (2, 3, 7):
            for scale in (1.0, 3.5):
                S = np.full((k, k), 0.37)
                loss = in_batch_softmax_loss(S, LossConfig(scale=scale, exclude_diagonal=False))
                assert loss == pytest.approx(math.log(k), abs=1e-12)

    def test_matches_naive_transcription(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            k = int(rng.integers(2, 9))
            S = rng.uniform(-1, 1, size=(k, k))
            for exclusive in (True, False):
                for scale in (1.0, 2.5):
                    mine = in_batch_softmax_loss(S, LossConfig(scale, exclusive))
                    ref = naive_loss(S.tolist(), scale, exclusive)
                    assert mine == pytest.approx(ref, abs=1e-10)

    def test_invariant_under_simultaneous_permutation(self):
        rng = np.random.default_rng(6)
        S = rng.uniform(-1, 1, size=(6, 6))
        for cfg in (LossConfig(), LossConfig(exclude_diagonal=False)):
            base = in_batch_softmax_loss(S, cfg)
            for _ in range(5):
                perm = rng.permutation(6)
                assert in_batch_softmax_loss(S[np.ix_(perm, perm)], cfg) == pytest.approx(
                    base, abs=1e-12
                )

    def test_exclusive_unbounded_decrease_as_diagonal_grows(self):
        rng = np.random.default_rng(8)
        S = rng.uniform(-1, 1, size=(5, 5))
        values = [
            in_batch_softmax_loss(S + t * np.eye(5), LossConfig())
            for t in (0.0, 1.0, 3.0, 10.0)
        ]
        assert all(b < a for a, b in zip(values, values[1:]))

    def test_inclusive_bounded_below_by_zero_and_scale_drives_to_zero(self):
        S = np.array([[0.9, 0.1, 0.0], [0.2, 0.8, -0.1], [0.0, 0.1, 0.7]])
        losses = [
            in_batch_softmax_loss(S, LossConfig(scale=c, exclude_diagonal=False))
            for c in (1.0, 10.0, 100.0)
        ]
        assert all(l >= 0 for l in losses)
        assert losses[0] > losses[1] > losses[2]
        assert losses[2] < 1e-6

    def test_small_batch_rejected(self):
        with pytest.raises(TrainingError, match="at least 2"):
            in_batch_softmax_loss(np.array([[1.0]]), LossConfig())

    def test_non_square_rejected(self):
        with pytest.raises(TrainingError, match="square"):
            in_batch_softmax_loss(np.zeros((2, 3)), LossConfig())

    def test_scale_must_be_positive(self):
        with pytest.raises(TrainingError, match="positive"):
            LossConfig(scale=0.0)


class TestLossGradient:
    def test_uniform_inclusive_closed_form(self):
        for k in (3, 5):
            for scale in (1.0, 2.0):
                S = np.full((k, k), 0.2)
                grad = loss_gradient(S, LossConfig(scale=scale, exclude_diagonal=False))
                expected_diag = -(1 / k) * (1 - 1 / k) * scale
                expected_off = (1 / k) * (1 / k) * scale
                assert np.allclose(np.diag(grad), expected_diag, atol=1e-12)
                off = grad[~np.eye(k, dtype=bool)]
                assert np.allclose(off, expected_off, atol=1e-12)

    def test_matches_central_differences_both_modes(self):
        rng = np.random.default_rng(12)
        h = 1e-4
        for trial in range(10):
            S = rng.uniform(-1, 1, size=(8, 8))
            for exclusive in (True, False):
                scale = 1.0 if trial % 2 == 0 else 2.0
                cfg_scale, cfg_excl = scale, exclusive
                analytic = loss_gradient(S, LossConfig(cfg_scale, cfg_excl))
                numeric = np.zeros_like(S)
                for i in range(8):
                    for j in range(8):
                        plus, minus = S.copy(), S.copy()
                        plus[i, j] += h
                        minus[i, j] -= h
                        numeric[i, j] = (
                            naive_loss(plus.tolist(), cfg_scale, cfg_excl)
                            - naive_loss(minus.tolist(), cfg_scale, cfg_excl)
                        ) / (2 * h)
                rel = np.abs(analytic - numeric) / np.maximum(
                    np.abs(analytic) + np.abs(numeric), 1e-8
                )
                assert float(rel.max()) < 1e-5

    def test_rows_sum_to_zero_inclusive(self):
        rng = np.random.default_rng(14)
        S = rng.uniform(-1, 1, size=(6, 6))
        grad = loss_gradient(S, LossConfig(exclude_diagonal=False))
        assert np.allclose(grad.sum(axis=1), 0.0, atol=1e-12)


class TestTranslateTask:
    def test_identity_table_on_english_task_keeps_content(self):
        task = parallel_task(("en",), n_items=4)
        table = {q.question_id: q.text for q in task.questions}
        table.update({c.candidate_id: (c.sentence, c.context) for c in task.candidates})
        out = translate_task(task, table)
        assert out.questions == task.questions
        assert out.candidates == task.candidates
        assert dict(out.relevance) == dict(task.relevance)
        assert out.languages == ("en",)
        assert out.meta["original_languages"]["q000_en"] == "en"

    def test_ids_structure_and_relevance_unchanged(self):
        task = parallel_task(("de", "en"), n_items=3)
        table = {q.question_id: f"english {q.qas_id}" for q in task.questions}
        table.update({c.candidate_id: f"english {c.candidate_id}" for c in task.candidates})
        out = translate_task(task, table)
        assert [q.question_id for q in out.questions] == [q.question_id for q in task.questions]
        assert dict(out.relevance) == dict(task.relevance)
        assert all(q.language == "en" for q in out.questions)
        assert all(c.language == "en" for c in out.candidates)
        assert out.meta["original_languages"]["q000_de"] == "de"

    def test_context_defaults_to_translated_sentence(self):
        task = parallel_task(("de",), n_items=2)
        table = {q.question_id: "q english" for q in task.questions}
        table.update({c.candidate_id: "c english" for c in task.candidates})
        out = translate_task(task, table)
        assert all(c.context == c.sentence == "c english" for c in out.candidates)

    def test_missing_id_is_an_error(self):
        task = parallel_task(("de",), n_items=2)
        table = {q.question_id: "x" for q in task.questions}
        with pytest.raises(TrainingError, match="de_0000_000"):
            translate_task(task, table)

    def test_double_translation_keeps_first_originals(self):
        task = parallel_task(("de", "en"), n_items=2)
        table = {q.question_id: "x" for q in task.questions}
        table.update({c.candidate_id: "y" for c in task.candidates})
        once = translate_task(task, table)
        twice = translate_task(once, table)
        assert twice.meta["original_languages"]["q000_de"] == "de"


def test_load_translation_table(tmp_path):
    path = tmp_path / "table.jsonl"
    path.write_text(
        '{"id": "a", "en": "hello"}\n{"id": "b", "en": "world", "context": "bigger text"}\n'
    )
    table = load_translation_table(path)
    assert table["a"] == ("hello", None)
    assert table["b"] == ("world", "bigger text")
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"id": "a"}\n')
    with pytest.raises(TrainingError, match="bad.jsonl:1"):
        load_translation_table(bad)
