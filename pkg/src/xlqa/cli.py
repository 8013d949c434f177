"""Command-line drivers for the full pipeline.

Subcommands: convert, stats, eval, bias, zero-shot, batches, loss-check,
probe, report.  Every run is a pure function of (config, input files):
all randomness flows from named seeds in the config, and every report
embeds the config hash, the seeds, and the tool version.

Exit codes: 0 success, 1 validation failure, 2 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bias import (
    BiasError,
    remove_one_report,
    single_target_matrix,
    top_k_language_distribution,
    zero_shot_eval,
)
from .corpus import (
    CorpusError,
    RetrievalTask,
    build_retrieval_task,
    load_boundary_sidecar,
    load_task,
    parse_squad_json,
    save_task,
    task_stats,
)
from .embed import (
    EmbeddingError,
    EmbeddingSet,
    EncoderEndpoint,
    encode_remote,
    load_embeddings,
    toy_encode,
)
from .metrics import MetricsError, mean_average_precision
from .probe import ProbeError, language_id_probe, pca_2d
from .retrieval import RetrievalError, iter_rankings
from .training import (
    LossConfig,
    Strategy,
    TrainingError,
    TrainingPair,
    expand_pairs,
    finite_difference_gradient,
    loss_gradient,
    make_batches,
    save_batches_jsonl,
    validate_batch,
)
from .util import canonical_json, sha256_hex

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2

_VALIDATION_ERRORS = (
    CorpusError,
    EmbeddingError,
    RetrievalError,
    MetricsError,
    BiasError,
    TrainingError,
    ProbeError,
    FileNotFoundError,
)


class ConfigError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # bad usage is a validation failure, not a crash
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_VALIDATION)


def load_config(path: str | Path, overrides: list[str] | None = None) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        cfg = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    for item in overrides or []:
        _apply_override(cfg, item)
    return cfg


def _apply_override(cfg: dict, item: str) -> None:
    if "=" not in item:
        raise ConfigError(f"override {item!r} must look like key.path=value")
    dotted, raw = item.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = cfg
    keys = dotted.split(".")
    for key in keys[:-1]:
        node = node.setdefault(key, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override {dotted!r} crosses a non-object value")
    node[keys[-1]] = value


def _envelope(cfg: dict) -> dict:
    return {
        "config_sha256": sha256_hex(canonical_json(cfg)),
        "seeds": cfg.get("seeds", {}),
        "tool_version": __version__,
    }


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(
        json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )


def _resolve(base: Path, value: str) -> Path:
    p = Path(value)
    return p if p.is_absolute() else base / p


def _output_dir(cfg: dict, base: Path) -> Path:
    return _resolve(base, str(cfg.get("output_dir", ".")))


def _build_task_from_inputs(cfg: dict, base: Path, languages: list[str] | None) -> RetrievalTask:
    inputs = cfg.get("inputs")
    if not isinstance(inputs, dict) or not inputs:
        raise ConfigError("config needs an 'inputs' map of language -> files")
    selected = languages or cfg.get("languages") or sorted(inputs)
    records = []
    for lang in selected:
        if lang not in inputs:
            raise ConfigError(f"no input configured for language {lang!r}")
        entry = inputs[lang]
        data_path = _resolve(base, str(entry["data"]))
        if not data_path.exists():
            raise ConfigError(f"input file not found: {data_path}")
        sidecar = None
        if entry.get("boundaries"):
            sidecar_path = _resolve(base, str(entry["boundaries"]))
            if not sidecar_path.exists():
                raise ConfigError(f"boundary sidecar not found: {sidecar_path}")
            sidecar = load_boundary_sidecar(sidecar_path)
        records.extend(parse_squad_json(data_path.read_bytes(), lang, sidecar))
    return build_retrieval_task(records)


def _load_or_build_task(cfg: dict, base: Path) -> RetrievalTask:
    task_file = cfg.get("task_file")
    if task_file:
        path = _resolve(base, str(task_file))
        if path.exists():
            return load_task(path)
    return _build_task_from_inputs(cfg, base, None)


def _embeddings(cfg: dict, task: RetrievalTask, base: Path) -> tuple[EmbeddingSet, EmbeddingSet]:
    spec = cfg.get("embeddings")
    if not isinstance(spec, dict) or "source" not in spec:
        raise ConfigError("config needs an 'embeddings' object with a 'source'")
    source = spec["source"]
    if source == "toy":
        dim = int(spec.get("dim", 64))
        seed = int(spec.get("seed", 0))
        strength = float(spec.get("language_offset_strength", 0.0))
        q_emb = EmbeddingSet.from_vectors(
            "question",
            (
                (q.question_id, toy_encode(q.text, q.language, dim, seed, strength))
                for q in task.questions
            ),
        )
        c_emb = EmbeddingSet.from_vectors(
            "candidate",
            (
                (c.candidate_id, toy_encode(c.sentence, c.language, dim, seed, strength))
                for c in task.candidates
            ),
        )
        return q_emb, c_emb
    if source == "file":
        q_ids = {q.question_id for q in task.questions}
        c_ids = {c.candidate_id for c in task.candidates}
        q_emb = load_embeddings(_resolve(base, str(spec["questions"])), q_ids, "question")
        c_emb = load_embeddings(_resolve(base, str(spec["candidates"])), c_ids, "candidate")
        return q_emb, c_emb
    if source == "remote":
        endpoint = EncoderEndpoint(
            url=str(spec["url"]),
            batch_size=int(spec.get("batch_size", 32)),
            timeout=float(spec.get("timeout", 30.0)),
            max_retries=int(spec.get("max_retries", 2)),
            parallelism=int(spec.get("parallelism", 1)),
        )
        q_emb = encode_remote(
            endpoint,
            [(q.question_id, q.text, None) for q in task.questions],
            "question",
        )
        c_emb = encode_remote(
            endpoint,
            [(c.candidate_id, c.sentence, c.context) for c in task.candidates],
            "candidate",
        )
        return q_emb, c_emb
    raise ConfigError(f"unknown embedding source {source!r}")


def _stats_lines(task: RetrievalTask) -> list[str]:
    stats = task_stats(task)
    lines = [f"{'language':<10}{'questions':>10}{'candidates':>12}"]
    for lang in sorted(stats):
        nq, nc = stats[lang]
        lines.append(f"{lang:<10}{nq:>10}{nc:>12}")
    return lines


def cmd_convert(args) -> int:
    base = Path(args.config).resolve().parent
    cfg = load_config(args.config, args.set)
    languages = args.languages.split(",") if args.languages else None
    task = _build_task_from_inputs(cfg, base, languages)
    out = (
        _resolve(base, args.output)
        if args.output
        else _resolve(base, str(cfg.get("task_file", "task.json")))
    )
    out.parent.mkdir(parents=True, exist_ok=True)
    save_task(task, out)
    for line in _stats_lines(task):
        print(line)
    print(f"task written to {out}")
    return EXIT_OK


def cmd_stats(args) -> int:
    task = load_task(args.task)
    for line in _stats_lines(task):
        print(line)
    return EXIT_OK


def cmd_eval(args) -> int:
    base = Path(args.config).resolve().parent
    cfg = load_config(args.config, args.set)
    task = _load_or_build_task(cfg, base)
    q_emb, c_emb = _embeddings(cfg, task, base)
    out_dir = _output_dir(cfg, base)

    if args.zero_shot or cfg.get("eval", {}).get("zero_shot"):
        return _write_zero_shot(cfg, task, q_emb, c_emb, out_dir, args.output, base)

    dropped = int(task.meta.get("dropped_questions", 0))
    result = mean_average_precision(iter_rankings(task, q_emb, c_emb), task.relevance, dropped)
    payload = {
        "map": round(result.map_score, 6),
        "num_questions": result.num_questions,
        "num_dropped": result.num_dropped,
        "per_question_ap": {q: round(a, 6) for q, a in sorted(result.per_question_ap.items())},
        **_envelope(cfg),
    }
    out = _resolve(base, args.output) if args.output else out_dir / "eval.json"
    _write_json(out, payload)
    print(f"mAP {result.map_score:.6f} over {result.num_questions} questions -> {out}")
    return EXIT_OK


def _write_zero_shot(cfg, task, q_emb, c_emb, out_dir: Path, output, base: Path) -> int:
    per_language = zero_shot_eval(task, q_emb, c_emb)
    rows = {
        lang: {
            "map": round(res.map_score, 6) if res.num_questions else None,
            "num_questions": res.num_questions,
            "num_dropped": res.num_dropped,
        }
        for lang, res in per_language.items()
    }
    scored = [r["map"] for r in rows.values() if r["map"] is not None]
    payload = {
        "per_language": rows,
        "average": round(float(np.mean(scored)), 6) if scored else None,
        **_envelope(cfg),
    }
    out = _resolve(base, output) if output else out_dir / "zero_shot.json"
    _write_json(out, payload)
    for lang in sorted(rows):
        value = rows[lang]["map"]
        print(f"{lang}: {'n/a' if value is None else f'{value:.6f}'}")
    print(f"average: {payload['average']} -> {out}")
    return EXIT_OK


def cmd_zero_shot(args) -> int:
    base = Path(args.config).resolve().parent
    cfg = load_config(args.config, args.set)
    task = _load_or_build_task(cfg, base)
    q_emb, c_emb = _embeddings(cfg, task, base)
    return _write_zero_shot(cfg, task, q_emb, c_emb, _output_dir(cfg, base), args.output, base)


def cmd_bias(args) -> int:
    base = Path(args.config).resolve().parent
    cfg = load_config(args.config, args.set)
    task = _load_or_build_task(cfg, base)
    q_emb, c_emb = _embeddings(cfg, task, base)
    out_dir = _output_dir(cfg, base)
    out_dir.mkdir(parents=True, exist_ok=True)
    seed = int(cfg.get("seeds", {}).get("remove_one", 0))

    report = remove_one_report(task, q_emb, c_emb, seed)
    payload = json.loads(report.to_json())
    payload.update(_envelope(cfg))
    _write_json(out_dir / "remove_one.json", payload)

    matrix = single_target_matrix(task, q_emb, c_emb)
    (out_dir / "single_target_map.csv").write_text(matrix.to_csv(), encoding="utf-8")
    (out_dir / "single_target_map.json").write_text(matrix.to_json() + "\n", encoding="utf-8")

    k = int(cfg.get("bias", {}).get("top_k", 100))
    dist = top_k_language_distribution(task, q_emb, c_emb, k)
    (out_dir / f"top{k}_distribution.csv").write_text(dist.to_csv(), encoding="utf-8")
    (out_dir / f"top{k}_distribution.json").write_text(dist.to_json() + "\n", encoding="utf-8")

    print(
        f"remove-one mAP: -rand {report.map_minus_rand:.6f}, "
        f"-same {report.map_minus_same:.6f}, delta {report.pct_delta:.4f}"
    )
    print(f"bias reports written to {out_dir}")
    return EXIT_OK


def _load_pairs_jsonl(path: Path) -> list[TrainingPair]:
    pairs = []
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                pairs.append(
                    TrainingPair(
                        qas_id=str(obj["qas_id"]),
                        question_text=str(obj["question"]),
                        question_lang=str(obj.get("lang", "en")),
                        answer_text=str(obj["answer"]),
                        answer_context=str(obj.get("context", obj["answer"])),
                        answer_lang=str(obj.get("lang", "en")),
                    )
                )
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise TrainingError(f"{path}:{line_no}: bad pair row: {exc}") from exc
    return pairs


def _load_pair_translations(path: Path) -> dict[tuple[str, str], tuple[str, str, str]]:
    table: dict[tuple[str, str], tuple[str, str, str]] = {}
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                key = (str(obj["qas_id"]), str(obj["lang"]))
                table[key] = (
                    str(obj["question"]),
                    str(obj["answer"]),
                    str(obj.get("context", obj["answer"])),
                )
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise TrainingError(f"{path}:{line_no}: bad translation row: {exc}") from exc
    return table


def cmd_batches(args) -> int:
    base = Path(args.config).resolve().parent
    cfg = load_config(args.config, args.set)
    section = cfg.get("batches")
    if not isinstance(section, dict):
        raise ConfigError("config needs a 'batches' object")
    strategy = Strategy(section.get("strategy", "en-en"))
    pairs = _load_pairs_jsonl(_resolve(base, str(section["base_pairs"])))
    if strategy is not Strategy.EN_EN:
        languages = cfg.get("languages")
        if not languages:
            raise ConfigError("expansion needs a 'languages' list in the config")
        translations = _load_pair_translations(_resolve(base, str(section["translations"])))
        pairs = expand_pairs(pairs, translations, strategy, languages)
    result = make_batches(
        pairs,
        strategy,
        sub_batch_size=int(section.get("sub_batch_size", 64)),
        seed=int(cfg.get("seeds", {}).get("batches", 0)),
    )
    for batch in result.batches:
        validate_batch(batch)
    out = (
        _resolve(base, args.output)
        if args.output
        else _output_dir(cfg, base) / "batches.jsonl"
    )
    out.parent.mkdir(parents=True, exist_ok=True)
    save_batches_jsonl(result.batches, out)
    summary = {
        "strategy": strategy.value,
        "num_batches": len(result.batches),
        "sub_batch_size": int(section.get("sub_batch_size", 64)),
        "dropped_pairs": result.dropped_pairs,
        "dropped_languages": list(result.dropped_languages),
        "output": out.name,
        **_envelope(cfg),
    }
    _write_json(out.with_name(out.stem + "_summary.json"), summary)
    print(
        f"{len(result.batches)} batches written to {out} "
        f"(dropped {result.dropped_pairs} pairs"
        + (f", dropped languages: {', '.join(result.dropped_languages)})" if result.dropped_languages else ")")
    )
    return EXIT_OK


def cmd_loss_check(args) -> int:
    if args.config:
        cfg = load_config(args.config, args.set)
    else:
        cfg = {}
        for item in args.set:
            _apply_override(cfg, item)
    section = cfg.get("loss_check", {})
    trials = int(section.get("trials", 50))
    k = int(section.get("k", 8))
    h = float(section.get("h", 1e-4))
    scale = float(section.get("scale", 1.0))
    seed = int(cfg.get("seeds", {}).get("loss_check", 0))
    tolerance = float(section.get("tolerance", 1e-5))

    rng = np.random.default_rng(seed)
    worst = {"exclusive": 0.0, "inclusive": 0.0}
    for _ in range(trials):
        S = rng.uniform(-1.0, 1.0, size=(k, k))
        for name, exclude in (("exclusive", True), ("inclusive", False)):
            loss_cfg = LossConfig(scale=scale, exclude_diagonal=exclude)
            analytic = loss_gradient(S, loss_cfg)
            numeric = finite_difference_gradient(S, loss_cfg, h)
            rel = np.abs(analytic - numeric) / np.maximum(np.abs(analytic) + np.abs(numeric), 1e-8)
            worst[name] = max(worst[name], float(rel.max()))

    ok = all(v < tolerance for v in worst.values())
    payload = {
        "trials": trials,
        "k": k,
        "h": h,
        "scale": scale,
        "tolerance": tolerance,
        "max_relative_error": {name: float(f"{v:.3e}") for name, v in worst.items()},
        "passed": ok,
        **_envelope(cfg),
    }
    if args.output:
        _write_json(Path(args.output), payload)
    for name, v in worst.items():
        print(f"{name}: max relative gradient error {v:.3e}")
    print("PASS" if ok else "FAIL")
    return EXIT_OK if ok else EXIT_VALIDATION


def cmd_probe(args) -> int:
    base = Path(args.config).resolve().parent
    cfg = load_config(args.config, args.set)
    task = _load_or_build_task(cfg, base)
    q_emb, c_emb = _embeddings(cfg, task, base)
    section = cfg.get("probe", {})
    pair = section.get("languages") or list(task.languages)[:2]
    if len(pair) != 2:
        raise ConfigError("probe needs exactly two languages")

    ids, vectors, labels, kinds = [], [], [], []
    for q in task.questions:
        if q.language in pair:
            ids.append(q.question_id)
            vectors.append(q_emb.vector(q.question_id))
            labels.append(q.language)
            kinds.append("question")
    for c in task.candidates:
        if c.language in pair:
            ids.append(c.candidate_id)
            vectors.append(c_emb.vector(c.candidate_id))
            labels.append(c.language)
            kinds.append("candidate")
    if not ids:
        raise ConfigError(f"no items found for probe languages {pair}")

    projection = pca_2d(vectors, ids=ids, languages=labels, kinds=kinds)
    result = language_id_probe(
        vectors,
        labels,
        seed=int(cfg.get("seeds", {}).get("probe", 0)),
        epochs=int(section.get("epochs", 500)),
        lr=float(section.get("lr", 1.0)),
    )
    out_dir = _output_dir(cfg, base)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "projection.csv").write_text(projection.to_csv(), encoding="utf-8")
    payload = json.loads(result.to_json())
    payload["explained_variance"] = [round(v, 8) for v in projection.explained_variance]
    payload.update(_envelope(cfg))
    _write_json(out_dir / "probe.json", payload)
    print(f"probe accuracy {result.holdout_accuracy:.4f} ({pair[0]} vs {pair[1]}) -> {out_dir}")
    return EXIT_OK


def cmd_report(args) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    path = Path(args.matrix)
    if not path.exists():
        raise ConfigError(f"matrix file not found: {path}")
    with open(path, encoding="utf-8") as f:
        rows = list(csv.reader(f))
    if not rows or rows[0][0] != "language":
        raise ConfigError(f"{path} is not a language matrix CSV")
    langs = rows[0][1:]
    values = np.array(
        [[float(cell) if cell else np.nan for cell in row[1:]] for row in rows[1:]]
    )

    fig, ax = plt.subplots(figsize=(1.0 + 0.6 * len(langs), 1.0 + 0.6 * len(langs)))
    masked = np.ma.masked_invalid(values)
    im = ax.imshow(masked, cmap="viridis", vmin=0.0, vmax=max(1.0, float(masked.max())))
    ax.set_xticks(range(len(langs)), labels=langs)
    ax.set_yticks(range(len(langs)), labels=langs)
    ax.set_xlabel("answer language")
    ax.set_ylabel("question language")
    fig.colorbar(im, ax=ax, fraction=0.046)
    fig.tight_layout()
    out = Path(args.output) if args.output else path.with_suffix(".png")
    fig.savefig(out, dpi=120, metadata={"Software": "xlqa"})
    plt.close(fig)
    print(f"heatmap written to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="xlqa", description=__doc__)
    parser.add_argument("--version", action="version", version=f"xlqa {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, **kwargs):
        p = sub.add_parser(name, **kwargs)
        p.set_defaults(func=func)
        return p

    for name, func, needs_config in (
        ("convert", cmd_convert, True),
        ("eval", cmd_eval, True),
        ("bias", cmd_bias, True),
        ("zero-shot", cmd_zero_shot, True),
        ("batches", cmd_batches, True),
        ("loss-check", cmd_loss_check, False),
        ("probe", cmd_probe, True),
    ):
        p = add(name, func)
        p.add_argument("--config", required=needs_config, help="JSON config file")
        p.add_argument(
            "--set",
            action="append",
            default=[],
            metavar="KEY.PATH=VALUE",
            help="override a config value (JSON-parsed, falls back to string)",
        )
        if name in ("convert", "eval", "zero-shot", "batches", "loss-check"):
            p.add_argument("--output", help="output file path")
        if name == "convert":
            p.add_argument("--languages", help="comma-separated language subset")
        if name == "eval":
            p.add_argument("--zero-shot", action="store_true", dest="zero_shot")

    p = add("stats", cmd_stats, help="print per-language question/candidate counts")
    p.add_argument("--task", required=True, help="task JSON file")

    p = add("report", cmd_report, help="render a language-matrix CSV as a heatmap")
    p.add_argument("--matrix", required=True, help="matrix CSV file")
    p.add_argument("--output", help="output image path")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ConfigError, *_VALIDATION_ERRORS) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
