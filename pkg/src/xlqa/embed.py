"""Unit-normalized embeddings: file formats, a deterministic toy encoder,
and a client for a remote dual-encoder service.

Vectors are stored as float32 (typical encoder export precision); all
metric accumulation downstream happens in float64.
"""

from __future__ import annotations

import json
import re
import struct
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
import requests

from .util import stable_rng, stable_u64

_MAGIC = b"EMB1"
_NORM_DRIFT_WARN = 1e-3
_LANG_MARKER = re.compile(r"\[[a-z]{2}\]")


class EmbeddingError(ValueError):
    """Bad vectors, missing ids, or a failed encoder exchange."""


def normalize(vector) -> np.ndarray:
    """Scale to unit L2 norm (float64). Zero or non-finite input is an error."""
    v = np.asarray(vector, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise EmbeddingError("cannot normalize a vector with NaN or Inf components")
    n = float(np.linalg.norm(v))
    if n == 0.0:
        raise EmbeddingError("cannot normalize a zero vector")
    return v / n


@dataclass
class EmbeddingSet:
    """Unit-normalized vectors keyed by question/candidate id."""

    kind: str  # "question" | "candidate"
    ids: tuple[str, ...]
    matrix: np.ndarray  # (n, dim) float32, unit rows

    def __post_init__(self):
        if self.kind not in ("question", "candidate"):
            raise EmbeddingError(f"unknown embedding kind {self.kind!r}")
        if len(self.ids) != self.matrix.shape[0]:
            raise EmbeddingError("id count does not match matrix rows")
        self._index = {id_: i for i, id_ in enumerate(self.ids)}
        if len(self._index) != len(self.ids):
            raise EmbeddingError("duplicate ids in embedding set")
        if len(self.ids):
            norms = np.linalg.norm(self.matrix.astype(np.float64), axis=1)
            worst = int(np.argmax(np.abs(norms - 1.0)))
            if abs(norms[worst] - 1.0) > 1e-6:
                raise EmbeddingError(
                    f"vector for {self.ids[worst]!r} is not unit-normalized"
                )

    @classmethod
    def from_vectors(cls, kind: str, items: Iterable[tuple[str, Sequence[float]]]) -> "EmbeddingSet":
        """Build a set, normalizing each vector; errors name the offending id."""
        ids: list[str] = []
        rows: list[np.ndarray] = []
        dim = None
        for id_, vec in items:
            try:
                unit = normalize(vec)
            except EmbeddingError as exc:
                raise EmbeddingError(f"id {id_!r}: {exc}") from exc
            if dim is None:
                dim = unit.shape[0]
            elif unit.shape[0] != dim:
                raise EmbeddingError(
                    f"id {id_!r}: dimension {unit.shape[0]} != expected {dim}"
                )
            ids.append(str(id_))
            rows.append(unit.astype(np.float32))
        matrix = np.stack(rows) if rows else np.zeros((0, 0), dtype=np.float32)
        return cls(kind, tuple(ids), matrix)

    @property
    def dim(self) -> int:
        return int(self.matrix.shape[1])

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, id_: str) -> bool:
        return id_ in self._index

    def vector(self, id_: str) -> np.ndarray:
        try:
            return self.matrix[self._index[id_]]
        except KeyError:
            raise EmbeddingError(f"no embedding for id {id_!r}") from None


def save_embeddings(emb: EmbeddingSet, path, fmt: str = "binary") -> None:
    """Write the binary ``EMB1`` format or JSONL (one object per line)."""
    path = Path(path)
    if fmt == "binary":
        with open(path, "wb") as f:
            f.write(_MAGIC)
            f.write(struct.pack("<II", emb.dim, len(emb)))
            for id_, row in zip(emb.ids, emb.matrix):
                encoded = id_.encode("utf-8")
                f.write(struct.pack("<H", len(encoded)))
                f.write(encoded)
                f.write(np.ascontiguousarray(row, dtype="<f4").tobytes())
    elif fmt == "jsonl":
        with open(path, "w", encoding="utf-8") as f:
            for id_, row in zip(emb.ids, emb.matrix):
                f.write(json.dumps({"id": id_, "vec": [float(x) for x in row]}) + "\n")
    else:
        raise EmbeddingError(f"unknown embedding format {fmt!r}")


def load_embeddings(path, expected_ids: set[str] | None = None, kind: str = "question") -> EmbeddingSet:
    """Load embeddings (binary ``EMB1`` or JSONL, sniffed by magic bytes).

    Vectors are re-normalized; drift beyond 1e-3 from unit norm triggers a
    warning since it suggests the exporter did not normalize.  Missing
    expected ids are an error naming up to 10 of them.
    """
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] == _MAGIC:
        pairs = list(_read_binary(raw, path))
    else:
        pairs = list(_read_jsonl(raw, path))

    drifted = [
        (id_, abs(float(np.linalg.norm(np.asarray(vec, dtype=np.float64))) - 1.0))
        for id_, vec in pairs
    ]
    worst = max(drifted, key=lambda t: t[1], default=None)
    if worst is not None and worst[1] > _NORM_DRIFT_WARN:
        warnings.warn(
            f"embedding for {worst[0]!r} deviates from unit norm by {worst[1]:.2e}; "
            "re-normalizing (exporter may not have normalized)",
            stacklevel=2,
        )

    emb = EmbeddingSet.from_vectors(kind, pairs)
    if expected_ids is not None:
        missing = sorted(set(expected_ids) - set(emb.ids))
        if missing:
            shown = ", ".join(missing[:10])
            extra = f" (+{len(missing) - 10} more)" if len(missing) > 10 else ""
            raise EmbeddingError(f"{len(missing)} embeddings missing: {shown}{extra}")
    return emb


def _read_binary(raw: bytes, path):
    if len(raw) < 12:
        raise EmbeddingError(f"truncated embedding file {path}")
    dim, count = struct.unpack_from("<II", raw, 4)
    offset = 12
    for _ in range(count):
        if offset + 2 > len(raw):
            raise EmbeddingError(f"truncated embedding file {path}")
        (id_len,) = struct.unpack_from("<H", raw, offset)
        offset += 2
        id_ = raw[offset : offset + id_len].decode("utf-8")
        offset += id_len
        end = offset + 4 * dim
        if end > len(raw):
            raise EmbeddingError(f"truncated embedding file {path} at id {id_!r}")
        vec = np.frombuffer(raw, dtype="<f4", count=dim, offset=offset)
        offset = end
        yield id_, vec


def _read_jsonl(raw: bytes, path):
    for line_no, line in enumerate(raw.decode("utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            yield str(obj["id"]), obj["vec"]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise EmbeddingError(f"{path}:{line_no}: bad embedding record: {exc}") from exc


def content_key(text: str) -> str:
    """Strip ``[xx]`` language-marker tokens and collapse whitespace.

    Synthetic fixtures tag parallel texts with a two-letter marker like
    ``[de]``; the key is what remains, so translations share a key.
    """
    return " ".join(_LANG_MARKER.sub(" ", text).split())


def _char_ngrams(key: str, n: int = 3) -> list[str]:
    padded = f"\x02\x02{key}\x03\x03"
    return [padded[i : i + n] for i in range(len(padded) - n + 1)]


def _hash_features(key: str, dim: int, seed: int) -> np.ndarray:
    vec = np.zeros(dim, dtype=np.float64)
    for gram in _char_ngrams(key):
        h = stable_u64("feat", gram, seed=seed)
        vec[h % dim] += 1.0 if (h >> 63) & 1 else -1.0
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:
        # signs can cancel on tiny inputs; fall back to a single stable bucket
        vec[stable_u64("fallback", key, seed=seed) % dim] = 1.0
        norm = 1.0
    return vec / norm


def language_anchor(language: str, dim: int, seed: int) -> np.ndarray:
    """Fixed seeded unit vector for a language."""
    rng = stable_rng("anchor", language, seed=seed)
    return normalize(rng.standard_normal(dim))


def toy_encode(
    text: str,
    language: str,
    dim: int = 64,
    seed: int = 0,
    language_offset_strength: float = 0.0,
) -> np.ndarray:
    """Deterministic synthetic encoder mixing content and a language anchor.

    Output = normalize((1-s) * content_features + s * language_anchor)
    with s = ``language_offset_strength``.  At s=0 the vector depends only
    on the content key; at s=1 it is the language anchor.
    """
    if dim < 2:
        raise EmbeddingError("toy encoder needs dim >= 2")
    s = float(language_offset_strength)
    if not 0.0 <= s <= 1.0:
        raise EmbeddingError("language_offset_strength must lie in [0, 1]")
    content = _hash_features(content_key(text), dim, seed)
    anchor = language_anchor(language, dim, seed)
    return normalize((1.0 - s) * content + s * anchor).astype(np.float32)


@dataclass(frozen=True)
class EncoderEndpoint:
    """Remote dual-encoder service location and batching parameters."""

    url: str
    batch_size: int = 32
    timeout: float = 30.0
    max_retries: int = 2
    parallelism: int = 1

    def __post_init__(self):
        if self.batch_size < 1:
            raise EmbeddingError("batch_size must be >= 1")


Transport = Callable[[str, dict, float], dict]


def _http_transport(url: str, payload: dict, timeout: float) -> dict:
    resp = requests.post(url, json=payload, timeout=timeout)
    resp.raise_for_status()
    return resp.json()


def encode_remote(
    endpoint: EncoderEndpoint,
    items: Sequence[tuple[str, str, str | None]],
    kind: str,
    transport: Transport | None = None,
) -> EmbeddingSet:
    """Encode (id, text, context) items via ``POST <url>/encode`` in chunks.

    Questions send ``context: null``; answers send the sentence plus its
    containing paragraph so the server can apply its own segment
    separation.  Vectors come back in request order and are normalized
    locally.  Transport failures are retried ``max_retries`` times.
    """
    if kind not in ("question", "candidate"):
        raise EmbeddingError(f"unknown embedding kind {kind!r}")
    wire_kind = "question" if kind == "question" else "answer"
    send = transport or _http_transport
    url = endpoint.url.rstrip("/") + "/encode"

    normalized_items = [(str(i), str(t), c) for i, t, c in items]
    if not normalized_items:
        return EmbeddingSet.from_vectors(kind, [])
    chunks = [
        normalized_items[i : i + endpoint.batch_size]
        for i in range(0, len(normalized_items), endpoint.batch_size)
    ]

    def fetch(chunk):
        payload = {
            "kind": wire_kind,
            "items": [{"id": i, "text": t, "context": c} for i, t, c in chunk],
        }
        last_exc = None
        for _ in range(endpoint.max_retries + 1):
            try:
                return send(url, payload, endpoint.timeout)
            except Exception as exc:  # noqa: BLE001 - transport errors vary by backend
                last_exc = exc
        raise EmbeddingError(
            f"encoder request failed after {endpoint.max_retries + 1} attempts: {last_exc}"
        ) from last_exc

    if endpoint.parallelism > 1:
        with ThreadPoolExecutor(max_workers=endpoint.parallelism) as pool:
            responses = list(pool.map(fetch, chunks))
    else:
        responses = [fetch(chunk) for chunk in chunks]

    dim = None
    pairs: list[tuple[str, Sequence[float]]] = []
    for chunk, resp in zip(chunks, responses):
        vectors = resp.get("vectors")
        if vectors is None or len(vectors) != len(chunk):
            got = 0 if vectors is None else len(vectors)
            raise EmbeddingError(
                f"encoder returned {got} vectors for {len(chunk)} items"
            )
        chunk_dim = int(resp.get("dim", len(vectors[0]) if vectors else 0))
        if dim is None:
            dim = chunk_dim
        elif chunk_dim != dim:
            raise EmbeddingError(f"encoder dim changed between chunks: {dim} vs {chunk_dim}")
        pairs.extend((item[0], vec) for item, vec in zip(chunk, vectors))
    return EmbeddingSet.from_vectors(kind, pairs)
