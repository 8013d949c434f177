"""Small shared helpers: stable hashing, seed derivation, canonical JSON."""

from __future__ import annotations

import hashlib
import json

import numpy as np


def stable_digest(*parts, seed: int = 0) -> bytes:
    """Keyed 64-bit blake2b over the parts; stable across runs and platforms."""
    key = (seed & 0xFFFFFFFFFFFFFFFF).to_bytes(8, "little")
    h = hashlib.blake2b(key=key, digest_size=8)
    for part in parts:
        data = part if isinstance(part, bytes) else str(part).encode("utf-8")
        h.update(len(data).to_bytes(4, "little"))
        h.update(data)
    return h.digest()


def stable_u64(*parts, seed: int = 0) -> int:
    return int.from_bytes(stable_digest(*parts, seed=seed), "little")


def stable_rng(*parts, seed: int = 0) -> np.random.Generator:
    """RNG whose stream depends only on (seed, parts), not call order."""
    return np.random.default_rng(stable_u64(*parts, seed=seed))


def canonical_json(obj) -> str:
    """Deterministic JSON: sorted keys, compact separators, raw UTF-8."""
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def sha256_hex(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()
