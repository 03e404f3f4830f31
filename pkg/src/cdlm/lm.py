"""Base language model contract and a deterministic built-in reference model.

Every LM handle exposes, per step, a unit-norm context vector summarizing the
prefix and a probability distribution over the next token. The built-in
reference model is a Laplace-smoothed trigram model with hash-seeded random
sign embeddings, so all downstream math is exact and reproducible offline.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np

from .vocab import Vocabulary, VocabularyError


class LmError(ValueError):
    pass


@dataclass(frozen=True)
class LmStepOutput:
    """Context vector for the prefix plus the next-token distribution."""

    context_vector: np.ndarray  # float64, unit L2 norm
    probs: np.ndarray  # float64, length |V|


class LanguageModel(Protocol):
    vocab: Vocabulary
    dim: int
    name: str

    def step(self, prefix: Sequence[int]) -> LmStepOutput: ...


def _check_prefix(vocab: Vocabulary, prefix: Sequence[int]) -> None:
    n = len(vocab)
    for t in prefix:
        if not 0 <= t < n:
            raise LmError(f"token id {t} out of range for vocabulary of size {n}")


def unit_basis_vector(dim: int) -> np.ndarray:
    v = np.zeros(dim, dtype=np.float64)
    v[0] = 1.0
    return v


def sign_embeddings(vocab_size: int, dim: int, seed: int) -> np.ndarray:
    """Deterministic +-1/sqrt(d) embedding table.

    Each sign is a bit of a keyed blake2b digest of (seed, token id), so the
    table is identical across platforms and runs.
    """
    n_bytes = (dim + 7) // 8
    rows = []
    for w in range(vocab_size):
        buf = b""
        counter = 0
        while len(buf) < n_bytes:
            h = hashlib.blake2b(
                struct.pack("<qqq", seed, w, counter), digest_size=32
            ).digest()
            buf += h
            counter += 1
        bits = np.unpackbits(np.frombuffer(buf[:n_bytes], dtype=np.uint8))[:dim]
        rows.append(bits)
    signs = np.asarray(rows, dtype=np.float64) * 2.0 - 1.0
    return signs / math.sqrt(dim)


@dataclass(frozen=True)
class ReferenceLmParams:
    smoothing: float = 0.1  # Laplace constant, applied at query time
    decay: float = 0.7  # geometric weight on recent tokens in the context vector
    window: int = 8  # context vector depends only on this many trailing tokens
    dim: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.smoothing <= 0:
            raise LmError("smoothing constant must be > 0")
        if not 0 < self.decay < 1:
            raise LmError("decay must lie in (0, 1)")
        if self.window < 1 or self.dim < 1:
            raise LmError("window and dim must be >= 1")


class ReferenceLm:
    """Laplace-smoothed trigram model with decayed sign-embedding context vectors.

    The next-token distribution backs off by available context length:
    empty prefix -> smoothed unigram, one token -> smoothed bigram, otherwise
    the smoothed trigram on the last two tokens. The context vector is
    normalize(sum_k decay^k * e(prefix[-k])) over the trailing `window`
    tokens; an empty (or exactly cancelled) sum maps to the fixed unit basis
    vector so the function is total.
    """

    def __init__(self, vocab: Vocabulary, params: ReferenceLmParams,
                 uni: dict[int, int], bi: dict[tuple[int, int], int],
                 tri: dict[tuple[int, int, int], int]):
        self.vocab = vocab
        self.params = params
        self.dim = params.dim
        self.name = "reference-lm"
        self.uni = uni
        self.bi = bi
        self.tri = tri
        self._uni_total = sum(uni.values())
        self._bi_totals: dict[int, int] = {}
        self._tri_totals: dict[tuple[int, int], int] = {}
        self._bi_next: dict[int, dict[int, int]] = {}
        self._tri_next: dict[tuple[int, int], dict[int, int]] = {}
        for (a, b), c in bi.items():
            self._bi_totals[a] = self._bi_totals.get(a, 0) + c
            self._bi_next.setdefault(a, {})[b] = c
        for (a, b, c3), c in tri.items():
            self._tri_totals[(a, b)] = self._tri_totals.get((a, b), 0) + c
            self._tri_next.setdefault((a, b), {})[c3] = c
        self._emb = sign_embeddings(len(vocab), params.dim, params.seed)
        self._uni_probs = self._smoothed(
            {w: c for w, c in uni.items()}, self._uni_total
        )

    def _smoothed(self, next_counts: dict[int, int], total: int) -> np.ndarray:
        a = self.params.smoothing
        v = len(self.vocab)
        probs = np.full(v, a / (total + a * v), dtype=np.float64)
        for w, c in next_counts.items():
            probs[w] = (c + a) / (total + a * v)
        return probs

    def distribution(self, prefix: Sequence[int]) -> np.ndarray:
        _check_prefix(self.vocab, prefix)
        if len(prefix) == 0:
            return self._uni_probs.copy()
        if len(prefix) == 1:
            w = prefix[-1]
            return self._smoothed(self._bi_next.get(w, {}), self._bi_totals.get(w, 0))
        ctx = (prefix[-2], prefix[-1])
        return self._smoothed(self._tri_next.get(ctx, {}), self._tri_totals.get(ctx, 0))

    def context_vector(self, prefix: Sequence[int]) -> np.ndarray:
        _check_prefix(self.vocab, prefix)
        k = min(len(prefix), self.params.window)
        if k == 0:
            return unit_basis_vector(self.dim)
        acc = np.zeros(self.dim, dtype=np.float64)
        weight = 1.0
        for i in range(1, k + 1):
            weight *= self.params.decay
            acc += weight * self._emb[prefix[len(prefix) - i]]
        norm = math.sqrt(float(acc @ acc))
        if norm == 0.0:
            return unit_basis_vector(self.dim)
        return acc / norm

    def step(self, prefix: Sequence[int]) -> LmStepOutput:
        return LmStepOutput(self.context_vector(prefix), self.distribution(prefix))


def fit_reference_lm(corpus: Sequence[Sequence[int]], vocab: Vocabulary,
                     params: ReferenceLmParams | None = None) -> ReferenceLm:
    """Count n-grams over token-id sequences and return the fitted model."""
    params = params or ReferenceLmParams()
    if not corpus or all(len(doc) == 0 for doc in corpus):
        raise LmError("corpus must contain at least one token")
    uni: dict[int, int] = {}
    bi: dict[tuple[int, int], int] = {}
    tri: dict[tuple[int, int, int], int] = {}
    for doc in corpus:
        _check_prefix(vocab, doc)
        for i, w in enumerate(doc):
            uni[w] = uni.get(w, 0) + 1
            if i >= 1:
                key2 = (doc[i - 1], w)
                bi[key2] = bi.get(key2, 0) + 1
            if i >= 2:
                key3 = (doc[i - 2], doc[i - 1], w)
                tri[key3] = tri.get(key3, 0) + 1
    return ReferenceLm(vocab, params, uni, bi, tri)


def sequence_logprob(lm: LanguageModel, tokens: Sequence[int]) -> float:
    """Chain-rule log probability of the whole sequence under the LM."""
    if len(tokens) == 0:
        raise LmError("sequence must be non-empty")
    total = 0.0
    for i, tok in enumerate(tokens):
        probs = lm.step(tokens[:i]).probs
        lm_checked_id(lm, tok)
        p = float(probs[tok])
        total += math.log(p) if p > 0.0 else float("-inf")
    return total


def lm_checked_id(lm: LanguageModel, token_id: int) -> int:
    if not 0 <= token_id < len(lm.vocab):
        raise LmError(f"token id {token_id} out of range for vocabulary of size {len(lm.vocab)}")
    return token_id


ContextFn = Callable[[tuple[int, ...]], np.ndarray]


class MockConstantLm:
    """Test fixture: every token gets the same probability at every step.

    The per-token value is intentionally not required to normalize; scripted
    probability mass is the point of the fixture. Context vectors come from a
    caller-provided deterministic function so retrieval similarities can be
    scripted too.
    """

    def __init__(self, per_token_prob: float, vocab: Vocabulary,
                 context_fn: ContextFn | None = None, dim: int = 8):
        self.vocab = vocab
        self.name = f"mock-constant({per_token_prob})"
        self.per_token_prob = float(per_token_prob)
        if context_fn is None:
            self.dim = dim
            self._context_fn: ContextFn = lambda prefix: unit_basis_vector(dim)
        else:
            self.dim = len(np.asarray(context_fn(())))
            self._context_fn = context_fn

    def step(self, prefix: Sequence[int]) -> LmStepOutput:
        _check_prefix(self.vocab, prefix)
        probs = np.full(len(self.vocab), self.per_token_prob, dtype=np.float64)
        vec = np.asarray(self._context_fn(tuple(prefix)), dtype=np.float64)
        return LmStepOutput(vec, probs)


def mock_constant_lm(per_token_prob: float, vocab: Vocabulary,
                     context_fn: ContextFn | None = None, dim: int = 8) -> MockConstantLm:
    return MockConstantLm(per_token_prob, vocab, context_fn=context_fn, dim=dim)


def save_reference_lm(lm: ReferenceLm, path) -> None:
    payload = {
        "format": "cdlm-reference-lm",
        "version": 1,
        "params": {
            "smoothing": lm.params.smoothing,
            "decay": lm.params.decay,
            "window": lm.params.window,
            "dim": lm.params.dim,
            "seed": lm.params.seed,
        },
        "vocab": list(lm.vocab.surfaces),
        "counts": {
            "uni": {str(w): c for w, c in sorted(lm.uni.items())},
            "bi": {f"{a},{b}": c for (a, b), c in sorted(lm.bi.items())},
            "tri": {f"{a},{b},{c3}": c for (a, b, c3), c in sorted(lm.tri.items())},
        },
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, sort_keys=True, separators=(",", ":"))
        f.write("\n")


def load_reference_lm(path) -> ReferenceLm:
    with open(path, encoding="utf-8") as f:
        payload = json.load(f)
    if payload.get("format") != "cdlm-reference-lm":
        raise LmError(f"{path}: not a serialized reference LM")
    try:
        params = ReferenceLmParams(**payload["params"])
        vocab = Vocabulary(tuple(payload["vocab"]))
        counts = payload["counts"]
        uni = {int(k): v for k, v in counts["uni"].items()}
        bi = {tuple(map(int, k.split(","))): v for k, v in counts["bi"].items()}
        tri = {tuple(map(int, k.split(","))): v for k, v in counts["tri"].items()}
    except (KeyError, TypeError, VocabularyError) as e:
        raise LmError(f"{path}: malformed reference LM file: {e}") from e
    return ReferenceLm(vocab, params, uni, bi, tri)
