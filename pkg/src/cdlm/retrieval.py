"""Chunk proposal by similarity search inside one entry-token trie.

The query is the base LM's context vector from right before the entry token
was generated; candidates are every stored context vector in that entry
token's trie. Cosine similarity reduces to a dot product because both sides
are unit-norm. The best similarity is mapped to an acceptance probability by
a piecewise linear function with knee `eta`: scores below the knee map to 0,
and [eta, 1] maps linearly onto [0, 1]. Greedy acceptance takes the chunk
exactly when the score reaches (eta + 1) / 2, i.e. when the mapped
probability reaches 1/2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .datastore import ChunkDatastore

NO_SIMILARITY = float("-inf")  # sentinel when the entry token has no trie


class RetrievalError(ValueError):
    pass


@dataclass(frozen=True)
class RetrievalParams:
    eta: float = 0.8  # knee of the similarity -> acceptance probability map
    similarity_map: str = "piecewise"  # or "identity"

    def __post_init__(self):
        if not 0 <= self.eta < 1:
            raise RetrievalError("eta must lie in [0, 1); use retrieval-disabled mode for eta=1")
        if self.similarity_map not in ("piecewise", "identity"):
            raise RetrievalError(f"unknown similarity map {self.similarity_map!r}")


@dataclass(frozen=True)
class ChunkProposal:
    chunk: tuple[int, ...]
    tau: int  # chunk length; 0 means the empty proposal
    q: float  # acceptance probability in [0, 1]
    similarity: float  # best cosine similarity, NO_SIMILARITY if trie absent
    matched_node: int | None

    @property
    def empty(self) -> bool:
        return self.tau == 0


EMPTY_PROPOSAL = ChunkProposal(chunk=(), tau=0, q=0.0,
                               similarity=NO_SIMILARITY, matched_node=None)


def map_similarity(s_star: float, eta: float) -> float:
    """Piecewise linear similarity -> acceptance probability."""
    if eta >= 1.0:
        raise RetrievalError("eta=1 makes the map degenerate; use retrieval-disabled mode")
    if s_star < eta:
        return 0.0
    return min((s_star - eta) / (1.0 - eta), 1.0)


def accept_greedy(s_star: float, eta: float) -> bool:
    """Greedy acceptance: similarity reaches the (eta + 1) / 2 threshold (inclusive)."""
    return s_star >= (eta + 1.0) / 2.0


def _apply_map(s_star: float, params: RetrievalParams) -> float:
    if params.similarity_map == "identity":
        return min(max(s_star, 0.0), 1.0)
    return map_similarity(s_star, params.eta)


def propose(query: np.ndarray, entry_token: int, store: ChunkDatastore,
            params: RetrievalParams) -> ChunkProposal:
    """Best-matching chunk in the entry token's trie, or the empty proposal.

    Scans every key on every keyed node of that trie. Ties on similarity
    prefer the longer chunk, then the smaller node id. Queries are
    normalized at the door; stored vectors are float32 and the dot products
    accumulate in float64.
    """
    query = np.asarray(query, dtype=np.float64)
    if query.shape != (store.d,):
        raise RetrievalError(
            f"query has dimension {query.shape}, datastore expects ({store.d},)"
        )
    norm = math.sqrt(float(query @ query))
    if norm == 0.0:
        raise RetrievalError("query vector must be non-zero")
    if abs(norm - 1.0) > 1e-6:
        query = query / norm
    scan = store.trie_scan(entry_token)
    if scan is None or scan.n_keys == 0:
        return EMPTY_PROPOSAL
    best, winner_node, chunk = best_match(query, entry_token, store)
    q = _apply_map(best, params)
    if q == 0.0:
        # A zero-probability proposal is no proposal: tau = 0 <=> q = 0.
        return ChunkProposal(chunk=(), tau=0, q=0.0,
                             similarity=best, matched_node=None)
    return ChunkProposal(chunk=chunk, tau=len(chunk), q=q,
                         similarity=best, matched_node=winner_node)


def best_match(query: np.ndarray, entry_token: int,
               store: ChunkDatastore) -> tuple[float, int, tuple[int, ...]]:
    """Argmax over every key of the entry token's trie, before q-mapping.

    The caller guarantees the trie exists and the query is unit-norm.
    """
    scan = store.trie_scan(entry_token)
    assert scan is not None and scan.n_keys > 0
    sims = scan.vectors.astype(np.float64) @ np.asarray(query, dtype=np.float64)
    best = float(np.max(sims))
    tied = np.flatnonzero(sims == best)
    lens = scan.chunk_lens[tied]
    tied = tied[lens == lens.max()]
    winner_node = int(scan.node_ids[tied].min())
    return best, winner_node, scan.chunks[winner_node]
