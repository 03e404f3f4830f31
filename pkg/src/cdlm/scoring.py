"""Exact sequence probabilities under the chunk-interleaved mixture.

Marginalizing the per-position accept/reject choices is done with a backward
dynamic program over two quantities per position n (1-based):

  alpha[n] = p(x[n:N] | chunk accepted at n)
           = match(n) * (alpha[n+tau] q[n+tau] + beta[n+tau] (1 - q[n+tau]))
  beta[n]  = p(x[n:N] | LM token at n)
           = p_lm(x[n]) * (alpha[n+1] q[n+1] + beta[n+1] (1 - q[n+1]))

with alpha[N+1] = beta[N+1] = 1 and q[N+1] = 0, so a chunk ending exactly at
the boundary contributes no further factors, and a chunk overshooting the
boundary contributes its prefix-match indicator alone. The marginal is
p_lm(x[1]) * (alpha[2] q[2] + beta[2] (1 - q[2])). Everything runs in log
space; a brute-force path enumeration over the same proposals serves as an
independent oracle for small N.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .datastore import ChunkDatastore
from .lm import LanguageModel, sequence_logprob
from .retrieval import RetrievalParams, propose

NEG_INF = float("-inf")
ORACLE_MAX_LEN = 20


class ScoringError(ValueError):
    pass


@dataclass(frozen=True)
class PositionProposal:
    """Cached chunk proposal at one position of a fixed sequence.

    `match` is the indicator the recursion uses at this position: a full
    chunk match when the chunk fits before the boundary, otherwise a prefix
    match against the remaining tokens. `prefix_match_len` counts leading
    chunk tokens agreeing with the sequence, for diagnostics.
    """

    position: int  # 1-based, in 2..N
    chunk: tuple[int, ...]
    tau: int
    q: float
    match: bool
    prefix_match_len: int

    @property
    def overshoots(self) -> bool:
        return self.tau > 0 and self.prefix_match_len < self.tau and self.match


@dataclass
class ScoreTable:
    log_alpha: np.ndarray  # index n in 2..N (index 0..1 unused)
    log_beta: np.ndarray
    q: np.ndarray
    lm_logprobs: np.ndarray  # index n in 1..N

    def alpha(self, n: int) -> float:
        return math.exp(self.log_alpha[n])

    def beta(self, n: int) -> float:
        return math.exp(self.log_beta[n])


@dataclass(frozen=True)
class SequenceScore:
    logprob: float
    num_tokens: int

    @property
    def ppl(self) -> float:
        return math.exp(-self.logprob / self.num_tokens)


def _empty_proposal_at(n: int) -> PositionProposal:
    return PositionProposal(position=n, chunk=(), tau=0, q=0.0,
                            match=False, prefix_match_len=0)


def precompute_proposals(sequence: Sequence[int], store: ChunkDatastore | None,
                         lm: LanguageModel, eta: float,
                         similarity_map: str = "piecewise") -> list[PositionProposal]:
    """Proposals for positions 2..N; deterministic given sequence, store, eta.

    The proposal at position n queries with the vector that predicted the
    entry token x[n-1], so it depends only on x[<n-1] and never on later
    tokens.
    """
    n_tokens = len(sequence)
    if n_tokens < 1:
        raise ScoringError("sequence must be non-empty")
    if store is not None and store.vocab_fingerprint != lm.vocab.fingerprint:
        raise ScoringError("datastore vocabulary fingerprint does not match the LM")
    proposals: list[PositionProposal] = []
    if store is None:
        return [_empty_proposal_at(n) for n in range(2, n_tokens + 1)]
    params = RetrievalParams(eta=eta, similarity_map=similarity_map)
    for n in range(2, n_tokens + 1):
        query = lm.step(sequence[:n - 2]).context_vector
        prop = propose(query, sequence[n - 2], store, params)
        proposals.append(_position_proposal(sequence, n, prop.chunk, prop.q))
    return proposals


def _position_proposal(sequence: Sequence[int], n: int,
                       chunk: tuple[int, ...], q: float) -> PositionProposal:
    tau = len(chunk)
    if tau == 0:
        return _empty_proposal_at(n)
    n_tokens = len(sequence)
    avail = n_tokens - n + 1  # tokens left from position n through N
    compare = min(tau, avail)
    prefix_len = 0
    for k in range(compare):
        if sequence[n - 1 + k] != chunk[k]:
            break
        prefix_len += 1
    match = prefix_len == compare
    return PositionProposal(position=n, chunk=chunk, tau=tau, q=q,
                            match=match, prefix_match_len=prefix_len)


def scripted_proposals(sequence: Sequence[int],
                       chunks_at: dict[int, tuple[tuple[int, ...], float]]) -> list[PositionProposal]:
    """Hand-written proposals for fixtures: position -> (chunk, q)."""
    out = []
    for n in range(2, len(sequence) + 1):
        if n in chunks_at:
            chunk, q = chunks_at[n]
            out.append(_position_proposal(sequence, n, tuple(chunk), q))
        else:
            out.append(_empty_proposal_at(n))
    return out


def _lm_logprobs(sequence: Sequence[int], lm: LanguageModel) -> np.ndarray:
    out = np.zeros(len(sequence) + 1, dtype=np.float64)  # index 1..N
    for i, tok in enumerate(sequence):
        p = float(lm.step(sequence[:i]).probs[tok])
        out[i + 1] = math.log(p) if p > 0.0 else NEG_INF
    return out


def _log_q(q: float) -> tuple[float, float]:
    lq = math.log(q) if q > 0.0 else NEG_INF
    l1mq = math.log1p(-q) if q < 1.0 else NEG_INF
    return lq, l1mq


def score_sequence(sequence: Sequence[int], proposals: Sequence[PositionProposal],
                   lm: LanguageModel) -> tuple[SequenceScore, ScoreTable]:
    """Backward DP for the exact log marginal probability of the sequence."""
    n_tokens = len(sequence)
    if n_tokens < 1:
        raise ScoringError("sequence must be non-empty")
    if len(proposals) != max(n_tokens - 1, 0):
        raise ScoringError("proposals must cover positions 2..N of this sequence")
    lm_lp = _lm_logprobs(sequence, lm)

    log_alpha = np.full(n_tokens + 2, NEG_INF, dtype=np.float64)
    log_beta = np.full(n_tokens + 2, NEG_INF, dtype=np.float64)
    qs = np.zeros(n_tokens + 2, dtype=np.float64)
    for prop in proposals:
        qs[prop.position] = prop.q

    def combine(m: int) -> float:
        if m == n_tokens + 1:
            return 0.0
        lq, l1mq = _log_q(qs[m])
        return float(np.logaddexp(log_alpha[m] + lq, log_beta[m] + l1mq))

    for n in range(n_tokens, 1, -1):
        prop = proposals[n - 2]
        log_beta[n] = lm_lp[n] + combine(n + 1)
        if prop.tau == 0 or not prop.match:
            log_alpha[n] = NEG_INF
        elif n + prop.tau <= n_tokens + 1:
            log_alpha[n] = combine(n + prop.tau)
        else:
            log_alpha[n] = 0.0  # overshooting chunk, prefix already matched
    logprob = lm_lp[1] + combine(2)
    if math.isnan(logprob):
        raise ScoringError("NaN encountered in the scoring recursion")
    table = ScoreTable(log_alpha=log_alpha, log_beta=log_beta, q=qs, lm_logprobs=lm_lp)
    return SequenceScore(logprob=logprob, num_tokens=n_tokens), table


def _oracle_continue(sequence: Sequence[int], proposals: Sequence[PositionProposal],
                     lm_probs: Sequence[float], pos: int) -> float:
    """Probability of generating x[pos:N], position pos being a fresh decision."""
    n_tokens = len(sequence)
    if pos > n_tokens:
        return 1.0
    prop = proposals[pos - 2]
    total = (1.0 - prop.q) * lm_probs[pos] * _oracle_continue(
        sequence, proposals, lm_probs, pos + 1)
    if prop.q > 0.0 and prop.match:
        if pos + prop.tau <= n_tokens + 1:
            total += prop.q * _oracle_continue(sequence, proposals, lm_probs,
                                               pos + prop.tau)
        else:
            total += prop.q  # chunk covers the rest of the sequence and beyond
    return total


def brute_force_score(sequence: Sequence[int], proposals: Sequence[PositionProposal],
                      lm: LanguageModel) -> float:
    """Independent oracle: explicit enumeration of accept/reject interleavings.

    Linear-space recursion over paths, no shared code with the DP. Guarded to
    short sequences because the path count grows exponentially.
    """
    n_tokens = len(sequence)
    if n_tokens > ORACLE_MAX_LEN:
        raise ScoringError(f"oracle is limited to sequences of length <= {ORACLE_MAX_LEN}")
    if n_tokens < 1:
        raise ScoringError("sequence must be non-empty")
    lm_probs = np.exp(_lm_logprobs(sequence, lm))
    return float(lm_probs[1]) * _oracle_continue(sequence, proposals, lm_probs, 2)


def enumerate_paths(sequence: Sequence[int], proposals: Sequence[PositionProposal],
                    lm: LanguageModel) -> Iterator[tuple[tuple[str, ...], float]]:
    """Every generation path consistent with the sequence, with its probability.

    A path is a tuple of step labels, "lm:<pos>" or "chunk:<pos>+<tau>"; the
    probabilities sum to brute_force_score.
    """
    n_tokens = len(sequence)
    if n_tokens > ORACLE_MAX_LEN:
        raise ScoringError(f"oracle is limited to sequences of length <= {ORACLE_MAX_LEN}")
    lm_probs = np.exp(_lm_logprobs(sequence, lm))

    def walk(pos: int, acc: float, labels: tuple[str, ...]):
        if pos > n_tokens:
            yield labels, acc
            return
        prop = proposals[pos - 2]
        lm_branch = (1.0 - prop.q) * float(lm_probs[pos])
        yield from walk(pos + 1, acc * lm_branch, labels + (f"lm:{pos}",))
        if prop.q > 0.0 and prop.match:
            label = labels + (f"chunk:{pos}+{prop.tau}",)
            if pos + prop.tau <= n_tokens + 1:
                yield from walk(pos + prop.tau, acc * prop.q, label)
            else:
                yield label, acc * prop.q
    yield from walk(2, float(lm_probs[1]), (f"lm:{1}",))


def ppl(sequences: Sequence[Sequence[int]], store: ChunkDatastore | None,
        lm: LanguageModel, eta: float, similarity_map: str = "piecewise") -> float:
    """Corpus perplexity: exp(-total logprob / total tokens)."""
    if not sequences:
        raise ScoringError("at least one sequence is required")
    total_lp = 0.0
    total_tokens = 0
    for seq in sequences:
        proposals = precompute_proposals(seq, store, lm, eta, similarity_map)
        score, _ = score_sequence(seq, proposals, lm)
        total_lp += score.logprob
        total_tokens += score.num_tokens
    return math.exp(-total_lp / total_tokens)


def base_ppl(sequences: Sequence[Sequence[int]], lm: LanguageModel) -> float:
    """Pure base-LM perplexity via the chain rule, independent of the DP."""
    if not sequences:
        raise ScoringError("at least one sequence is required")
    total_lp = 0.0
    total_tokens = 0
    for seq in sequences:
        total_lp += sequence_logprob(lm, seq)
        total_tokens += len(seq)
    return math.exp(-total_lp / total_tokens)
