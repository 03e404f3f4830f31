"""Chunk-interleaved text generation.

Each step either accepts a retrieved multi-token chunk or falls back to one
token from the base LM. The retrieval query at a step is the context vector
the LM produced when it predicted the previous token (not the vector after
consuming it), which matches how stored keys exclude their entry token.
One step costs one accounted LM forward pass either way: a transformer can
re-encode an accepted chunk's tokens in a single pass.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .datastore import ChunkDatastore
from .lm import LanguageModel
from .retrieval import EMPTY_PROPOSAL, RetrievalParams, accept_greedy, propose


class GenerationError(ValueError):
    pass


@dataclass(frozen=True)
class GenerationParams:
    eta: float = 0.8
    z_mode: str = "greedy"  # chunk accept decision: greedy | sample
    token_mode: str = "greedy"  # LM token decision: greedy | sample
    max_tokens: int = 100
    seed: int = 0
    temperature: float = 1.0  # token sampling only
    similarity_map: str = "piecewise"
    retrieval: bool = True  # False = never propose, pure base-LM decoding

    def __post_init__(self):
        if self.max_tokens < 1:
            raise GenerationError("max_tokens must be >= 1")
        if self.z_mode not in ("greedy", "sample"):
            raise GenerationError(f"unknown z_mode {self.z_mode!r}")
        if self.token_mode not in ("greedy", "sample"):
            raise GenerationError(f"unknown token_mode {self.token_mode!r}")
        if self.temperature <= 0:
            raise GenerationError("temperature must be > 0")

    def retrieval_params(self) -> RetrievalParams:
        return RetrievalParams(eta=self.eta, similarity_map=self.similarity_map)


@dataclass(frozen=True)
class GenerationStep:
    kind: str  # "lm_token" | "chunk"
    tokens: tuple[int, ...]  # tokens emitted by this step
    q: float
    similarity: float
    matched_node: int | None = None
    proposal_len: int = 0  # full proposed chunk length (emitted may be truncated)


@dataclass
class Counters:
    tokens_generated: int = 0
    lm_forward_passes: int = 0
    proposals_made: int = 0
    proposals_accepted: int = 0


@dataclass
class GenerationResult:
    tokens: list[int]  # generated continuation, prompt excluded
    steps: list[GenerationStep]
    counters: Counters
    step_times: list[float] = field(default_factory=list)
    wall_time: float = 0.0


def _sample_token(rng: np.random.Generator, probs: np.ndarray, params: GenerationParams) -> int:
    if params.token_mode == "greedy":
        return int(np.argmax(probs))
    p = np.asarray(probs, dtype=np.float64)
    if params.temperature != 1.0:
        p = np.power(p, 1.0 / params.temperature)
    total = p.sum()
    if not np.isfinite(total) or total <= 0:
        raise GenerationError("next-token distribution has no usable mass")
    p = p / total
    return int(rng.choice(len(p), p=p))


def _check_compat(lm: LanguageModel, store: ChunkDatastore | None) -> None:
    if store is None:
        return
    if store.d != lm.dim:
        raise GenerationError(
            f"datastore dimension {store.d} does not match LM dimension {lm.dim}"
        )
    if store.vocab_fingerprint != lm.vocab.fingerprint:
        raise GenerationError("datastore vocabulary fingerprint does not match the LM")


def generate(lm: LanguageModel, store: ChunkDatastore | None,
             prompt: Sequence[int], params: GenerationParams) -> GenerationResult:
    """Run the chunk-interleaved generative loop.

    The first continuation token always comes from the LM. Afterwards, each
    step proposes a chunk keyed by the last emitted token, decides acceptance
    (greedily or by a Bernoulli draw on q), and either appends the whole chunk
    or one LM token. Generation stops at max_tokens or at the first
    end-of-sequence token, including one inside an accepted chunk.
    """
    _check_compat(lm, store)
    for t in prompt:
        lm.vocab.check_id(t)
    rng = np.random.default_rng(params.seed)
    retrieval = params.retrieval and store is not None
    rparams = params.retrieval_params() if retrieval else None
    eos = lm.vocab.eos_id

    tokens = list(prompt)
    generated: list[int] = []
    steps: list[GenerationStep] = []
    counters = Counters()
    step_times: list[float] = []
    wall_start = time.perf_counter()

    out = lm.step(tokens)
    first = _sample_token(rng, out.probs, params)
    tokens.append(first)
    generated.append(first)
    steps.append(GenerationStep("lm_token", (first,), q=0.0, similarity=float("-inf")))
    counters.lm_forward_passes += 1
    step_times.append(time.perf_counter() - wall_start)
    query_vec = out.context_vector  # f(prefix before the token just emitted)

    while len(generated) < params.max_tokens and generated[-1] != eos:
        t0 = time.perf_counter()
        if retrieval:
            proposal = propose(query_vec, tokens[-1], store, rparams)
            counters.proposals_made += 1
        else:
            proposal = EMPTY_PROPOSAL
        if params.z_mode == "greedy":
            accept = not proposal.empty and accept_greedy(proposal.similarity, params.eta)
        else:
            # q == 0 is a deterministic reject and draws no randomness, so
            # pure-LM decoding stays draw-for-draw aligned.
            accept = proposal.q > 0.0 and rng.random() < proposal.q

        if accept:
            budget = params.max_tokens - len(generated)
            emitted = list(proposal.chunk[:budget])
            if eos is not None and eos in emitted:
                emitted = emitted[:emitted.index(eos) + 1]
            tokens.extend(emitted)
            generated.extend(emitted)
            counters.proposals_accepted += 1
            steps.append(GenerationStep("chunk", tuple(emitted), q=proposal.q,
                                        similarity=proposal.similarity,
                                        matched_node=proposal.matched_node,
                                        proposal_len=proposal.tau))
            counters.lm_forward_passes += 1
            if len(generated) < params.max_tokens and generated[-1] != eos:
                # One accounted pass re-encodes the chunk and yields the next query.
                query_vec = lm.step(tokens[:-1]).context_vector
        else:
            out = lm.step(tokens)
            counters.lm_forward_passes += 1
            tok = _sample_token(rng, out.probs, params)
            tokens.append(tok)
            generated.append(tok)
            steps.append(GenerationStep("lm_token", (tok,), q=proposal.q,
                                        similarity=proposal.similarity))
            query_vec = out.context_vector
        step_times.append(time.perf_counter() - t0)

    counters.tokens_generated = len(generated)
    return GenerationResult(tokens=generated, steps=steps, counters=counters,
                            step_times=step_times,
                            wall_time=time.perf_counter() - wall_start)


def lm_decode(lm: LanguageModel, prompt: Sequence[int],
              params: GenerationParams) -> GenerationResult:
    """Plain one-token-at-a-time base LM decoding, the efficiency baseline."""
    return generate(lm, None, prompt, params)


def fps(result: GenerationResult) -> float:
    """Fraction of forward passes saved relative to token-by-token decoding."""
    if result.counters.tokens_generated == 0:
        raise GenerationError("no tokens were generated")
    return 1.0 - result.counters.lm_forward_passes / result.counters.tokens_generated


def tts(result_cdlm: GenerationResult, result_base: GenerationResult) -> float:
    """Relative wall-clock time saved per generated token."""
    if result_cdlm.counters.tokens_generated == 0 or result_base.counters.tokens_generated == 0:
        raise GenerationError("no tokens were generated")
    per_tok_cdlm = result_cdlm.wall_time / result_cdlm.counters.tokens_generated
    per_tok_base = result_base.wall_time / result_base.counters.tokens_generated
    return 1.0 - per_tok_cdlm / per_tok_base
