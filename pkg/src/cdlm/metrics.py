"""Efficiency benchmarking and entity-coverage measurement.

Forward-pass savings are deterministic and asserted in tests; wall-clock
savings are reported only, since timing noise makes them unfit for CI.
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass, field
from typing import Sequence

from .datastore import ChunkDatastore
from .generation import GenerationParams, GenerationResult, fps, generate, lm_decode, tts
from .lm import LanguageModel


class MetricsError(ValueError):
    pass


@dataclass
class BenchReport:
    per_prompt_fps: list[float]
    per_prompt_tts: list[float]
    aggregate_fps: float  # 1 - total steps / total tokens
    mean_tts: float
    median_tts: float
    proposals_made: int
    proposals_accepted: int
    retrievals_per_generation: float
    datastore_utilization: float  # unique accepted nodes / total keyed nodes
    total_tokens: int
    total_steps: int
    cdlm_results: list[GenerationResult] = field(repr=False, default_factory=list)
    base_results: list[GenerationResult] = field(repr=False, default_factory=list)

    def to_dict(self) -> dict:
        return {
            "aggregate_fps": self.aggregate_fps,
            "per_prompt_fps": self.per_prompt_fps,
            "mean_tts": self.mean_tts,
            "median_tts": self.median_tts,
            "proposals_made": self.proposals_made,
            "proposals_accepted": self.proposals_accepted,
            "retrievals_per_generation": self.retrievals_per_generation,
            "datastore_utilization": self.datastore_utilization,
            "total_tokens": self.total_tokens,
            "total_steps": self.total_steps,
        }


@dataclass(frozen=True)
class EntityReport:
    avg_count: float  # mean entity mentions per generation
    unique_entities: int  # entities with at least one mention anywhere
    rank_frequency: tuple[tuple[str, int], ...]  # sorted by descending frequency

    def to_dict(self) -> dict:
        return {
            "avg_count": self.avg_count,
            "unique_entities": self.unique_entities,
            "rank_frequency": [list(pair) for pair in self.rank_frequency],
        }


def bench(prompts: Sequence[Sequence[int]], lm: LanguageModel,
          store: ChunkDatastore | None, params: GenerationParams,
          repetitions: int = 1) -> BenchReport:
    """Base vs chunk-interleaved generation over a prompt set.

    Counter metrics come from the first repetition (they are deterministic);
    wall-clock savings take the median over repetitions.
    """
    if not prompts:
        raise MetricsError("prompt set must be non-empty")
    if repetitions < 1:
        raise MetricsError("repetitions must be >= 1")
    cdlm_results: list[GenerationResult] = []
    base_results: list[GenerationResult] = []
    per_prompt_tts: list[float] = []
    for prompt in prompts:
        tts_reps = []
        for rep in range(repetitions):
            base_res = lm_decode(lm, prompt, params)
            cdlm_res = generate(lm, store, prompt, params)
            if rep == 0:
                base_results.append(base_res)
                cdlm_results.append(cdlm_res)
            tts_reps.append(tts(cdlm_res, base_res))
        per_prompt_tts.append(statistics.median(tts_reps))

    per_prompt_fps = [fps(r) for r in cdlm_results]
    total_tokens = sum(r.counters.tokens_generated for r in cdlm_results)
    total_steps = sum(r.counters.lm_forward_passes for r in cdlm_results)
    accepted_nodes = {
        step.matched_node
        for r in cdlm_results for step in r.steps
        if step.kind == "chunk" and step.matched_node is not None
    }
    keyed_nodes = len(store.node_chunks()) if store is not None else 0
    utilization = len(accepted_nodes) / keyed_nodes if keyed_nodes else 0.0
    proposals_made = sum(r.counters.proposals_made for r in cdlm_results)
    return BenchReport(
        per_prompt_fps=per_prompt_fps,
        per_prompt_tts=per_prompt_tts,
        aggregate_fps=1.0 - total_steps / total_tokens,
        mean_tts=statistics.mean(per_prompt_tts),
        median_tts=statistics.median(per_prompt_tts),
        proposals_made=proposals_made,
        proposals_accepted=sum(r.counters.proposals_accepted for r in cdlm_results),
        retrievals_per_generation=proposals_made / len(prompts),
        datastore_utilization=utilization,
        total_tokens=total_tokens,
        total_steps=total_steps,
        cdlm_results=cdlm_results,
        base_results=base_results,
    )


def entity_coverage(generations: Sequence[str], entities: Sequence[str],
                    case_sensitive: bool = True) -> EntityReport:
    """Exact substring matching of entity surfaces in generated text."""
    for e in entities:
        if not e:
            raise MetricsError("entity surfaces must be non-empty")
    texts = list(generations)
    if not case_sensitive:
        texts = [t.lower() for t in texts]
        entities = [e.lower() for e in entities]
    freq: dict[str, int] = {}
    for entity in entities:
        freq[entity] = sum(text.count(entity) for text in texts)
    total = sum(freq.values())
    avg = total / len(texts) if texts else 0.0
    unique = sum(1 for c in freq.values() if c > 0)
    ranked = tuple(sorted(freq.items(), key=lambda kv: (-kv[1], kv[0])))
    return EntityReport(avg_count=avg, unique_entities=unique, rank_frequency=ranked)
