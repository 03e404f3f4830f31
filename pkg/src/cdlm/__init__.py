"""Chunk-distilled language modeling.

Builds trie-structured datastores of high-probability text chunks, interleaves
multi-token chunk retrieval with token-level generation from a pluggable base
LM, and scores sequences exactly under the mixed distribution.
"""

from .datastore import (
    ChunkDatastore,
    DatastoreError,
    DatastoreStats,
    EntryTokenTrie,
    TrieNode,
    build,
    deserialize,
    deserialize_from_file,
    serialize,
    serialize_to_file,
)
from .extraction import (
    AnnotatedSpan,
    ChunkRecord,
    ExtractionError,
    ExtractionParams,
    extract_chunks,
    extract_expert_chunks,
)
from .generation import (
    GenerationError,
    GenerationParams,
    GenerationResult,
    GenerationStep,
    fps,
    generate,
    lm_decode,
    tts,
)
from .lm import (
    LanguageModel,
    LmError,
    LmStepOutput,
    MockConstantLm,
    ReferenceLm,
    ReferenceLmParams,
    fit_reference_lm,
    load_reference_lm,
    mock_constant_lm,
    save_reference_lm,
    sequence_logprob,
)
from .metrics import BenchReport, EntityReport, bench, entity_coverage
from .retrieval import (
    ChunkProposal,
    RetrievalError,
    RetrievalParams,
    accept_greedy,
    map_similarity,
    propose,
)
from .scoring import (
    PositionProposal,
    ScoreTable,
    ScoringError,
    SequenceScore,
    base_ppl,
    brute_force_score,
    enumerate_paths,
    ppl,
    precompute_proposals,
    score_sequence,
    scripted_proposals,
)
from .vocab import (
    Vocabulary,
    VocabularyError,
    build_vocabulary,
    load_vocabulary,
    save_vocabulary,
    vocabulary_from_corpus,
)

__version__ = "0.1.0"
