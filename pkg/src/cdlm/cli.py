"""Command-line interface: build datastores, generate, score, benchmark, inspect.

Output is line-delimited JSON on stdout; diagnostics go to stderr. Exit
codes: 0 success, 2 usage error, 3 data/format error, 4 bridge transport
error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys

from . import datastore as ds
from . import scoring
from .bridge_client import BridgeConfigError, BridgeLm, BridgeTransportError
from .config import ConfigError, load_config_file, log_resolved, resolve
from .extraction import (
    AnnotatedSpan,
    ExtractionError,
    ExtractionParams,
    extract_chunks,
    extract_expert_chunks,
)
from .generation import GenerationParams, fps, generate
from .lm import (
    LmError,
    fit_reference_lm,
    load_reference_lm,
    ReferenceLmParams,
    save_reference_lm,
)
from .metrics import MetricsError, bench, entity_coverage
from .vocab import Vocabulary, VocabularyError, load_vocabulary, vocabulary_from_corpus, save_vocabulary

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_TRANSPORT = 4

DATA_ERRORS = (
    LmError, VocabularyError, ExtractionError, ds.DatastoreError,
    scoring.ScoringError, MetricsError, ConfigError, BridgeConfigError,
    OSError, json.JSONDecodeError, ValueError,
)


class CliError(ValueError):
    pass


def _emit(obj: dict, pretty: bool) -> None:
    if pretty:
        print(json.dumps(obj, indent=2, sort_keys=True))
    else:
        print(json.dumps(obj, sort_keys=True))


def _load_lm(spec: str, vocab_path: str | None):
    """`builtin:PATH` loads a serialized reference LM; `bridge:CMD` spawns a bridge."""
    kind, _, rest = spec.partition(":")
    if kind == "builtin":
        if not rest:
            raise CliError("--lm builtin: requires a model path")
        return load_reference_lm(rest)
    if kind == "bridge":
        if not rest:
            raise CliError("--lm bridge: requires a command line")
        if not vocab_path:
            raise CliError("bridge LMs require --vocab")
        return BridgeLm(rest, load_vocabulary(vocab_path))
    raise CliError(f"unknown LM spec {spec!r}; expected builtin:PATH or bridge:CMD")


def _read_token_docs(path: str, vocab: Vocabulary) -> list[list[int]]:
    docs = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                docs.append(vocab.encode(line))
    return docs


def _load_spans(path: str) -> list[AnnotatedSpan]:
    spans = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            try:
                spans.append(AnnotatedSpan(doc=int(obj["doc"]), start=int(obj["start"]),
                                           end=int(obj["end"])))
            except (KeyError, TypeError) as e:
                raise ExtractionError(f"{path}:{lineno}: malformed span: {e}") from e
    return spans


def _trained_defaults() -> dict:
    return {
        "gamma": 0.9,
        "eta": 0.8,
        "window": 512,
        "stride": 448,
        "context_len": 64,
        "min_run_len": 2,
        "seed": 0,
        "max_tokens": 100,
        "seq_len": 512,
        "similarity_map": "piecewise",
        "mode": "greedy",
        "temperature": 1.0,
    }


def _resolved(args: argparse.Namespace, keys: list[str]) -> dict:
    defaults = _trained_defaults()
    file_values = load_config_file(args.config) if getattr(args, "config", None) else {}
    for key in file_values:
        if key not in defaults:
            raise ConfigError(f"unknown configuration key {key!r}")
    cli_values = {k: getattr(args, k, None) for k in keys}
    merged = resolve({k: defaults[k] for k in keys if k in defaults},
                     {k: v for k, v in file_values.items() if k in keys}, cli_values)
    log_resolved(merged)
    return merged


def cmd_fit_lm(args) -> int:
    with open(args.corpus, encoding="utf-8") as f:
        text = f.read()
    if args.vocab:
        vocab = load_vocabulary(args.vocab)
    else:
        vocab = vocabulary_from_corpus(text)
        if args.save_vocab:
            save_vocabulary(vocab, args.save_vocab)
    docs = [vocab.encode(line) for line in text.splitlines() if line.strip()]
    params = ReferenceLmParams(seed=args.seed or 0, dim=args.dim) if args.dim else ReferenceLmParams(seed=args.seed or 0)
    lm = fit_reference_lm(docs, vocab, params)
    save_reference_lm(lm, args.out)
    _emit({"model": str(args.out), "vocab_size": len(vocab),
           "vocab_fingerprint": vocab.fingerprint, "dim": lm.dim}, args.pretty)
    return EXIT_OK


def cmd_build(args) -> int:
    cfg = _resolved(args, ["gamma", "window", "stride", "context_len", "min_run_len"])
    base = _load_lm(args.base, args.vocab)
    vocab = base.vocab
    docs = _read_token_docs(args.corpus, vocab)
    corpus_hash = hashlib.sha256(
        b"\x00".join(bytes(str(d), "ascii") for d in docs)).hexdigest()
    counts = {"documents": len(docs), "tokens": sum(len(d) for d in docs)}
    if args.spans:
        if args.gamma is not None:
            print("warning: --gamma is ignored in expert (span) mode", file=sys.stderr)
        spans = _load_spans(args.spans)
        records, skipped = extract_expert_chunks(docs, spans, base, cfg["context_len"])
        if skipped:
            print(f"warning: skipped {skipped} span(s) starting at a document start",
                  file=sys.stderr)
        meta = {"mode": "expert", "base": base.name, "num_spans": len(spans),
                "corpus_hash": corpus_hash, "counts": counts}
    else:
        teacher = base if args.teacher in (None, args.base) else _load_lm(args.teacher, args.vocab)
        params = ExtractionParams(gamma=cfg["gamma"], window=cfg["window"],
                                  stride=cfg["stride"], context_len=cfg["context_len"],
                                  min_run_len=cfg["min_run_len"])
        records = extract_chunks(docs, teacher, base, params)
        mode = "self" if teacher is base else "knowledge"
        meta = {"mode": mode, "gamma": cfg["gamma"], "teacher": teacher.name,
                "base": base.name, "corpus_hash": corpus_hash, "counts": counts}
    store = ds.build(records, base.dim, vocab, meta=meta)
    if store.num_chunks() == 0:
        print("warning: extraction produced an empty datastore", file=sys.stderr)
    ds.serialize_to_file(store, args.out)
    stats = store.stats()
    _emit({"out": str(args.out), "num_chunks": stats.num_chunks,
           "num_tries": stats.num_tries}, args.pretty)
    return EXIT_OK


def _load_store_for(args, lm) -> tuple[ds.ChunkDatastore | None, float, bool]:
    """Returns (store, eta, retrieval_enabled); --eta 1 disables retrieval."""
    cfg = _resolved(args, ["eta", "seed", "max_tokens", "similarity_map", "mode",
                           "temperature", "seq_len"])
    eta = cfg["eta"]
    if eta == 1.0:
        print("note: eta=1 disables retrieval; scoring/generation reduce to the base LM",
              file=sys.stderr)
        return None, 0.0, False
    store = None
    if args.datastore:
        store = ds.deserialize_from_file(args.datastore)
        if store.vocab_fingerprint != lm.vocab.fingerprint:
            raise ds.DatastoreError(
                "datastore vocabulary fingerprint does not match the LM vocabulary"
            )
    return store, eta, True


def cmd_generate(args) -> int:
    lm = _load_lm(args.lm, args.vocab)
    store, eta, retrieval = _load_store_for(args, lm)
    params = GenerationParams(
        eta=eta, z_mode=args.mode or "greedy", token_mode=args.mode or "greedy",
        max_tokens=args.max_tokens or 100, seed=args.seed or 0,
        temperature=args.temperature or 1.0,
        similarity_map=args.similarity_map or "piecewise",
        retrieval=retrieval,
    )
    with open(args.prompt_file, encoding="utf-8") as f:
        prompts = [lm.vocab.encode(line) for line in f.read().splitlines() if line.strip()]
    for prompt in prompts:
        result = generate(lm, store, prompt, params)
        _emit({
            "tokens": result.tokens,
            "text": lm.vocab.decode(result.tokens),
            "steps": [
                {"kind": s.kind, "tokens": list(s.tokens), "q": s.q,
                 "similarity": None if s.similarity == float("-inf") else s.similarity,
                 "matched_node": s.matched_node}
                for s in result.steps
            ],
            "counters": {
                "tokens_generated": result.counters.tokens_generated,
                "lm_forward_passes": result.counters.lm_forward_passes,
                "proposals_made": result.counters.proposals_made,
                "proposals_accepted": result.counters.proposals_accepted,
            },
            "fps": fps(result),
        }, args.pretty)
    return EXIT_OK


def _split_sequences(tokens: list[int], seq_len: int) -> list[list[int]]:
    return [tokens[i:i + seq_len] for i in range(0, len(tokens), seq_len) if tokens[i:i + seq_len]]


def cmd_score(args) -> int:
    lm = _load_lm(args.lm, args.vocab)
    store, eta, retrieval = _load_store_for(args, lm)
    seq_len = args.seq_len or 512
    sequences: list[list[int]] = []
    with open(args.input, encoding="utf-8") as f:
        for line in f.read().splitlines():
            if line.strip():
                sequences.extend(_split_sequences(lm.vocab.encode(line), seq_len))
    if not retrieval or store is None:
        value = scoring.base_ppl(sequences, lm)
    else:
        value = scoring.ppl(sequences, store, lm, eta,
                            args.similarity_map or "piecewise")
    _emit({"ppl": value, "num_sequences": len(sequences),
           "total_tokens": sum(len(s) for s in sequences)}, args.pretty)
    return EXIT_OK


def cmd_bench(args) -> int:
    lm = _load_lm(args.lm, args.vocab)
    store, eta, retrieval = _load_store_for(args, lm)
    params = GenerationParams(
        eta=eta, z_mode=args.mode or "greedy", token_mode=args.mode or "greedy",
        max_tokens=args.max_tokens or 100, seed=args.seed or 0,
        retrieval=retrieval,
    )
    with open(args.prompt_file, encoding="utf-8") as f:
        prompts = [lm.vocab.encode(line) for line in f.read().splitlines() if line.strip()]
    report = bench(prompts, lm, store, params, repetitions=args.repetitions or 1)
    _emit(report.to_dict(), args.pretty)
    return EXIT_OK


def cmd_stats(args) -> int:
    store = ds.deserialize_from_file(args.datastore)
    s = store.stats()
    _emit({"num_chunks": s.num_chunks, "num_tries": s.num_tries,
           "avg_pct_per_trie": s.avg_pct_per_trie, "max_depth": s.max_depth},
          args.pretty)
    return EXIT_OK


def cmd_entities(args) -> int:
    with open(args.generations, encoding="utf-8") as f:
        generations = [line for line in f.read().splitlines() if line.strip()]
    with open(args.entities, encoding="utf-8") as f:
        entities = [line for line in f.read().splitlines() if line.strip()]
    report = entity_coverage(generations, entities,
                             case_sensitive=not args.ignore_case)
    _emit(report.to_dict(), args.pretty)
    if args.csv_out:
        with open(args.csv_out, "w", encoding="utf-8") as f:
            f.write("rank,entity,frequency\n")
            for rank, (entity, freq) in enumerate(report.rank_frequency, 1):
                f.write(f"{rank},{json.dumps(entity)},{freq}\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cdlm", description=__doc__)
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--pretty", action="store_true", help="indent JSON output")
    sub = p.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit-lm", help="fit and save a built-in reference LM")
    fit.add_argument("--corpus", required=True)
    fit.add_argument("--vocab")
    fit.add_argument("--save-vocab", dest="save_vocab")
    fit.add_argument("--out", required=True)
    fit.add_argument("--seed", type=int)
    fit.add_argument("--dim", type=int)
    fit.set_defaults(func=cmd_fit_lm)

    b = sub.add_parser("build", help="extract chunks and build a datastore")
    b.add_argument("--corpus", required=True)
    b.add_argument("--teacher", help="defaults to --base (self mode)")
    b.add_argument("--base", required=True)
    b.add_argument("--vocab")
    b.add_argument("--gamma", type=float)
    b.add_argument("--window", type=int)
    b.add_argument("--stride", type=int)
    b.add_argument("--context-len", dest="context_len", type=int)
    b.add_argument("--min-run-len", dest="min_run_len", type=int)
    b.add_argument("--spans", help="annotated spans file (expert mode)")
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_build)

    g = sub.add_parser("generate", help="chunk-interleaved generation")
    g.add_argument("--datastore")
    g.add_argument("--lm", required=True)
    g.add_argument("--vocab")
    g.add_argument("--eta", type=float)
    g.add_argument("--similarity-map", dest="similarity_map",
                   choices=["piecewise", "identity"])
    g.add_argument("--mode", choices=["greedy", "sample"])
    g.add_argument("--max-tokens", dest="max_tokens", type=int)
    g.add_argument("--temperature", type=float)
    g.add_argument("--seed", type=int)
    g.add_argument("--prompt-file", dest="prompt_file", required=True)
    g.set_defaults(func=cmd_generate)

    s = sub.add_parser("score", help="perplexity under the mixed distribution")
    s.add_argument("--datastore")
    s.add_argument("--lm", required=True)
    s.add_argument("--vocab")
    s.add_argument("--eta", type=float)
    s.add_argument("--similarity-map", dest="similarity_map",
                   choices=["piecewise", "identity"])
    s.add_argument("--input", required=True)
    s.add_argument("--seq-len", dest="seq_len", type=int)
    s.set_defaults(func=cmd_score)

    be = sub.add_parser("bench", help="efficiency benchmark against the base LM")
    be.add_argument("--datastore")
    be.add_argument("--lm", required=True)
    be.add_argument("--vocab")
    be.add_argument("--eta", type=float)
    be.add_argument("--mode", choices=["greedy", "sample"])
    be.add_argument("--max-tokens", dest="max_tokens", type=int)
    be.add_argument("--seed", type=int)
    be.add_argument("--repetitions", type=int)
    be.add_argument("--prompt-file", dest="prompt_file", required=True)
    be.set_defaults(func=cmd_bench)

    st = sub.add_parser("stats", help="datastore occupancy statistics")
    st.add_argument("--datastore", required=True)
    st.set_defaults(func=cmd_stats)

    e = sub.add_parser("entities", help="entity coverage of generated text")
    e.add_argument("--generations", required=True)
    e.add_argument("--entities", required=True)
    e.add_argument("--ignore-case", action="store_true")
    e.add_argument("--csv-out", dest="csv_out")
    e.set_defaults(func=cmd_entities)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except BridgeTransportError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_TRANSPORT
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DATA_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
