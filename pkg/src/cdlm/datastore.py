"""Trie-structured chunk datastore.

Chunks are grouped by entry token into one trie per entry token; a path from
the root spells a chunk, and the node where a stored chunk terminates holds
that occurrence's context vector and source. Retrieval scans only the trie of
the current entry token, which keeps the per-step search space to a tiny
fraction of the full store.

The store is immutable after build/deserialize and safe to share across
readers. Serialization is a little-endian binary format with bit-exact
round-trips; serializing the same store twice yields identical bytes.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from typing import BinaryIO, Iterator, Sequence

import numpy as np

from .extraction import ChunkRecord
from .vocab import Vocabulary

MAGIC = b"CDLM"
FORMAT_VERSION = 1


class DatastoreError(ValueError):
    pass


@dataclass
class KeyEntry:
    vector: np.ndarray  # float32[d]
    doc: int
    offset: int
    context_len: int


@dataclass
class TrieNode:
    token: int
    node_id: int
    children: dict[int, "TrieNode"] = field(default_factory=dict)
    keys: list[KeyEntry] = field(default_factory=list)


@dataclass
class EntryTokenTrie:
    root: TrieNode  # root token is the entry token; root itself holds no keys

    @property
    def entry_token(self) -> int:
        return self.root.token

    def walk(self) -> Iterator[tuple[TrieNode, tuple[int, ...]]]:
        """Preorder traversal yielding (node, chunk tokens from root)."""
        stack: list[tuple[TrieNode, tuple[int, ...]]] = [(self.root, ())]
        while stack:
            node, path = stack.pop()
            yield node, path
            for tok in sorted(node.children, reverse=True):
                stack.append((node.children[tok], path + (tok,)))

    def num_keys(self) -> int:
        return sum(len(node.keys) for node, _ in self.walk())

    def depth(self) -> int:
        return max((len(path) for _, path in self.walk()), default=0)


@dataclass(frozen=True)
class DatastoreStats:
    num_chunks: int
    num_tries: int
    avg_pct_per_trie: float  # mean over tries of trie size / num_chunks, in %
    max_depth: int


class ChunkDatastore:
    def __init__(self, d: int, vocab_fingerprint: str, meta: dict | None = None):
        self.d = d
        self.vocab_fingerprint = vocab_fingerprint
        self.meta = dict(meta or {})
        self.tries: dict[int, EntryTokenTrie] = {}
        self._next_node_id = 0
        self._dedup: dict[tuple[int, int, int], tuple[KeyEntry, int]] = {}
        self._scan_cache: dict[int, "_TrieScan"] = {}

    def _new_node(self, token: int) -> TrieNode:
        node = TrieNode(token=token, node_id=self._next_node_id)
        self._next_node_id += 1
        return node

    def insert(self, record: ChunkRecord) -> int:
        """Insert one record; returns the terminal node id.

        Re-inserting the same occurrence, identified by (doc, offset, chunk
        length), is a no-op unless the new record carries a longer stored
        context, in which case its vector replaces the old one in place.
        Deduplicated inserts create no trie nodes.
        """
        vec = np.asarray(record.vector, dtype=np.float32)
        if vec.shape != (self.d,):
            raise DatastoreError(
                f"record vector has dimension {vec.shape}, datastore expects ({self.d},)"
            )
        doc, offset = record.source
        dedup_key = (doc, offset, len(record.chunk))
        existing = self._dedup.get(dedup_key)
        if existing is not None:
            key, node_id = existing
            if len(record.context) > key.context_len:
                key.vector = vec
                key.context_len = len(record.context)
                self._scan_cache.pop(record.entry, None)
            return node_id
        self._scan_cache.pop(record.entry, None)
        trie = self.tries.get(record.entry)
        if trie is None:
            trie = EntryTokenTrie(root=self._new_node(record.entry))
            self.tries[record.entry] = trie
        node = trie.root
        for tok in record.chunk:
            child = node.children.get(tok)
            if child is None:
                child = self._new_node(tok)
                node.children[tok] = child
            node = child
        entry = KeyEntry(vector=vec, doc=doc, offset=offset,
                         context_len=len(record.context))
        node.keys.append(entry)
        self._dedup[dedup_key] = (entry, node.node_id)
        return node.node_id

    def lookup_trie(self, entry_token: int) -> EntryTokenTrie | None:
        return self.tries.get(entry_token)

    def num_chunks(self) -> int:
        return len(self._dedup)

    def stats(self) -> DatastoreStats:
        total = self.num_chunks()
        sizes = [trie.num_keys() for trie in self.tries.values()]
        if total == 0 or not sizes:
            return DatastoreStats(0, 0, 0.0, 0)
        avg_fraction = sum(s / total for s in sizes) / len(sizes)
        max_depth = max(trie.depth() for trie in self.tries.values())
        return DatastoreStats(total, len(self.tries), avg_fraction * 100.0, max_depth)

    def node_chunks(self) -> dict[int, tuple[int, ...]]:
        """node_id -> chunk tokens, for every keyed node."""
        out: dict[int, tuple[int, ...]] = {}
        for trie in self.tries.values():
            for node, path in trie.walk():
                if node.keys:
                    out[node.node_id] = path
        return out

    def trie_scan(self, entry_token: int) -> "_TrieScan | None":
        """Flat arrays over all keys of one trie, cached for repeated scans."""
        scan = self._scan_cache.get(entry_token)
        if scan is None:
            trie = self.tries.get(entry_token)
            if trie is None:
                return None
            scan = _TrieScan.from_trie(trie, self.d)
            self._scan_cache[entry_token] = scan
        return scan


@dataclass
class _TrieScan:
    vectors: np.ndarray  # float32 [n_keys, d]
    node_ids: np.ndarray  # int64 [n_keys]
    chunk_lens: np.ndarray  # int64 [n_keys]
    chunks: dict[int, tuple[int, ...]]  # node_id -> chunk tokens

    @staticmethod
    def from_trie(trie: EntryTokenTrie, d: int) -> "_TrieScan":
        vectors: list[np.ndarray] = []
        node_ids: list[int] = []
        chunk_lens: list[int] = []
        chunks: dict[int, tuple[int, ...]] = {}
        for node, path in trie.walk():
            if not node.keys:
                continue
            chunks[node.node_id] = path
            for key in node.keys:
                vectors.append(key.vector)
                node_ids.append(node.node_id)
                chunk_lens.append(len(path))
        mat = (np.stack(vectors).astype(np.float32) if vectors
               else np.zeros((0, d), dtype=np.float32))
        return _TrieScan(mat, np.asarray(node_ids, dtype=np.int64),
                         np.asarray(chunk_lens, dtype=np.int64), chunks)

    @property
    def n_keys(self) -> int:
        return len(self.node_ids)


def _record_sort_key(r: ChunkRecord):
    return (r.source[0], r.source[1], len(r.chunk), -len(r.context),
            r.entry, r.chunk, np.asarray(r.vector, dtype=np.float32).tobytes())


def build(records: Sequence[ChunkRecord], d: int, vocab: Vocabulary,
          meta: dict | None = None) -> ChunkDatastore:
    """Build a datastore from records with canonical, order-independent layout."""
    store = ChunkDatastore(d=d, vocab_fingerprint=vocab.fingerprint, meta=meta)
    vocab_size = len(vocab)
    for record in sorted(records, key=_record_sort_key):
        if not 0 <= record.entry < vocab_size or any(
                not 0 <= t < vocab_size for t in record.chunk):
            raise DatastoreError("record contains token ids outside the vocabulary")
        store.insert(record)
    return store


def _write_node(out: BinaryIO, node: TrieNode, d: int) -> None:
    out.write(struct.pack("<IIII", node.token, node.node_id,
                          len(node.children), len(node.keys)))
    for key in node.keys:
        vec = np.ascontiguousarray(key.vector, dtype="<f4")
        out.write(vec.tobytes())
        out.write(struct.pack("<IIH", key.doc, key.offset, key.context_len))
    for tok in sorted(node.children):
        _write_node(out, node.children[tok], d)


def serialize(store: ChunkDatastore, sink: BinaryIO) -> None:
    sink.write(MAGIC)
    sink.write(struct.pack("<II", FORMAT_VERSION, store.d))
    sink.write(bytes.fromhex(store.vocab_fingerprint))
    meta_bytes = json.dumps(store.meta, sort_keys=True,
                            separators=(",", ":")).encode("utf-8")
    sink.write(struct.pack("<I", len(meta_bytes)))
    sink.write(meta_bytes)
    sink.write(struct.pack("<I", len(store.tries)))
    for entry_token in sorted(store.tries):
        _write_node(sink, store.tries[entry_token].root, store.d)


def serialize_to_file(store: ChunkDatastore, path) -> None:
    buf = io.BytesIO()
    serialize(store, buf)
    with open(path, "wb") as f:
        f.write(buf.getvalue())


def _read_exact(src: BinaryIO, n: int) -> bytes:
    data = src.read(n)
    if len(data) != n:
        raise DatastoreError("truncated datastore file")
    return data


def _read_node(src: BinaryIO, d: int) -> TrieNode:
    token, node_id, n_children, n_keys = struct.unpack("<IIII", _read_exact(src, 16))
    node = TrieNode(token=token, node_id=node_id)
    for _ in range(n_keys):
        vec = np.frombuffer(_read_exact(src, 4 * d), dtype="<f4").copy()
        doc, offset, context_len = struct.unpack("<IIH", _read_exact(src, 10))
        node.keys.append(KeyEntry(vector=vec, doc=doc, offset=offset,
                                  context_len=context_len))
    for _ in range(n_children):
        child = _read_node(src, d)
        node.children[child.token] = child
    return node


def deserialize(source: BinaryIO) -> ChunkDatastore:
    if _read_exact(source, 4) != MAGIC:
        raise DatastoreError("bad magic bytes: not a chunk datastore file")
    version, d = struct.unpack("<II", _read_exact(source, 8))
    if version != FORMAT_VERSION:
        raise DatastoreError(f"unsupported datastore format version {version}")
    fingerprint = _read_exact(source, 32).hex()
    (meta_len,) = struct.unpack("<I", _read_exact(source, 4))
    meta = json.loads(_read_exact(source, meta_len).decode("utf-8"))
    (n_tries,) = struct.unpack("<I", _read_exact(source, 4))
    store = ChunkDatastore(d=d, vocab_fingerprint=fingerprint, meta=meta)
    max_id = -1
    for _ in range(n_tries):
        root = _read_node(source, d)
        store.tries[root.token] = EntryTokenTrie(root=root)
    for trie in store.tries.values():
        for node, path in trie.walk():
            max_id = max(max_id, node.node_id)
            for key in node.keys:
                store._dedup[(key.doc, key.offset, len(path))] = (key, node.node_id)
    store._next_node_id = max_id + 1
    return store


def deserialize_from_file(path) -> ChunkDatastore:
    with open(path, "rb") as f:
        return deserialize(f)
